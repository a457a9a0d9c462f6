import numpy as np
import pytest

from voiceid import dsp, models
from voiceid.nncore import receptive_field


def conv_params(cin, cout, kh, kw):
    return cin * cout * kh * kw + cout


def test_masker_parameter_count():
    m = models.build_masker()
    f = 48
    expected = conv_params(1, f, 1, 7) + conv_params(f, f, 7, 1) + conv_params(f, f, 5, 5)
    expected += 3 * conv_params(f, f, 5, 1) + 4 * conv_params(f, f, 5, 5) + conv_params(f, 1, 1, 1)
    assert m.net.param_count() == expected


def test_verifier_parameter_count():
    m = models.build_verifier(n_speakers=10)
    expected = (257 * 5 * 1000 + 1000) + (1000 * 7 * 1000 + 1000) + (1000 * 1000 + 1000) + (1000 * 1500 + 1500)
    expected += (1500 * 1500 + 1500) + (1500 * 600 + 600) + (600 * 10 + 10)
    assert m.net.param_count() == expected


def test_verifier_shapes_and_zero_head():
    cfg = models.VerifierConfig(n_speakers=4, n_bins=12, conv_filters=(8, 8, 8, 10), fc_sizes=(9, 6))
    v = models.build_verifier(cfg=cfg)
    x = np.random.default_rng(0).random((3, 12, 40))
    logits = v.logits(x)
    assert logits.shape == (3, 4)
    np.testing.assert_array_equal(logits, 0.0)
    assert v.embed(x[0]).shape == (6,)
    assert v.embed(x).shape == (3, 6)
    # conv1 k=5, conv2 k=7 stride 2 -> 40 -> 36 -> 15 frames
    assert v.frame_features(x[0]).shape == (10, 15)
    assert v.min_frames == receptive_field(models.verifier_specs(cfg))[1] == 11


def test_verifier_rejects_short_input():
    v = models.build_verifier(cfg=models.VerifierConfig(n_speakers=2, n_bins=4, conv_filters=(2, 2, 2, 2),
                                                        fc_sizes=(2, 2)))
    with pytest.raises(ValueError, match="receptive field"):
        v.logits(np.zeros((4, 10)))


def test_embedding_length_invariant_shape():
    v = models.build_verifier(cfg=models.VerifierConfig(n_speakers=3, n_bins=6, conv_filters=(4, 4, 4, 5),
                                                        fc_sizes=(5, 3)))
    rng = np.random.default_rng(1)
    assert v.embed(rng.random((6, 20))).shape == v.embed(rng.random((6, 97))).shape == (3,)


def test_masker_shapes_and_mask_range():
    m = models.build_masker(models.MaskerConfig(filters=4, seed=3))
    x = np.random.default_rng(0).random((2, 30, 25)) * 3
    mask, masked = m.apply_mask(x)
    assert mask.shape == x.shape
    assert np.all((mask > 0) & (mask < 1))
    np.testing.assert_array_equal(masked, mask * x)
    assert np.all(masked <= x)


def test_masker_final_bias_sets_initial_mask():
    m = models.build_masker(models.MaskerConfig(filters=2, final_bias=3.0))
    conv11 = m.net.layers[m.net.index("conv11")]
    conv11.weight.value[...] = 0
    np.testing.assert_allclose(m.mask(np.ones((5, 6))), 1 / (1 + np.exp(-3.0)))


def test_masker_preserves_spectrogram_type():
    m = models.build_masker(models.MaskerConfig(filters=2))
    s = dsp.Spectrogram(np.ones((8, 9)), 0.3)
    _, masked = m.apply_mask(s)
    assert isinstance(masked, dsp.Spectrogram)
    assert masked.compression_exponent == 0.3


def test_dae_shapes_and_clamp():
    d = models.build_dae(models.DaeConfig(n_bins=10, hidden=7))
    assert d.config.context == 25
    assert receptive_field(models.dae_specs(d.config))[1] == 25
    x = np.random.default_rng(0).random((10, 3))  # shorter than the context: replicate padding covers it
    assert d.predict(x).shape == (10, 3)
    out = d.enhance(x)
    assert out.shape == (10, 3) and np.all(out >= 0)


def test_dae_layer_layout():
    specs = models.dae_specs(models.DaeConfig())
    splices = [s.offsets for s in specs if s.kind == "tdnn_splice"]
    # single-offset {0} splices are identities and are not materialised
    assert splices == [(-2, 0, 2)] * 6
    linears = [s.filters for s in specs if s.kind == "linear"]
    assert linears == [1000] * 8 + [257]
    assert specs[0].kind == "replicate_pad" and specs[0].pad == (12, 12)


def test_masker_table_geometry():
    specs = models.masker_specs(models.MaskerConfig())
    convs = [s for s in specs if s.kind == "conv2d_dilated"]
    assert len(convs) == 11
    assert all(s.filters == 48 for s in convs[:10]) and convs[-1].filters == 1
    assert [s.kernel for s in convs[3:6]] == [(5, 1)] * 3
    assert [s.dilation for s in convs[6:10]] == [(1, 1), (2, 2), (4, 4), (8, 8)]
    literal = models.masker_specs(models.MaskerConfig(literal_5x5=True))
    assert [s.kernel for s in literal if s.kind == "conv2d_dilated"][3:6] == [(5, 5)] * 3


def test_pipeline_matches_manual_composition():
    v = models.build_verifier(cfg=models.VerifierConfig(n_speakers=3, n_bins=6, conv_filters=(4, 4, 4, 5),
                                                        fc_sizes=(5, 4)))
    m = models.build_masker(models.MaskerConfig(filters=2))
    x = np.random.default_rng(0).random((2, 6, 20))
    pipe = models.VoiceIdPipeline(m, v)
    np.testing.assert_array_equal(pipe.forward(x), v.logits(m.apply_mask(x)[1]))


def test_checkpoint_round_trip_file(tmp_path):
    m = models.build_masker(models.MaskerConfig(filters=3, seed=5))
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    m.save(p1, epoch=2)
    loaded, header, _ = models.load_model(p1)
    loaded.save(p2, **header["meta"])
    assert p1.read_bytes() == p2.read_bytes()
    assert (tmp_path / "a.ckpt.sha256").exists()


def test_inspect_report_lists_context():
    text = models.build_masker(models.MaskerConfig(filters=2)).inspect()
    assert "127x71" in text and "conv11" in text


def test_enhance_to_waveform_identity():
    rng = np.random.default_rng(0)
    w = dsp.Waveform(rng.standard_normal(8000))
    spec = dsp.stft(w)
    feat = dsp.compress(dsp.Spectrogram(spec.magnitude), 0.3)
    y = models.enhance_to_waveform(feat, spec)
    ref = dsp.istft_with_phase(spec.magnitude, spec.phase)
    np.testing.assert_allclose(y.samples, ref.samples, atol=1e-9)
    with pytest.raises(ValueError):
        models.enhance_to_waveform(np.ones((257, 3)), spec)
