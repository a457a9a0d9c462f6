import math

import numpy as np
import pytest

from voiceid import models
from voiceid.nncore import (
    LayerSpec,
    Network,
    NonFiniteGradientError,
    OptimState,
    Optimizer,
    ShapeError,
    cross_entropy,
    l2_loss,
    receptive_field,
)
from voiceid.nncore import checkpoint as ckpt
from voiceid.nncore import conv2d

from gradcheck import EPS, TOL, check_network, numeric_grad, rel_error

SEEDS = range(20)

LAYER_CASES = {
    "conv1d": ([LayerSpec("conv1d", "c", filters=4, kernel=(3, 3), stride=2, dilation=(1, 2))], (2, 3, 15)),
    "conv2d_dilated": ([LayerSpec("conv2d_dilated", "c", filters=3, kernel=(3, 5), dilation=(2, 1),
                                  padding="same_zero")], (2, 2, 9, 8)),
    "linear_2d": ([LayerSpec("linear", "l", filters=5)], (3, 4)),
    "linear_3d": ([LayerSpec("linear", "l", filters=5)], (2, 4, 6)),
    "sigmoid": ([LayerSpec("sigmoid", "s")], (2, 3, 5)),
    "global_avg_pool": ([LayerSpec("global_avg_pool", "p")], (2, 3, 7)),
    "tdnn_splice": ([LayerSpec("tdnn_splice", "s", offsets=(-2, 0, 2))], (2, 3, 9)),
    "replicate_pad": ([LayerSpec("replicate_pad", "p", pad=(3, 2))], (2, 3, 6)),
}


@pytest.mark.parametrize("case", sorted(LAYER_CASES))
@pytest.mark.parametrize("seed", SEEDS)
def test_layer_gradients(case, seed):
    specs, shape = LAYER_CASES[case]
    net = Network(specs, shape[1], seed=seed)
    rng = np.random.default_rng(seed)
    for p in net.params():
        p.value[...] = rng.standard_normal(p.value.shape)
    x = rng.standard_normal(shape)
    worst = check_network(net.forward, net.backward, net.params(), x, rng)
    assert max(worst.values()) < TOL, worst


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradient(seed):
    net = Network([LayerSpec("relu", "r")], 3, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 6))
    x += np.sign(x) * 0.01  # keep finite differences off the kink
    worst = check_network(net.forward, net.backward, [], x, rng)
    assert worst["input"] < TOL


@pytest.mark.parametrize("backend", [b for b in conv2d.BACKENDS if b != "compiled" or conv2d.compiled_available()])
def test_conv2d_gradients_both_backends(backend):
    prev = conv2d.get_backend()
    conv2d.set_backend(backend)
    try:
        for seed in range(5):
            spec = LayerSpec("conv2d_dilated", "c", filters=2, kernel=(5, 5), dilation=(2, 2), padding="same_zero")
            net = Network([spec], 2, seed=seed)
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((2, 2, 11, 12))
            worst = check_network(net.forward, net.backward, net.params(), x, rng)
            assert max(worst.values()) < TOL, worst
    finally:
        conv2d.set_backend(prev)


@pytest.mark.skipif(not conv2d.compiled_available(), reason="compiled kernels not built")
@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
def test_conv2d_backends_agree(dtype, tol):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 20, 17)).astype(dtype)
    w = rng.standard_normal((4, 3, 5, 3)).astype(dtype)
    b = rng.standard_normal(4).astype(dtype)
    results = {}
    prev = conv2d.get_backend()
    for be in conv2d.BACKENDS:
        conv2d.set_backend(be)
        out, xp = conv2d.forward(x, w, b, (4, 2), (8, 2))
        g = np.random.default_rng(1).standard_normal(out.shape).astype(dtype)
        results[be] = (out, *conv2d.backward(g, xp, w, (4, 2), (8, 2)))
    conv2d.set_backend(prev)
    for a, c in zip(results["compiled"], results["numpy"]):
        assert rel_error(a, c) < tol


def tiny_verifier(seed, n_speakers=3):
    cfg = models.VerifierConfig(n_speakers=n_speakers, n_bins=6, conv_filters=(5, 4, 4, 6), fc_sizes=(7, 5),
                                seed=seed)
    return models.build_verifier(cfg=cfg)


def generic_point(model, rng):
    # zero biases put dead units exactly on the ReLU kink; move off it
    for p in model.net.params():
        if p.name.endswith(".bias"):
            p.value[...] = rng.uniform(0.05, 0.3, p.value.shape)
    head = model.net.layers[model.net.index("head")] if any(l.name == "head" for l in model.net.layers) else None
    if head is not None:
        head.weight.value[...] = rng.standard_normal(head.weight.value.shape)


@pytest.mark.parametrize("seed", SEEDS)
def test_verifier_network_gradients(seed):
    m = tiny_verifier(seed)
    rng = np.random.default_rng(100 + seed)
    generic_point(m, rng)
    x = rng.random((2, 6, 16))
    worst = check_network(m.net.forward, m.net.backward, m.net.params(), x, rng, n_coords=6)
    assert max(worst.values()) < TOL, worst


@pytest.mark.parametrize("seed", SEEDS)
def test_masker_with_frozen_verifier_gradients(seed):
    v = tiny_verifier(seed)
    rng = np.random.default_rng(200 + seed)
    generic_point(v, rng)
    v.net.set_trainable(False)
    masker = models.build_masker(models.MaskerConfig(filters=2, seed=seed))
    generic_point(masker, rng)
    pipe = models.VoiceIdPipeline(masker, v)
    x = rng.random((2, 6, 14)) + 0.1
    worst = check_network(pipe.forward, pipe.backward, masker.net.params(), x, rng, n_coords=4)
    assert max(worst.values()) < TOL, worst


@pytest.mark.parametrize("seed", SEEDS)
def test_dae_network_gradients(seed):
    cfg = models.DaeConfig(n_bins=4, hidden=5, seed=seed)
    m = models.build_dae(cfg)
    rng = np.random.default_rng(300 + seed)
    generic_point(m, rng)
    x = rng.random((1, 4, 10))
    worst = check_network(m.net.forward, m.net.backward, m.net.params(), x, rng, n_coords=6)
    assert max(worst.values()) < TOL, worst


def test_identity_pointwise_conv():
    net = Network([LayerSpec("conv2d_dilated", "c", filters=1, kernel=(1, 1), padding="same_zero")], 1)
    net.layers[0].weight.value[...] = 1.0
    x = np.random.default_rng(0).standard_normal((1, 1, 4, 5))
    np.testing.assert_array_equal(net.forward(x), x)


def test_global_pool_constant():
    net = Network([LayerSpec("global_avg_pool", "p")], 3)
    out = net.forward(np.full((2, 3, 11), 2.5))
    np.testing.assert_allclose(out, 2.5)


def test_same_padding_dilated_shape():
    spec = LayerSpec("conv2d_dilated", "c", filters=1, kernel=(5, 5), dilation=(2, 2), padding="same_zero")
    net = Network([spec], 1)
    assert net.forward(np.zeros((1, 1, 257, 298))).shape == (1, 1, 257, 298)


def test_linear_weight_grad_is_outer_product():
    net = Network([LayerSpec("linear", "l", filters=3)], 4)
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    net.forward(x)
    net.backward(np.ones((1, 3)))
    np.testing.assert_array_equal(net.layers[0].weight.grad, np.outer(np.ones(3), x[0]))


def test_sigmoid_derivative_at_zero():
    net = Network([LayerSpec("sigmoid", "s")], 1)
    out = net.forward(np.zeros((1, 1)))
    assert out[0, 0] == 0.5
    assert net.backward(np.ones((1, 1)))[0, 0] == 0.25


def test_sigmoid_saturates_without_overflow():
    net = Network([LayerSpec("sigmoid", "s")], 1)
    with np.errstate(over="raise"):
        out = net.forward(np.array([[-1000.0, 1000.0]]))
    np.testing.assert_array_equal(out, [[0.0, 1.0]])


def test_backward_before_forward():
    net = Network([LayerSpec("linear", "l", filters=2)], 2)
    with pytest.raises(RuntimeError):
        net.backward(np.ones((1, 2)))


def test_shape_error_names_layer():
    net = Network([LayerSpec("linear", "fc_first", filters=2)], 3)
    with pytest.raises(ShapeError, match="fc_first"):
        net.forward(np.ones((1, 4)))


def test_cross_entropy_uniform():
    loss, _ = cross_entropy(np.zeros(4), 2)
    assert loss == pytest.approx(math.log(4))
    assert loss == pytest.approx(1.38629, abs=1e-5)


def test_cross_entropy_stable():
    loss, grad = cross_entropy(np.array([1000.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros(3), 3)


@pytest.mark.parametrize("seed", range(5))
def test_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal(6)
    _, grad = cross_entropy(logits, 4)
    sm = np.exp(logits - logits.max())
    sm /= sm.sum()
    onehot = np.eye(6)[4]
    np.testing.assert_allclose(grad, sm - onehot, atol=1e-12)
    num = numeric_grad(lambda: cross_entropy(logits, 4)[0], logits, range(6))
    assert rel_error(grad, num) < TOL


def test_l2_loss_values_and_gradient():
    a = np.random.default_rng(0).standard_normal((3, 4))
    assert l2_loss(a, a)[0] == 0.0
    assert l2_loss(a + 2, a)[0] == pytest.approx(4.0)
    t = np.zeros_like(a)
    _, grad = l2_loss(a, t)
    np.testing.assert_allclose(grad, 2 * a / a.size)
    num = numeric_grad(lambda: l2_loss(a, t)[0], a, range(a.size))
    assert rel_error(grad.ravel(), num) < TOL
    with pytest.raises(ValueError):
        l2_loss(a, a[:2])


def _params_with_grads(grads):
    net = Network([LayerSpec("linear", "l", filters=len(grads))], 1)
    w = net.layers[0].weight
    w.grad[:, 0] = grads
    return net, w


def test_clip_scales_to_norm():
    net, w = _params_with_grads([6.0, 8.0])  # norm 10
    before = w.value.copy()
    opt = Optimizer(OptimState("sgd", step_size=1.0, clip_norm=5.0), net.params())
    assert opt.step() == pytest.approx(10.0)
    np.testing.assert_allclose(w.grad[:, 0], [3.0, 4.0])
    np.testing.assert_allclose(before - w.value, w.grad)


def test_clip_leaves_small_norm():
    net, w = _params_with_grads([1.8, 2.4])  # norm 3
    opt = Optimizer(OptimState("sgd", step_size=1.0, clip_norm=5.0), net.params())
    opt.step()
    np.testing.assert_allclose(w.grad[:, 0], [1.8, 2.4])


def test_sgd_quadratic_trajectory():
    # f(w) = 0.5 * c * (w - m)^2 -> w_k - m = (1 - eta c)^k (w_0 - m)
    net = Network([LayerSpec("linear", "l", filters=1)], 1)
    w = net.layers[0].weight
    w.value[...] = 3.0
    c, m, eta = 2.0, -1.0, 0.1
    opt = Optimizer(OptimState("sgd", step_size=eta), [w])
    for k in range(1, 60):
        w.grad[...] = c * (w.value - m)
        opt.step()
        assert w.value[0, 0] == pytest.approx(m + (1 - eta * c) ** k * 4.0, rel=1e-12, abs=1e-14)
    assert abs(w.value[0, 0] - m) < 1e-5


def test_nonfinite_gradient_aborts():
    net, w = _params_with_grads([np.nan, 1.0])
    before = w.value.copy()
    opt = Optimizer(OptimState("adam", step_size=0.1), net.params())
    with pytest.raises(NonFiniteGradientError, match="l.weight"):
        opt.step()
    np.testing.assert_array_equal(w.value, before)


def test_frozen_params_untouched():
    net = Network([LayerSpec("linear", "a", filters=3), LayerSpec("linear", "b", filters=2)], 4, seed=1)
    frozen = net.layers[1]
    for p in frozen.params():
        p.trainable = False
    snapshot = [p.value.copy() for p in frozen.params()]
    opt = Optimizer(OptimState("adam", step_size=0.1, clip_norm=1.0), net.params())
    rng = np.random.default_rng(0)
    for _ in range(10):
        net.zero_grad()
        out = net.forward(rng.standard_normal((5, 4)))
        net.backward(out)
        assert np.any(frozen.weight.grad != 0)
        opt.step()
    for p, s in zip(frozen.params(), snapshot):
        assert p.value.tobytes() == s.tobytes()


def test_training_steps_deterministic():
    def run():
        net = Network([LayerSpec("linear", "a", filters=6), LayerSpec("relu", "r"),
                       LayerSpec("linear", "b", filters=3)], 4, seed=5)
        opt = Optimizer(OptimState("adam", step_size=0.01), net.params())
        rng = np.random.default_rng(3)
        for _ in range(20):
            net.zero_grad()
            loss, g = cross_entropy(net.forward(rng.standard_normal((8, 4))), rng.integers(0, 3, 8))
            net.backward(g)
            opt.step()
        return b"".join(p.value.tobytes() for p in net.params())

    assert run() == run()


def test_receptive_field_table():
    specs = models.masker_specs(models.MaskerConfig())
    assert receptive_field(specs[:6]) == (11, 11)
    assert receptive_field(specs) == (127, 71)
    assert receptive_field(models.masker_specs(models.MaskerConfig(literal_5x5=True))) == (127, 83)


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec("conv2d_dilated", "bad", dilation=(0, 1))
    with pytest.raises(ValueError):
        LayerSpec("batchnorm", "bad")


def test_checkpoint_round_trip_bytes(tmp_path):
    m = tiny_verifier(0)
    data = m.to_bytes(epoch=3)
    header, arrays = ckpt.loads(data)
    m2 = models.from_checkpoint(header, arrays)
    assert m2.to_bytes(epoch=3) == data


@pytest.mark.parametrize("cut", [3, 20, 200])
def test_checkpoint_corruption_reports_offset(cut):
    data = tiny_verifier(0).to_bytes()
    with pytest.raises(ckpt.CheckpointError, match="offset"):
        ckpt.loads(data[:cut])


def test_checkpoint_sidecar_hash(tmp_path):
    m = tiny_verifier(0)
    path = tmp_path / "v.ckpt"
    m.save(path)
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ckpt.CheckpointError, match="sha256"):
        ckpt.load(path)


@pytest.mark.parametrize("backend", [b for b in conv2d.BACKENDS if b != "compiled" or conv2d.compiled_available()])
def test_conv2d_accepts_fortran_ordered_input(backend):
    prev = conv2d.get_backend()
    conv2d.set_backend(backend)
    try:
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 1, 9, 7))
        w = rng.standard_normal((2, 1, 1, 3))
        b = np.zeros(2)
        ref, _ = conv2d.forward(x, w, b, (1, 1), (0, 1))
        out, _ = conv2d.forward(np.asfortranarray(x), w, b, (1, 1), (0, 1))
        np.testing.assert_array_equal(out, ref)
    finally:
        conv2d.set_backend(prev)
