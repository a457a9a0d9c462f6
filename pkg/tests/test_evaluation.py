import numpy as np
import pytest

from voiceid import evaluation as ev
from voiceid import models
from voiceid.data import Trial


def brute_force_points(scores, labels):
    """O(n^2) enumeration: accept when score >= t, thresholds ascending, then reject-all."""
    tar = [s for s, l in zip(scores, labels) if l]
    non = [s for s, l in zip(scores, labels) if not l]
    thresholds = sorted(set(scores.tolist())) + [float("inf")]
    pts = []
    for t in thresholds:
        miss = sum(1 for s in tar if s < t)
        fa = sum(1 for s in non if s >= t)
        pts.append((miss / len(tar), fa / len(non)))
    return pts


def brute_force_eer(scores, labels):
    pts = brute_force_points(scores, labels)
    prev = None
    for pm, pf in pts:
        if pm >= pf:
            if prev is None or pm == pf:
                return pf
            d_i = prev[0] - prev[1]
            d_k = pm - pf
            lam = -d_i / (d_k - d_i)
            return prev[1] + lam * (pf - prev[1])
        prev = (pm, pf)
    raise AssertionError("unreachable: reject-all point has p_miss = 1")


def brute_force_dcf(scores, labels, p):
    best = min(pm * p + pf * (1 - p) for pm, pf in brute_force_points(scores, labels))
    return min(best / min(p, 1 - p), 1.0)


def random_set(rng, n=200):
    labels = rng.random(n) < rng.uniform(0.2, 0.8)
    labels[0], labels[1] = True, False
    scores = rng.standard_normal(n) + labels * rng.uniform(0, 3)
    if rng.random() < 0.5:
        scores = np.round(scores, 1)  # plenty of ties
    return ev.ScoreSet(scores, labels)


def test_metric_oracle_equivalence():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        s = random_set(rng)
        assert ev.eer(s) == brute_force_eer(s.scores, s.labels)
        for p in (0.01, 0.001, 0.5):
            assert ev.min_dcf(s, ev.DcfParams(p)) == pytest.approx(brute_force_dcf(s.scores, s.labels, p),
                                                                    rel=1e-12, abs=1e-15)


def test_eer_hand_example():
    s = ev.ScoreSet([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0])
    assert ev.eer(s) == pytest.approx(1 / 3)


def test_eer_interpolates():
    # straddling points (1/2, 2/3) and (1/2, 1/3): halfway along p_fa
    s = ev.ScoreSet([0.6, 0.3, 0.5, 0.4, 0.1], [1, 1, 0, 0, 0])
    assert ev.eer(s) == brute_force_eer(s.scores, s.labels) == pytest.approx(0.5)


def test_perfect_and_inverted_separation():
    s = ev.ScoreSet([3.0, 2.0, 1.0, 0.0], [1, 1, 0, 0])
    assert ev.eer(s) == 0.0
    assert ev.min_dcf(s, ev.DcfParams(0.01)) == 0.0
    inv = ev.ScoreSet([0.0, 1.0, 2.0, 3.0], [1, 1, 0, 0])
    assert ev.eer(inv) == 1.0
    assert ev.min_dcf(inv, ev.DcfParams(0.01)) == 1.0


def test_constant_scores():
    s = ev.ScoreSet(np.zeros(10), [1] * 5 + [0] * 5)
    assert ev.eer(s) == 0.5
    assert ev.min_dcf(s, ev.DcfParams(0.01)) == 1.0


def test_dcf_cap_switch():
    s = ev.ScoreSet([0.0, 1.0, 2.0, 3.0], [1, 1, 0, 0])
    assert ev.min_dcf(s, ev.DcfParams(0.5), cap=False) == pytest.approx(1.0)
    assert ev.min_dcf(s, ev.DcfParams(0.5)) == 1.0


def test_single_class_rejected():
    with pytest.raises(ValueError):
        ev.eer(ev.ScoreSet([1.0, 2.0], [1, 1]))
    with pytest.raises(ValueError):
        ev.DcfParams(0.0)
    with pytest.raises(ValueError):
        ev.ScoreSet([np.nan, 1.0], [1, 0])


@pytest.mark.parametrize("seed", range(10))
def test_affine_and_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    s = random_set(rng)
    a, b = rng.uniform(0.5, 4), rng.uniform(-3, 3)
    aff = ev.ScoreSet(a * s.scores + b, s.labels)
    for p in (0.01, 0.001):
        assert ev.min_dcf(aff, ev.DcfParams(p)) == ev.min_dcf(s, ev.DcfParams(p))
    mono = ev.ScoreSet(np.arctan(s.scores) ** 3, s.labels)
    assert ev.eer(mono) == ev.eer(s)


def test_dcf_avg_is_mean_of_priors():
    s = random_set(np.random.default_rng(5))
    expected = (ev.min_dcf(s, ev.DcfParams(0.01)) + ev.min_dcf(s, ev.DcfParams(0.001))) / 2
    assert ev.dcf_avg(s) == pytest.approx(expected)


def test_cosine():
    assert ev.cosine([1, 0], [0, 1]) == 0.0
    assert ev.cosine([1, 2], [2, 4]) == pytest.approx(1.0)
    assert ev.cosine([1, 2], [-1, -2]) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        ev.cosine([0, 0], [1, 1])
    with pytest.raises(ValueError):
        ev.cosine([1, 0], [1, 0, 0])


def test_scoreset_round_trip(tmp_path):
    s = random_set(np.random.default_rng(1), 30)
    s.write(tmp_path / "s.txt")
    back = ev.ScoreSet.read(tmp_path / "s.txt")
    np.testing.assert_array_equal(back.scores, s.scores)
    np.testing.assert_array_equal(back.labels, s.labels)


def test_det_csv(tmp_path):
    s = random_set(np.random.default_rng(2), 50)
    ev.write_det_csv(tmp_path / "det.csv", s)
    rows = (tmp_path / "det.csv").read_text().splitlines()
    assert rows[0] == "p_fa,p_miss"
    assert rows[1] == "1.000000,0.000000" and rows[-1] == "0.000000,1.000000"


def small_verifier():
    cfg = models.VerifierConfig(n_speakers=3, n_bins=8, conv_filters=(6, 6, 6, 8), fc_sizes=(6, 5), seed=1)
    v = models.build_verifier(cfg=cfg)
    for p in v.net.params():
        if p.name.endswith(".bias"):
            p.value[...] = 0.1
    return v


def test_frame_sim_matrix_symmetric_with_unit_diagonal():
    v = small_verifier()
    x = np.random.default_rng(0).random((8, 40))
    m = ev.frame_sim_matrix(v, x, x)
    np.testing.assert_allclose(m, m.T, atol=1e-12)
    norms = np.linalg.norm(v.frame_features(x), axis=0)
    np.testing.assert_allclose(np.diag(m)[norms > 0], 1.0)
    assert np.all(m <= 1) and np.all(m >= -1)


def test_score_trials_identity_and_missing():
    v = small_verifier()
    rng = np.random.default_rng(0)
    feats = {u: rng.random((8, 30)) for u in ("a1", "a2", "b1")}
    trials = [Trial("a1", "a1", True), Trial("a1", "b1", False)]
    s = ev.score_trials(v, trials, features=feats)
    assert s.scores[0] == pytest.approx(1.0)
    assert s.provenance["enhancement"] == "none"
    with pytest.raises(ev.MissingAudioError):
        ev.score_trials(v, [Trial("a1", "zz", False)], features=feats)


def test_report_format():
    r = ev.ConditionReport(["none", "masker"])
    r.add("noise", 0, {"none": (0.1234, 0.5), "masker": None})
    text = r.format_table()
    assert "12.34" in text and "0.500" in text and "absent" in text
    assert r.get("noise", "0", "none") == (0.1234, 0.5)


def test_identity_enhancer_matches_none():
    v = small_verifier()
    rng = np.random.default_rng(3)
    feats = {f"u{i}": rng.random((8, 25)) for i in range(6)}
    trials = [Trial(f"u{i}", f"u{j}", (i % 2) == (j % 2)) for i in range(6) for j in range(i + 1, 6)]
    a = ev.score_trials(v, trials, features=feats)
    b = ev.score_trials(v, trials, features=feats, enhancer=ev.IdentityEnhancer())
    np.testing.assert_array_equal(a.scores, b.scores)
    assert b.provenance["enhancement"] == "identity"
