"""Cosine scoring, EER, minimum DCF and per-condition reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp

DCF_PRIORS = (0.01, 0.001)


class MissingAudioError(KeyError):
    pass


@dataclass(frozen=True)
class DcfParams:
    p_target: float
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_target < 1:
            raise ValueError("p_target must be in (0, 1)")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray
    enroll: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError("scores and labels must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def __len__(self):
        return self.scores.size

    def check_both_classes(self):
        if self.labels.all() or not self.labels.any():
            raise ValueError("need at least one target and one nontarget score")

    def write(self, path):
        with open(path, "w") as fh:
            for i in range(len(self)):
                e = self.enroll[i] if self.enroll else f"e{i}"
                t = self.test[i] if self.test else f"t{i}"
                fh.write(f"{e} {t} {self.scores[i]:.17g} {'target' if self.labels[i] else 'nontarget'}\n")

    @classmethod
    def read(cls, path) -> "ScoreSet":
        enroll, test, scores, labels = [], [], [], []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                e, t, s, lab = line.split()
                enroll.append(e)
                test.append(t)
                scores.append(float(s))
                labels.append(lab == "target")
        return cls(np.array(scores), np.array(labels), enroll, test)


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def operating_points(s: ScoreSet):
    """Miss and false-alarm rates at every distinct threshold.

    A trial is accepted when ``score >= threshold``. Thresholds are each
    distinct score (the lowest one accepts everything) followed by a
    reject-all point, so ``p_miss`` rises from 0 to 1 and ``p_fa`` falls
    from 1 to 0.
    """
    s.check_both_classes()
    order = np.argsort(s.scores, kind="mergesort")
    scores = s.scores[order]
    labels = s.labels[order]
    n_tar = int(labels.sum())
    n_non = labels.size - n_tar
    cum_tar = np.concatenate([[0], np.cumsum(labels)])
    cum_non = np.concatenate([[0], np.cumsum(~labels)])
    _, first = np.unique(scores, return_index=True)
    misses = np.append(cum_tar[first], n_tar)
    fas = np.append(n_non - cum_non[first], 0)
    return misses / n_tar, fas / n_non


def eer(s: ScoreSet) -> float:
    """Equal error rate, interpolated between the two straddling points.

    With ``d = p_miss - p_fa`` at adjacent points ``i`` (d <= 0) and ``k``
    (d >= 0) the crossing is at ``lam = -d_i / (d_k - d_i)`` and the rate is
    ``p_fa_i + lam * (p_fa_k - p_fa_i)``.
    """
    p_miss, p_fa = operating_points(s)
    d = p_miss - p_fa
    k = int(np.argmax(d >= 0))
    if d[k] == 0 or k == 0:
        return float(p_fa[k])
    i = k - 1
    lam = -d[i] / (d[k] - d[i])
    return float(p_fa[i] + lam * (p_fa[k] - p_fa[i]))


def min_dcf(s: ScoreSet, p: DcfParams, cap: bool = True) -> float:
    """Minimum normalised detection cost over all thresholds."""
    p_miss, p_fa = operating_points(s)
    cost = p.c_miss * p_miss * p.p_target + p.c_fa * p_fa * (1 - p.p_target)
    norm = min(p.c_miss * p.p_target, p.c_fa * (1 - p.p_target))
    value = float(cost.min() / norm)
    return min(value, 1.0) if cap else value


def dcf_avg(s: ScoreSet, priors=DCF_PRIORS) -> float:
    """Mean of the minimum DCFs at the given target priors."""
    return float(np.mean([min_dcf(s, DcfParams(p)) for p in priors]))


def det_points(s: ScoreSet):
    p_miss, p_fa = operating_points(s)
    return p_fa, p_miss


def write_det_csv(path, s: ScoreSet):
    p_fa, p_miss = det_points(s)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p_fa", "p_miss"])
        for a, b in zip(p_fa, p_miss):
            w.writerow([f"{a:.6f}", f"{b:.6f}"])


# scoring pipeline -------------------------------------------------------------

class IdentityEnhancer:
    """Pass-through front end; its column must equal the no-enhancement column."""

    kind = "identity"


def enhancement_name(enhancer) -> str:
    return "none" if enhancer is None else enhancer.kind


def enhance_features(enhancer, values):
    """Apply a masker or DAE to compressed features (batch or single)."""
    if enhancer is None or enhancer.kind == "identity":
        return values
    if enhancer.kind == "masker":
        return enhancer.apply_mask(values)[1]
    if enhancer.kind == "dae":
        return enhancer.enhance(values)
    raise ValueError(f"unsupported enhancer {enhancer.kind!r}")


def features_for(audio, utt_ids, cfg=dsp.DEFAULT_STFT) -> dict[str, np.ndarray]:
    """Compressed magnitude features for each utterance id."""
    missing = [u for u in utt_ids if u not in audio]
    if missing:
        raise MissingAudioError(f"no audio for utterances: {', '.join(sorted(missing))}")
    return {u: dsp.magnitude_spectrogram(audio[u], cfg).values for u in utt_ids}


def embed_all(verifier, feats: dict[str, np.ndarray], enhancer=None, batch_size=16) -> dict[str, np.ndarray]:
    """Embed every feature matrix, batching utterances of equal length."""
    by_len: dict[int, list[str]] = {}
    for u in sorted(feats):
        by_len.setdefault(feats[u].shape[1], []).append(u)
    out = {}
    for length in sorted(by_len):
        ids = by_len[length]
        for start in range(0, len(ids), batch_size):
            chunk = ids[start:start + batch_size]
            x = np.stack([feats[u] for u in chunk]).astype(verifier.dtype)
            x = enhance_features(enhancer, x)
            emb = verifier.embed(x)
            for u, e in zip(chunk, emb):
                out[u] = np.asarray(e, dtype=np.float64)
    return out


def score_embeddings(trials, embeddings, provenance=None) -> ScoreSet:
    scores = [cosine(embeddings[t.enroll], embeddings[t.test]) for t in trials]
    return ScoreSet(np.array(scores), np.array([t.target for t in trials]),
                    [t.enroll for t in trials], [t.test for t in trials], dict(provenance or {}))


def score_trials(verifier, trials, audio=None, enhancer=None, features=None, cfg=dsp.DEFAULT_STFT) -> ScoreSet:
    """STFT -> compress -> optional enhancement -> embed -> cosine per trial.

    Pass ``features`` (utt id -> compressed magnitudes) to skip the STFT.
    """
    utts = sorted({t.enroll for t in trials} | {t.test for t in trials})
    if features is None:
        features = features_for(audio or {}, utts, cfg)
    else:
        missing = [u for u in utts if u not in features]
        if missing:
            raise MissingAudioError(f"no features for utterances: {', '.join(missing)}")
        features = {u: features[u] for u in utts}
    emb = embed_all(verifier, features, enhancer)
    return score_embeddings(trials, emb, {"enhancement": enhancement_name(enhancer)})


def frame_sim_matrix(verifier, u1, u2) -> np.ndarray:
    """Cosine similarity between last-conv-layer frame activations.

    Rows index frames of ``u1``, columns frames of ``u2`` (at the conv
    output rate). All-zero frames get similarity 0.
    """
    def unit_columns(s):
        f = np.asarray(verifier.frame_features(s), dtype=np.float64)
        n = np.linalg.norm(f, axis=0)
        return f / np.where(n > 0, n, 1.0)

    a = unit_columns(u1)
    b = unit_columns(u2)
    return np.clip(a.T @ b, -1.0, 1.0)


# reports ----------------------------------------------------------------------

@dataclass
class ConditionRow:
    category: str
    snr: str
    results: dict  # enhancement -> (eer, dcf) or None when the cell is absent


@dataclass
class ConditionReport:
    columns: list[str]
    rows: list[ConditionRow] = field(default_factory=list)

    def add(self, category, snr, results):
        self.rows.append(ConditionRow(category, str(snr), dict(results)))

    def get(self, category, snr, column):
        for r in self.rows:
            if r.category == category and r.snr == str(snr):
                return r.results.get(column)
        raise KeyError((category, snr))

    def format_table(self) -> str:
        header = ["Type", "SNR"]
        for c in self.columns:
            header += [f"{c} EER", f"{c} DCF"]
        lines = [header]
        for r in self.rows:
            line = [r.category, r.snr]
            for c in self.columns:
                v = r.results.get(c)
                line += ["absent", "absent"] if v is None else [f"{100 * v[0]:.2f}", f"{v[1]:.3f}"]
            lines.append(line)
        widths = [max(len(l[i]) for l in lines) for i in range(len(header))]
        return "\n".join("  ".join(x.rjust(w) for x, w in zip(l, widths)) for l in lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["type", "snr"]
            for c in self.columns:
                header += [f"{c}_eer_percent", f"{c}_dcf"]
            w.writerow(header)
            for r in self.rows:
                line = [r.category, r.snr]
                for c in self.columns:
                    v = r.results.get(c)
                    line += ["", ""] if v is None else [f"{100 * v[0]:.2f}", f"{v[1]:.3f}"]
                w.writerow(line)

    def write(self, out_dir, stem="report"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.txt").write_text(self.format_table())
        self.write_csv(out_dir / f"{stem}.csv")
