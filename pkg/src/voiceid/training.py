"""Verifier pre-training, VoiceID-loss masker training and the two-phase DAE."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import evaluation, models
from .data import SEGMENT_FRAMES, sample_segment
from .nncore import OptimState, Optimizer, cross_entropy, l2_loss
from .nncore import checkpoint as ckpt

log = logging.getLogger(__name__)

DATASETS = ("clean", "noisy", "both")
DAE_PHASE2_STEP = 0.00375
DAE_PHASE2_DECAY = 0.75


class DivergenceError(FloatingPointError):
    pass


class ProtocolError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    step_size: float = 1e-3
    clip_norm: float | None = None
    dataset: str = "clean"
    segment_frames: int = SEGMENT_FRAMES
    dtype: str = "float32"
    # DAE schedule
    phase1_epochs: int = 10
    phase1_step_size: float = 0.05
    phase2_epochs: int = 10
    phase2_step_size: float = DAE_PHASE2_STEP
    phase2_decay: float = DAE_PHASE2_DECAY

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        if self.epochs < 1 or self.batch_size < 1 or self.segment_frames < 1:
            raise ValueError("epochs, batch_size and segment_frames must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        raw = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {line!r}")
            k, v = (p.strip() for p in line.split("=", 1))
            raw[k] = v
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "TrainConfig":
        kinds = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in raw.items():
            if k not in kinds:
                raise ValueError(f"unknown config key {k!r}")
            default = kinds[k].default
            if isinstance(v, str):
                if v.lower() in ("none", ""):
                    v = None
                elif isinstance(default, bool):
                    v = v.lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    v = int(v)
                elif isinstance(default, float) or k == "clip_norm":
                    v = float(v)
            kwargs[k] = v
        return cls(**kwargs)


@dataclass
class CheckpointPolicy:
    criterion: str  # "best_validation_eer" | "best_dev_l2" | "last"

    def __post_init__(self):
        if self.criterion not in ("best_validation_eer", "best_dev_l2", "last"):
            raise ValueError(f"unknown criterion {self.criterion!r}")


def select_best(values) -> int:
    """Index of the smallest value; ties go to the earliest."""
    values = list(values)
    if not values:
        raise ValueError("no values to select from")
    best = 0
    for i, v in enumerate(values):
        if v < values[best]:
            best = i
    return best


def params_digest(model) -> str:
    h = hashlib.sha256()
    for name, arr in model.param_arrays().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class TrainResult:
    model: object
    history: list[dict] = field(default_factory=list)
    selected_epoch: int = -1
    extra: dict = field(default_factory=dict)


class RunDir:
    """Config snapshot, metrics log, per-epoch checkpoints and a selection marker."""

    def __init__(self, path, cfg: TrainConfig, resume=False):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "config.txt").write_text(cfg.to_text())
        self.metrics = self.path / "metrics.jsonl"
        if not resume and self.metrics.exists():
            self.metrics.unlink()

    def log(self, record: dict):
        with open(self.metrics, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def checkpoint_path(self, tag: str) -> Path:
        return self.path / f"{tag}.ckpt"

    def save(self, model, tag, opt=None, **meta) -> str:
        extra = opt.state_arrays() if opt is not None else None
        return model.save(self.checkpoint_path(tag), extra=extra, **meta)

    def mark_selected(self, tag: str, digest: str, **info):
        rec = {"checkpoint": f"{tag}.ckpt", "sha256": digest, **info}
        (self.path / "selected.json").write_text(json.dumps(rec, sort_keys=True, indent=1) + "\n")


def _check_finite(loss, where):
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss during {where}")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _make_optimizer(cfg: TrainConfig, params):
    return Optimizer(OptimState(kind=cfg.optimizer, step_size=cfg.step_size, clip_norm=cfg.clip_norm), params)


def _resume(model, opt, path):
    header, arrays = ckpt.load(path)
    model.load_arrays(arrays)
    opt.load_state_arrays(arrays)
    return int(header["meta"]["epoch"]) + 1


def train_verifier(cfg: TrainConfig, examples, n_speakers: int, model_cfg: models.VerifierConfig | None = None,
                   run_dir=None, resume=None) -> TrainResult:
    """Cross-entropy training on random fixed-length segments.

    ``examples`` is a list of ``(features, label)`` with features shaped
    (bins, frames). A fresh crop of every utterance is drawn each epoch.
    """
    if n_speakers < 2:
        raise ValueError("need at least 2 speakers")
    base = model_cfg or models.VerifierConfig()
    model = models.build_verifier(n_speakers, models.VerifierConfig.from_dict(
        {**base.to_dict(), "n_speakers": n_speakers, "seed": cfg.seed, "dtype": cfg.dtype}))
    dtype = model.dtype
    opt = _make_optimizer(cfg, model.net.params())
    run = RunDir(run_dir, cfg, resume=resume is not None) if run_dir else None
    start = _resume(model, opt, resume) if resume else 0
    history = []
    for epoch in range(start, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 1, epoch])
        total, correct, seen = 0.0, 0, 0
        for idx in _batches(len(examples), cfg.batch_size, rng):
            x = np.stack([sample_segment(examples[i][0], cfg.segment_frames, rng) for i in idx]).astype(dtype)
            y = np.array([examples[i][1] for i in idx])
            logits = model.net.forward(x)
            loss, grad = cross_entropy(logits, y)
            _check_finite(loss, f"verifier epoch {epoch}")
            model.net.zero_grad()
            model.net.backward(grad)
            opt.step()
            total += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
            seen += len(idx)
        rec = {"epoch": epoch, "loss": total / seen, "accuracy": correct / seen, "step_size": opt.step_size}
        history.append(rec)
        log.info("verifier epoch %d loss %.4f acc %.3f", epoch, rec["loss"], rec["accuracy"])
        if run:
            run.log(rec)
            run.save(model, f"epoch-{epoch:03d}", opt, epoch=epoch)
    selected = cfg.epochs - 1
    if run:
        tag = f"epoch-{selected:03d}"
        run.mark_selected(tag, ckpt.file_digest(run.checkpoint_path(tag)), epoch=selected, criterion="last")
    return TrainResult(model, history, selected)


def validation_eer(verifier, trials, features, enhancer=None) -> float:
    """EER of a trial list scored with an optional enhancement front end."""
    scores = evaluation.score_trials(verifier, trials, features=features, enhancer=enhancer)
    return evaluation.eer(scores)


def evaluate_epoch(verifier, trials, features, enhancer=None) -> float:
    return validation_eer(verifier, trials, features, enhancer)


def train_masker(cfg: TrainConfig, examples, verifier, validation=None,
                 masker_cfg: models.MaskerConfig | None = None, run_dir=None, resume=None) -> TrainResult:
    """Train the masker through a frozen verifier with cross-entropy only.

    ``validation`` is ``(trials, features)``; the epoch with the lowest EER
    (earliest on ties) is kept. Without validation the last epoch is kept.
    """
    trainable = [p.name for p in verifier.net.params() if p.trainable]
    if trainable:
        raise ProtocolError(f"verifier parameters are not frozen: {', '.join(trainable[:3])}...")
    before = params_digest(verifier)
    base = masker_cfg or models.MaskerConfig()
    masker = models.build_masker(models.MaskerConfig.from_dict(
        {**base.to_dict(), "seed": cfg.seed, "dtype": cfg.dtype}))
    if masker.dtype != verifier.dtype:
        raise ValueError(f"masker dtype {masker.dtype} != verifier dtype {verifier.dtype}")
    pipe = models.VoiceIdPipeline(masker, verifier)
    opt = _make_optimizer(cfg, masker.net.params())
    run = RunDir(run_dir, cfg, resume=resume is not None) if run_dir else None
    start = _resume(masker, opt, resume) if resume else 0
    history, snapshots = [], {}
    for epoch in range(start, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 2, epoch])
        total, correct, seen = 0.0, 0, 0
        for idx in _batches(len(examples), cfg.batch_size, rng):
            x = np.stack([sample_segment(examples[i][0], cfg.segment_frames, rng) for i in idx]).astype(masker.dtype)
            y = np.array([examples[i][1] for i in idx])
            logits = pipe.forward(x)
            loss, grad = cross_entropy(logits, y)
            _check_finite(loss, f"masker epoch {epoch}")
            masker.net.zero_grad()
            verifier.net.zero_grad()
            pipe.backward(grad)
            opt.step()
            total += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
            seen += len(idx)
        rec = {"epoch": epoch, "loss": total / seen, "accuracy": correct / seen, "step_size": opt.step_size}
        if validation is not None:
            rec["val_eer"] = validation_eer(verifier, validation[0], validation[1], masker)
        history.append(rec)
        snapshots[epoch] = masker.copy_params()
        log.info("masker epoch %d loss %.4f val_eer %s", epoch, rec["loss"], rec.get("val_eer"))
        if run:
            run.log(rec)
            run.save(masker, f"epoch-{epoch:03d}", opt, epoch=epoch)
    if params_digest(verifier) != before:
        raise ProtocolError("verifier parameters changed during masker training")
    if validation is not None and history:
        pick = history[select_best([r["val_eer"] for r in history])]["epoch"]
        criterion = "best_validation_eer"
    else:
        pick, criterion = cfg.epochs - 1, "last"
    if pick in snapshots:
        masker.load_arrays(snapshots[pick])
    if run:
        tag = f"epoch-{pick:03d}"
        run.mark_selected(tag, ckpt.file_digest(run.checkpoint_path(tag)), epoch=pick, criterion=criterion)
    return TrainResult(masker, history, pick)


def dae_phase2_step(cfg: TrainConfig, epoch: int) -> float:
    return cfg.phase2_step_size * cfg.phase2_decay ** epoch


def _dae_dev_l2(model, pairs) -> float:
    if not pairs:
        return float("nan")
    return float(np.mean([l2_loss(model.predict(x), t)[0] for x, t in pairs]))


def _dae_epoch(model, opt, pairs, rng, where):
    total = 0.0
    for i in rng.permutation(len(pairs)):
        x, target = pairs[i]
        pred = model.net.forward(np.asarray(x, dtype=model.dtype)[None])
        loss, grad = l2_loss(pred, np.asarray(target, dtype=model.dtype)[None])
        _check_finite(loss, where)
        model.net.zero_grad()
        model.net.backward(grad)
        opt.step()
        total += loss
    return total / len(pairs)


def train_dae(cfg: TrainConfig, pairs, dev_pairs, dae_cfg: models.DaeConfig | None = None,
              run_dir=None) -> TrainResult:
    """Two-phase L2 training, one utterance per step, gradient norm clipped.

    Phase 1: constant step size. Phase 2 restarts from the phase-1 epoch with
    the lowest dev L2 and decays the step size geometrically every epoch.
    The final model is the phase-2 epoch with the lowest dev L2.
    """
    if not pairs:
        raise ValueError("no training pairs")
    for x, t in list(pairs) + list(dev_pairs):
        if t is None:
            raise ValueError("training pair without a clean target")
        if np.shape(x) != np.shape(t):
            raise ValueError(f"pair shapes differ: {np.shape(x)} vs {np.shape(t)}")
    base = dae_cfg or models.DaeConfig()
    model = models.build_dae(models.DaeConfig.from_dict({**base.to_dict(), "seed": cfg.seed, "dtype": cfg.dtype}))
    clip = cfg.clip_norm if cfg.clip_norm is not None else 5.0
    run = RunDir(run_dir, cfg) if run_dir else None
    history = []

    opt = Optimizer(OptimState(kind="sgd", step_size=cfg.phase1_step_size, clip_norm=clip), model.net.params())
    phase1 = []
    for epoch in range(cfg.phase1_epochs):
        rng = np.random.default_rng([cfg.seed, 3, epoch])
        train_l2 = _dae_epoch(model, opt, pairs, rng, f"DAE phase 1 epoch {epoch}")
        rec = {"phase": 1, "epoch": epoch, "step_size": opt.step_size, "train_l2": train_l2,
               "dev_l2": _dae_dev_l2(model, dev_pairs), "digest": params_digest(model)}
        phase1.append((rec, model.copy_params()))
        history.append(rec)
        if run:
            run.log(rec)
            run.save(model, f"phase1-epoch-{epoch:03d}", phase=1, epoch=epoch)
    best1 = select_best([r["dev_l2"] for r, _ in phase1])
    model.load_arrays(phase1[best1][1])
    init_digest = params_digest(model)

    opt = Optimizer(OptimState(kind="sgd", step_size=dae_phase2_step(cfg, 0), clip_norm=clip), model.net.params())
    phase2 = []
    for epoch in range(cfg.phase2_epochs):
        opt.step_size = dae_phase2_step(cfg, epoch)
        rng = np.random.default_rng([cfg.seed, 4, epoch])
        train_l2 = _dae_epoch(model, opt, pairs, rng, f"DAE phase 2 epoch {epoch}")
        rec = {"phase": 2, "epoch": epoch, "step_size": opt.step_size, "train_l2": train_l2,
               "dev_l2": _dae_dev_l2(model, dev_pairs), "digest": params_digest(model)}
        phase2.append((rec, model.copy_params()))
        history.append(rec)
        if run:
            run.log(rec)
            run.save(model, f"phase2-epoch-{epoch:03d}", phase=2, epoch=epoch)
    best2 = select_best([r["dev_l2"] for r, _ in phase2])
    model.load_arrays(phase2[best2][1])
    if run:
        tag = f"phase2-epoch-{best2:03d}"
        run.mark_selected(tag, ckpt.file_digest(run.checkpoint_path(tag)), phase=2, epoch=best2,
                          criterion="best_dev_l2", phase2_init_epoch=best1)
    return TrainResult(model, history, best2, {"phase1_best": best1, "phase2_init_digest": init_digest})
