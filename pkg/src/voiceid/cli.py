"""``voiceid`` command line: synth, augment, train-*, enhance, evaluate, inspect."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data, dsp, evaluation, models, toy, training
from .nncore import NonFiniteGradientError
from .nncore import checkpoint as ckpt

log = logging.getLogger("voiceid")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
CONFIG_ENV = "VOICEID_CONFIG"


class UsageError(Exception):
    pass


# helpers ----------------------------------------------------------------------

def prepare_output(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def record_run(out: Path, args, **resolved):
    rec = {"command": args.command, "seed": args.seed, "threads": args.threads,
           "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"},
           **resolved}
    (out / "run.json").write_text(json.dumps(rec, sort_keys=True, indent=1, default=str) + "\n")


def parse_overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_train_config(args, kind: str) -> training.TrainConfig:
    """Preset defaults, then the config file, then --set overrides; seed always from --seed."""
    base = toy.toy_train_configs(args.seed)[kind] if args.preset == "toy" else training.TrainConfig()
    raw = {k: str(v) for k, v in base.__dict__.items()}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        if not Path(path).exists():
            raise UsageError(f"config file not found: {path}")
        raw.update(_read_config_file(Path(path)))
    raw.update(parse_overrides(args.set))
    raw["seed"] = str(args.seed)
    try:
        return training.TrainConfig.from_mapping(raw)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e


def _read_config_file(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: bad config line {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def model_config(preset: str, kind: str):
    if preset == "toy":
        return {"verifier": toy.TOY_VERIFIER, "masker": toy.TOY_MASKER, "dae": toy.TOY_DAE}[kind]
    return {"verifier": models.VerifierConfig(), "masker": models.MaskerConfig(final_bias=toy.TOY_MASKER.final_bias),
            "dae": models.DaeConfig()}[kind]


def load_corpus_split(root: Path):
    root = Path(root)
    for name in ("dev.jsonl", "test.jsonl"):
        if not (root / name).exists():
            raise data.DataError(f"corpus manifest missing: {root / name}")
    return data.Manifest.read(root / "dev.jsonl"), data.Manifest.read(root / "test.jsonl")


def load_noisy_dev(aug: Path):
    path = Path(aug) / "dev_noisy.jsonl"
    if not path.exists():
        raise data.DataError(f"augmented dev manifest missing: {path} (run `voiceid augment --split dev`)")
    man = data.Manifest.read(path)
    return man, data.load_audio(man, aug)


def load_checked_model(path, kind: str):
    try:
        model, header, _ = models.load_model(path)
    except FileNotFoundError as e:
        raise data.DataError(f"checkpoint not found: {path}") from e
    if model.kind != kind:
        raise UsageError(f"{path} holds a {model.kind}, expected a {kind}")
    return model, header


def training_examples(corpus: Path, aug, which: str, dev=None):
    dev = dev or data.Manifest.read(Path(corpus) / "dev.jsonl")
    speakers = dev.speakers()
    label = {s: i for i, s in enumerate(speakers)}
    out = []
    if which in ("noisy", "both"):
        if aug is None:
            raise UsageError(f"dataset={which} needs --augmented")
        man, audio = load_noisy_dev(aug)
        feats = evaluation.features_for(audio, man.utt_ids)
        out += [(feats[e.utt_id].astype(np.float32), label[e.speaker_id]) for e in man]
    if which in ("clean", "both"):
        audio = data.load_audio(dev, corpus)
        feats = evaluation.features_for(audio, dev.utt_ids)
        out += [(feats[e.utt_id].astype(np.float32), label[e.speaker_id]) for e in dev]
    return out, speakers


# commands ---------------------------------------------------------------------

def cmd_synth(args):
    out = prepare_output(args.out, args.force)
    corpus = data.synth_toy_corpus(args.speakers, args.utts, args.seconds, seed=args.seed,
                                   test_per_speaker=args.test_per_speaker)
    corpus.write(out)
    record_run(out, args)
    print(f"wrote {len(corpus.dev)} dev and {len(corpus.test)} test utterances to {out}")


def cmd_augment(args):
    corpus = Path(args.corpus)
    dev, test = load_corpus_split(corpus)
    pool = data.NoisePool.read(corpus / "noise")
    dev_pool, test_pool = pool.partition("dev"), pool.partition("test")
    data.check_disjoint(dev_pool, test_pool)
    out = prepare_output(args.out, args.force)
    workers = max(1, args.threads)
    if args.split == "dev":
        audio = data.load_audio(dev, corpus)
        man, noisy, plan = data.build_dev_augmented(dev, audio, dev_pool, args.seed, workers=workers)
        data.write_audio(man, noisy, out)
        man.write(out / "dev_noisy.jsonl")
        plan.write(out / "plan.jsonl")
        print(f"wrote {len(man)} corrupted dev utterances to {out}")
    else:
        audio = data.load_audio(test, corpus)
        cells = [tuple(c.split("/", 1)) for c in args.cells] if args.cells else None
        conds = data.build_test_conditions(test, audio, test_pool, args.seed, exclude_ids=dev_pool.ids(),
                                           workers=workers, cells=cells)
        for (cat, label), (man, cell_audio, plan) in conds.items():
            cell = out / cat / label
            cell.mkdir(parents=True, exist_ok=True)
            for e in man:
                dsp.write_wav(out / e.path, cell_audio[e.utt_id])
            man.write(cell / "manifest.jsonl")
            plan.write(cell / "plan.jsonl")
        trials = data.verification_trials(test, args.pairs, args.seed)
        data.write_trials(out / "trials.txt", trials)
        print(f"wrote {len(conds)} condition cells and {len(trials)} trials to {out}")
    record_run(out, args)


def cmd_train_verifier(args):
    cfg = resolve_train_config(args, "verifier")
    out = prepare_output(args.out, args.force or args.resume is not None)
    examples, speakers = training_examples(args.corpus, args.augmented, cfg.dataset)
    res = training.train_verifier(cfg, examples, len(speakers), model_config(args.preset, "verifier"),
                                  run_dir=out, resume=args.resume)
    record_run(out, args, train_config=cfg.__dict__, speakers=speakers)
    print(f"verifier: {len(res.history)} epochs, selected epoch {res.selected_epoch}")


def _validation(args, verifier):
    if not args.validate:
        return None
    _, test = load_corpus_split(args.corpus)
    trials_path = Path(args.validate)
    trials = data.read_trials(trials_path)
    audio = data.load_audio(test, args.corpus)
    return trials, evaluation.features_for(audio, test.utt_ids)


def cmd_train_masker(args):
    if not args.verifier:
        raise UsageError("train-masker needs --verifier CHECKPOINT")
    cfg = resolve_train_config(args, "masker")
    verifier, _ = load_checked_model(args.verifier, "verifier")
    verifier.net.set_trainable(False)
    before = Path(args.verifier).read_bytes()
    out = prepare_output(args.out, args.force or args.resume is not None)
    examples, _ = training_examples(args.corpus, args.augmented, cfg.dataset)
    mcfg = models.MaskerConfig.from_dict({**model_config(args.preset, "masker").to_dict(), "dtype": cfg.dtype})
    res = training.train_masker(cfg, examples, verifier, validation=_validation(args, verifier), masker_cfg=mcfg,
                                run_dir=out, resume=args.resume)
    if Path(args.verifier).read_bytes() != before:
        raise training.ProtocolError("verifier checkpoint changed on disk during masker training")
    record_run(out, args, train_config=cfg.__dict__, verifier_sha256=ckpt.file_digest(args.verifier))
    print(f"masker: {len(res.history)} epochs, selected epoch {res.selected_epoch}")


def cmd_train_dae(args):
    cfg = resolve_train_config(args, "dae")
    out = prepare_output(args.out, args.force)
    dev = data.Manifest.read(Path(args.corpus) / "dev.jsonl")
    clean_audio = data.load_audio(dev, args.corpus)
    clean = evaluation.features_for(clean_audio, dev.utt_ids)
    pairs = []
    if cfg.dataset in ("noisy", "both"):
        if args.augmented is None:
            raise UsageError(f"dataset={cfg.dataset} needs --augmented")
        man, audio = load_noisy_dev(args.augmented)
        noisy = evaluation.features_for(audio, man.utt_ids)
        pairs += [(noisy[e.utt_id], clean[e.source]) for e in man]
    if cfg.dataset in ("clean", "both"):
        pairs += [(clean[u], clean[u]) for u in dev.utt_ids]
    dev_pairs = pairs[::10]
    train_pairs = [p for i, p in enumerate(pairs) if i % 10]
    dcfg = models.DaeConfig.from_dict({**model_config(args.preset, "dae").to_dict(), "dtype": cfg.dtype})
    res = training.train_dae(cfg, train_pairs, dev_pairs, dcfg, run_dir=out)
    record_run(out, args, train_config=cfg.__dict__, n_train_pairs=len(train_pairs), n_dev_pairs=len(dev_pairs))
    print(f"dae: selected phase-2 epoch {res.selected_epoch}")


def cmd_enhance(args):
    model, _ = load_checked_model(args.model, args.kind) if args.kind else models.load_model(args.model)[:2]
    if model.kind not in ("masker", "dae"):
        raise UsageError(f"{args.model} holds a {model.kind}; enhance needs a masker or dae")
    wav = dsp.read_wav(args.input)
    spec = dsp.stft(wav)
    feat = dsp.compress(dsp.Spectrogram(spec.magnitude), dsp.FEATURE_EXPONENT)
    if model.kind == "masker":
        mask, enhanced = model.apply_mask(feat)
    else:
        mask, enhanced = None, model.enhance(feat)
    y = models.enhance_to_waveform(enhanced, spec).samples
    y = np.concatenate([y, np.zeros(max(0, len(wav) - len(y)))])[:len(wav)]
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    dsp.write_wav(out, data.as_pcm(y))
    if args.emit_mask:
        if mask is None:
            raise UsageError("--emit-mask needs a masker checkpoint")
        stem = Path(args.emit_mask)
        stem.parent.mkdir(parents=True, exist_ok=True)
        dsp.write_pgm(stem.with_suffix(".pgm"), mask)
        dsp.write_csv(stem.with_suffix(".csv"), mask)
    print(f"wrote {out}")


def _cell_features(aug: Path, cat: str, label: str, test_ids):
    cell = aug / cat / label
    if not (cell / "manifest.jsonl").exists():
        return None
    man = data.Manifest.read(cell / "manifest.jsonl")
    audio = {e.utt_id: dsp.read_wav(aug / e.path) for e in man}
    return evaluation.features_for(audio, test_ids)


def cmd_evaluate(args):
    verifier, _ = load_checked_model(args.verifier, "verifier")
    enhancers = {"none": None}
    if args.identity:
        enhancers["identity"] = evaluation.IdentityEnhancer()
    if args.masker:
        enhancers["masker"] = load_checked_model(args.masker, "masker")[0]
    if args.dae:
        enhancers["dae"] = load_checked_model(args.dae, "dae")[0]
    aug = Path(args.augmented)
    trials_path = Path(args.trials) if args.trials else aug / "trials.txt"
    if not trials_path.exists():
        raise data.DataError(f"trial list not found: {trials_path}")
    trials = data.read_trials(trials_path)
    _, test = load_corpus_split(args.corpus)
    out = prepare_output(args.out, args.force)
    report = evaluation.ConditionReport(list(enhancers))
    cells = [tuple(c.split("/", 1)) for c in args.cells] if args.cells else data.condition_cells()
    rows = [("clean", "-", evaluation.features_for(data.load_audio(test, args.corpus), test.utt_ids))]
    rows += [(cat, label, _cell_features(aug, cat, label, test.utt_ids)) for cat, label in cells]
    missing = []
    for cat, label, feats in rows:
        if feats is None:
            missing.append(f"{cat}/{label}")
            report.add(cat, label, {name: None for name in enhancers})
            continue
        res = {}
        for name, enh in enhancers.items():
            s = evaluation.score_trials(verifier, trials, features=feats, enhancer=enh)
            res[name] = (evaluation.eer(s), evaluation.dcf_avg(s))
            if args.scores:
                s.write(out / f"scores_{cat}_{label}_{name}.txt")
        report.add(cat, label, res)
    report.write(out)
    record_run(out, args, missing_cells=missing)
    sys.stdout.write(report.format_table())
    if missing:
        log.warning("absent condition cells: %s", ", ".join(missing))
        if args.strict:
            raise data.DataError(f"{len(missing)} condition cells absent: {', '.join(missing)}")


def cmd_inspect(args):
    if args.checkpoint:
        try:
            model, header, _ = models.load_model(args.checkpoint)
        except FileNotFoundError as e:
            raise data.DataError(f"checkpoint not found: {args.checkpoint}") from e
        print(models.inspect_report(model))
        if header.get("meta"):
            print("meta:", json.dumps(header["meta"], sort_keys=True))
    if args.audio:
        if not args.out:
            raise UsageError("--audio needs --out for the emitted files")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        wav = dsp.read_wav(args.audio)
        feat = dsp.magnitude_spectrogram(wav)
        dsp.write_pgm(out / "spectrogram.pgm", feat.values)
        dsp.write_csv(out / "spectrogram.csv", feat.values)
        print(f"spectrogram {feat.values.shape[0]}x{feat.values.shape[1]} -> {out}")
        if args.verifier:
            verifier, _ = load_checked_model(args.verifier, "verifier")
            other = dsp.magnitude_spectrogram(dsp.read_wav(args.audio2)) if args.audio2 else feat
            sim = evaluation.frame_sim_matrix(verifier, feat, other)
            dsp.write_pgm(out / "similarity.pgm", sim)
            dsp.write_csv(out / "similarity.csv", sim)
            print(f"frame similarity {sim.shape[0]}x{sim.shape[1]} -> {out}")
    if not args.checkpoint and not args.audio:
        raise UsageError("inspect needs a checkpoint and/or --audio")


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voiceid", description=__doc__)
    p.add_argument("--threads", type=int, default=1, help="cap BLAS and worker threads (1 = bit-exact mode)")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, seeded=True):
        sp = sub.add_parser(name)
        sp.set_defaults(func=func)
        if seeded:
            sp.add_argument("--seed", type=int, required=True)
        else:
            sp.set_defaults(seed=None)
        return sp

    def train_common(sp):
        sp.add_argument("--corpus", type=Path, required=True)
        sp.add_argument("--augmented", type=Path)
        sp.add_argument("--out", type=Path, required=True)
        sp.add_argument("--config", help=f"TrainConfig file (default: ${CONFIG_ENV})")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--preset", choices=("toy", "full"), default="toy")
        sp.add_argument("--force", action="store_true")

    sp = add("synth", cmd_synth)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--speakers", type=int, default=20)
    sp.add_argument("--utts", type=int, default=26)
    sp.add_argument("--seconds", type=float, default=3.0)
    sp.add_argument("--test-per-speaker", type=int, default=12)
    sp.add_argument("--force", action="store_true")

    sp = add("augment", cmd_augment)
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--split", choices=("dev", "test"), required=True)
    sp.add_argument("--cells", nargs="+", metavar="CAT/LABEL")
    sp.add_argument("--pairs", type=int, default=1000, help="target (and nontarget) trials for --split test")
    sp.add_argument("--force", action="store_true")

    sp = add("train-verifier", cmd_train_verifier)
    train_common(sp)
    sp.add_argument("--resume", type=Path)

    sp = add("train-masker", cmd_train_masker)
    train_common(sp)
    sp.add_argument("--verifier", type=Path)
    sp.add_argument("--validate", type=Path, metavar="TRIALS", help="select the epoch by EER on these trials")
    sp.add_argument("--resume", type=Path)

    sp = add("train-dae", cmd_train_dae)
    train_common(sp)

    sp = add("enhance", cmd_enhance, seeded=False)
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--kind", choices=("masker", "dae"))
    sp.add_argument("--in", dest="input", type=Path, required=True)
    sp.add_argument("--out", dest="output", type=Path, required=True)
    sp.add_argument("--emit-mask", type=Path, metavar="STEM", help="write STEM.pgm and STEM.csv")

    sp = add("evaluate", cmd_evaluate, seeded=False)
    sp.add_argument("--verifier", type=Path, required=True)
    sp.add_argument("--masker", type=Path)
    sp.add_argument("--dae", type=Path)
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--augmented", type=Path, required=True)
    sp.add_argument("--trials", type=Path)
    sp.add_argument("--cells", nargs="+", metavar="CAT/LABEL")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--identity", action="store_true", help="add a pass-through column (sanity check)")
    sp.add_argument("--scores", action="store_true", help="also write per-cell score files")
    sp.add_argument("--strict", action="store_true", help="exit nonzero when a cell is absent")
    sp.add_argument("--force", action="store_true")

    sp = add("inspect", cmd_inspect, seeded=False)
    sp.add_argument("checkpoint", nargs="?", type=Path)
    sp.add_argument("--audio", type=Path)
    sp.add_argument("--audio2", type=Path)
    sp.add_argument("--verifier", type=Path)
    sp.add_argument("--out", type=Path)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    # some bundled OpenBLAS builds crash when asked for more threads than
    # cores they saw at startup, so never ask for more
    blas_threads = min(args.threads, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity")
                       else os.cpu_count() or 1)
    try:
        with threadpool_limits(limits=blas_threads):
            args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, evaluation.MissingAudioError, ckpt.CheckpointError, FileNotFoundError,
            training.ProtocolError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except (training.DivergenceError, NonFiniteGradientError, FloatingPointError) as e:
        print(f"error: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # wrong sample rate, malformed files and similar input problems
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
