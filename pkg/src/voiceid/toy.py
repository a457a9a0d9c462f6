"""Desk-scale end-to-end benchmark on the synthetic corpus.

Network widths are reduced so the whole pipeline (verifier, masker, DAE and
an 18-row evaluation sweep) runs on a single core in minutes; the layer
structure, kernel shapes, dilations and embedding size are unchanged.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import data, dsp, evaluation, models, training

log = logging.getLogger(__name__)

TOY_VERIFIER = models.VerifierConfig(conv_filters=(128, 128, 128, 192))
TOY_MASKER = models.MaskerConfig(filters=16, final_bias=3.0)
TOY_DAE = models.DaeConfig(hidden=96)


def toy_train_configs(seed: int) -> dict[str, training.TrainConfig]:
    return {
        "verifier": training.TrainConfig(seed=seed, epochs=25, batch_size=16, step_size=1e-3,
                                         segment_frames=200, dataset="clean"),
        "masker": training.TrainConfig(seed=seed, epochs=6, batch_size=8, step_size=1e-4,
                                       segment_frames=100, dataset="both"),
        "dae": training.TrainConfig(seed=seed, dataset="both", phase1_epochs=10, phase2_epochs=10),
    }


@dataclass
class ToyBenchmark:
    report: evaluation.ConditionReport
    timings: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def features(audio, ids):
    return {u: dsp.magnitude_spectrogram(audio[u]).values.astype(np.float32) for u in ids}


def run_toy_benchmark(seed: int = 7, n_speakers: int = 20, utts_per_speaker: int = 26, test_per_speaker: int = 12,
                      n_pairs: int = 1000, cells=None, configs=None, dae_pairs_limit=None) -> ToyBenchmark:
    t0 = time.perf_counter()
    timings = {}
    corpus = data.synth_toy_corpus(n_speakers, utts_per_speaker, 3.0, seed=seed, test_per_speaker=test_per_speaker)
    dev_pool = corpus.noise_pool.partition("dev")
    test_pool = corpus.noise_pool.partition("test")
    data.check_disjoint(dev_pool, test_pool)
    noisy_dev, noisy_audio, plan = data.build_dev_augmented(corpus.dev, corpus.audio, dev_pool, seed)
    conditions = data.build_test_conditions(corpus.test, corpus.audio, test_pool, seed,
                                            exclude_ids=dev_pool.ids(), cells=cells)
    trials = data.verification_trials(corpus.test, n_pairs, seed)
    timings["data"] = time.perf_counter() - t0

    speakers = corpus.dev.speakers()
    label = {s: i for i, s in enumerate(speakers)}
    clean_feats = features(corpus.audio, corpus.dev.utt_ids)
    noisy_feats = features(noisy_audio, noisy_dev.utt_ids)
    test_clean = features(corpus.audio, corpus.test.utt_ids)
    cfgs = configs or toy_train_configs(seed)

    def examples(which):
        out = []
        if which in ("noisy", "both"):
            out += [(noisy_feats[e.utt_id], label[e.speaker_id]) for e in noisy_dev]
        if which in ("clean", "both"):
            out += [(clean_feats[e.utt_id], label[e.speaker_id]) for e in corpus.dev]
        return out

    t = time.perf_counter()
    vres = training.train_verifier(cfgs["verifier"], examples(cfgs["verifier"].dataset), len(speakers), TOY_VERIFIER)
    verifier = vres.model
    verifier.net.set_trainable(False)
    timings["train_verifier"] = time.perf_counter() - t

    t = time.perf_counter()
    verifier_before = verifier.to_bytes()
    # the clean trial list doubles as the validation set for picking the masker epoch
    mres = training.train_masker(cfgs["masker"], examples(cfgs["masker"].dataset), verifier,
                                 validation=(trials, test_clean), masker_cfg=TOY_MASKER)
    verifier_unchanged = verifier.to_bytes() == verifier_before
    timings["train_masker"] = time.perf_counter() - t

    t = time.perf_counter()
    pairs = [(noisy_feats[e.utt_id], clean_feats[e.source]) for e in noisy_dev]
    pairs += [(clean_feats[u], clean_feats[u]) for u in corpus.dev.utt_ids]
    # hold out every tenth pair as the DAE development set
    dev_pairs = pairs[::10]
    train_pairs = [p for i, p in enumerate(pairs) if i % 10]
    if dae_pairs_limit:
        train_pairs = train_pairs[:dae_pairs_limit]
    dres = training.train_dae(cfgs["dae"], train_pairs, dev_pairs, TOY_DAE)
    timings["train_dae"] = time.perf_counter() - t

    t = time.perf_counter()
    enhancers = {"none": None, "masker": mres.model, "dae": dres.model}
    report = evaluation.ConditionReport(list(enhancers))
    rows = [("clean", "-", test_clean)]
    for (cat, lab), (_, audio, _) in conditions.items():
        rows.append((cat, lab, features(audio, corpus.test.utt_ids)))
    for cat, lab, feats in rows:
        res = {}
        for name, enh in enhancers.items():
            s = evaluation.score_trials(verifier, trials, features=feats, enhancer=enh)
            res[name] = (evaluation.eer(s), evaluation.dcf_avg(s))
        report.add(cat, lab, res)
        log.info("%s %s %s", cat, lab, {k: round(100 * v[0], 2) for k, v in res.items()})
    timings["evaluate"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    return ToyBenchmark(report, timings,
                        {"verifier": vres.history, "masker": mres.history, "dae": dres.history},
                        {"verifier": verifier, "masker": mres.model, "dae": dres.model},
                        {"masker_selected": mres.selected_epoch, "dae": dres.extra,
                         "verifier_unchanged": verifier_unchanged})
