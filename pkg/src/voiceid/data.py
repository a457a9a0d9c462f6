"""Manifests, noise augmentation, segment sampling, trials and the toy corpus."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp

MANIFEST_FORMAT = "voiceid-manifest"
PLAN_FORMAT = "voiceid-augmentation-plan"
POOL_FORMAT = "voiceid-noise-pool"
FORMAT_VERSION = 1

CATEGORIES = ("noise", "music", "babble", "reverb")
ADDITIVE = ("noise", "music", "babble")
TEST_SNRS_DB = (0, 5, 10, 15, 20)
ROOM_CLASSES = ("small", "large")
SEGMENT_FRAMES = 298


class DataError(ValueError):
    pass


# manifests --------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker_id: str
    path: str
    duration: float
    source: str | None = None
    category: str | None = None
    snr_db: float | None = None

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    split: str = "dev"

    def __post_init__(self):
        ids = [e.utt_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate utterance ids in manifest")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def utt_ids(self) -> list[str]:
        return [e.utt_id for e in self.entries]

    def speakers(self) -> list[str]:
        return sorted({e.speaker_id for e in self.entries})

    def by_speaker(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for e in self.entries:
            out.setdefault(e.speaker_id, []).append(e.utt_id)
        return out

    def speaker_of(self) -> dict[str, str]:
        return {e.utt_id: e.speaker_id for e in self.entries}

    def check_dev(self):
        thin = [s for s, u in self.by_speaker().items() if len(u) < 2]
        if thin:
            raise DataError(f"speakers with fewer than 2 utterances: {', '.join(thin)}")

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(json.dumps({"format": MANIFEST_FORMAT, "version": FORMAT_VERSION, "split": self.split},
                                sort_keys=True) + "\n")
            for e in self.entries:
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "Manifest":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("format") != MANIFEST_FORMAT:
                raise DataError(f"{path}: not a manifest file")
            if header.get("version") != FORMAT_VERSION:
                raise DataError(f"{path}: unsupported manifest version {header.get('version')}")
            entries = [ManifestEntry(**json.loads(line)) for line in fh if line.strip()]
        return cls(entries, header.get("split", "dev"))


def load_audio(manifest: Manifest, root) -> dict[str, dsp.Waveform]:
    root = Path(root)
    return {e.utt_id: dsp.read_wav(root / e.path) for e in manifest}


def write_audio(manifest: Manifest, audio, root) -> None:
    root = Path(root)
    for e in manifest:
        dsp.write_wav(root / e.path, audio[e.utt_id])


def as_pcm(samples) -> dsp.Waveform:
    """Round to the 16-bit grid so a WAV round trip is exact."""
    return dsp.Waveform(dsp.quantize(samples).astype(np.float64) / 32768.0)


# noise pool -------------------------------------------------------------------

@dataclass
class NoiseSource:
    source_id: str
    category: str
    kind: str
    partition: str
    audio: dsp.Waveform
    members: tuple[str, ...] = ()


@dataclass
class NoisePool:
    sources: list[NoiseSource]

    def __post_init__(self):
        ids = [s.source_id for s in self.sources]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate noise source ids")

    def ids(self) -> set[str]:
        return {s.source_id for s in self.sources}

    def categories(self) -> set[str]:
        return {s.category for s in self.sources}

    def partition(self, name: str) -> "NoisePool":
        return NoisePool([s for s in self.sources if s.partition == name])

    def of(self, category: str, kind: str | None = None) -> list[NoiseSource]:
        found = [s for s in self.sources if s.category == category and (kind is None or s.kind == kind)]
        return sorted(found, key=lambda s: s.source_id)

    def get(self, source_id: str) -> NoiseSource:
        for s in self.sources:
            if s.source_id == source_id:
                return s
        raise KeyError(source_id)

    def write(self, root):
        root = Path(root)
        with open(root / "pool.jsonl", "w") as fh:
            fh.write(json.dumps({"format": POOL_FORMAT, "version": FORMAT_VERSION}) + "\n")
            for s in sorted(self.sources, key=lambda s: s.source_id):
                rel = f"{s.category}/{s.source_id}.wav"
                dsp.write_wav(root / rel, s.audio)
                rec = {"id": s.source_id, "category": s.category, "kind": s.kind, "partition": s.partition,
                       "path": rel, "members": list(s.members)}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def read(cls, root) -> "NoisePool":
        root = Path(root)
        index = root / "pool.jsonl"
        if not index.exists():
            raise DataError(f"noise pool index not found: {index}")
        sources = []
        with open(index) as fh:
            header = json.loads(fh.readline())
            if header.get("format") != POOL_FORMAT:
                raise DataError(f"{index}: not a noise pool index")
            for line in fh:
                if line.strip():
                    r = json.loads(line)
                    sources.append(NoiseSource(r["id"], r["category"], r["kind"], r["partition"],
                                               dsp.read_wav(root / r["path"]), tuple(r.get("members", ()))))
        return cls(sources)


def check_disjoint(dev: NoisePool, test: NoisePool) -> None:
    """Noise partitions must share categories but no source."""
    overlap = dev.ids() & test.ids()
    if overlap:
        raise DataError(f"noise partitions overlap: {', '.join(sorted(overlap))}")
    if dev.categories() != test.categories():
        raise DataError(f"category sets differ: {sorted(dev.categories())} vs {sorted(test.categories())}")


# augmentation -----------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    category: str
    noise_source_id: str
    snr_linear: float | None = None
    offset: int = 0

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise DataError(f"unknown noise category {self.category!r}")
        if self.category == "reverb":
            if self.snr_linear is not None:
                raise DataError("reverb conditions carry no SNR")
        elif self.snr_linear is None or self.snr_linear <= 0:
            raise DataError("additive noise needs a positive linear SNR")

    @property
    def snr_db(self) -> float | None:
        return None if self.snr_linear is None else float(10 * np.log10(self.snr_linear))


@dataclass
class AugmentationPlan:
    entries: dict[str, NoiseSpec]
    seed: int
    partition: str

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(json.dumps({"format": PLAN_FORMAT, "version": FORMAT_VERSION, "seed": self.seed,
                                 "partition": self.partition}, sort_keys=True) + "\n")
            for utt in sorted(self.entries):
                rec = {"utt_id": utt, **{k: v for k, v in asdict(self.entries[utt]).items() if v is not None}}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "AugmentationPlan":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("format") != PLAN_FORMAT:
                raise DataError(f"{path}: not an augmentation plan")
            entries = {}
            for line in fh:
                if line.strip():
                    r = json.loads(line)
                    utt = r.pop("utt_id")
                    entries[utt] = NoiseSpec(**r)
        return cls(entries, header["seed"], header["partition"])

    def source_ids(self) -> set[str]:
        return {s.noise_source_id for s in self.entries.values()}


def _draw_offset(rng, noise_len, n):
    return int(rng.integers(0, noise_len - n + 1)) if noise_len > n else 0


def draw_linear_snr(rng, high=20.0) -> float:
    """Uniform on (0, high]; an exact zero would be an invalid SNR."""
    while True:
        v = high - float(rng.uniform(0.0, high))
        if v > 0:
            return v


def draw_dev_plan(utt_lengths: dict[str, int], pool: NoisePool, seed: int, partition="dev") -> AugmentationPlan:
    """One random condition per utterance: uniform category, uniform linear SNR."""
    for cat in CATEGORIES:
        if not pool.of(cat):
            raise DataError(f"noise pool has no {cat!r} sources")
    entries = {}
    for i, utt in enumerate(sorted(utt_lengths)):
        rng = np.random.default_rng([seed, i])
        cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
        sources = pool.of(cat)
        src = sources[int(rng.integers(len(sources)))]
        if cat == "reverb":
            entries[utt] = NoiseSpec(cat, src.source_id)
        else:
            snr = draw_linear_snr(rng)
            entries[utt] = NoiseSpec(cat, src.source_id, snr, _draw_offset(rng, len(src.audio), utt_lengths[utt]))
    return AugmentationPlan(entries, seed, partition)


def apply_noise(clean: dsp.Waveform, spec: NoiseSpec, pool: NoisePool, snr_db=None) -> dsp.Waveform:
    src = pool.get(spec.noise_source_id)
    if spec.category == "reverb":
        return dsp.rir_convolve(clean, src.audio)
    if snr_db is not None:
        return dsp.mix_at_snr(clean, src.audio, snr_db=snr_db, offset=spec.offset)
    return dsp.mix_at_snr(clean, src.audio, snr_linear=spec.snr_linear, offset=spec.offset)


def _run_jobs(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def noisy_id(utt_id: str) -> str:
    return f"{utt_id}.noisy"


def build_dev_augmented(dev: Manifest, audio, pool: NoisePool, seed: int, workers: int = 1, quantize=True):
    """Corrupt every dev utterance once. Returns ``(manifest, audio, plan)``."""
    lengths = {e.utt_id: len(audio[e.utt_id]) for e in dev}
    plan = draw_dev_plan(lengths, pool, seed)

    def job(entry):
        mixed = apply_noise(audio[entry.utt_id], plan.entries[entry.utt_id], pool)
        return as_pcm(mixed.samples) if quantize else mixed

    outputs = _run_jobs(job, list(dev), workers)
    entries, out_audio = [], {}
    for e, w in zip(dev, outputs):
        spec = plan.entries[e.utt_id]
        uid = noisy_id(e.utt_id)
        entries.append(ManifestEntry(uid, e.speaker_id, f"dev_noisy/{e.speaker_id}/{uid}.wav", e.duration,
                                     source=e.utt_id, category=spec.category, snr_db=spec.snr_db))
        out_audio[uid] = w
    return Manifest(entries, "dev_noisy"), out_audio, plan


def condition_cells() -> list[tuple[str, str]]:
    cells = [(cat, str(snr)) for cat in ADDITIVE for snr in TEST_SNRS_DB]
    return cells + [("reverb", room) for room in ROOM_CLASSES]


def build_test_conditions(test: Manifest, audio, pool: NoisePool, seed: int, exclude_ids=(), workers: int = 1,
                          quantize=True, cells=None):
    """One corrupted copy of the test set per (category, SNR or room) cell.

    Returns ``{(category, label): (manifest, audio, plan)}``. ``exclude_ids``
    holds the dev partition's source ids; any overlap is an error.
    """
    overlap = pool.ids() & set(exclude_ids)
    if overlap:
        raise DataError(f"test noise overlaps dev partition: {', '.join(sorted(overlap))}")
    for cat in CATEGORIES:
        if not pool.of(cat):
            raise DataError(f"noise pool has no {cat!r} sources")
    out = {}
    for c_idx, (cat, label) in enumerate(cells or condition_cells()):
        sources = pool.of(cat, kind=label) if cat == "reverb" else pool.of(cat)
        if not sources:
            raise DataError(f"no {cat} sources for cell {label}")
        plan_entries = {}
        for i, e in enumerate(test):
            rng = np.random.default_rng([seed, c_idx, i])
            src = sources[int(rng.integers(len(sources)))]
            if cat == "reverb":
                plan_entries[e.utt_id] = NoiseSpec(cat, src.source_id)
            else:
                off = _draw_offset(rng, len(src.audio), len(audio[e.utt_id]))
                plan_entries[e.utt_id] = NoiseSpec(cat, src.source_id, dsp.db_to_linear(float(label)), off)
        plan = AugmentationPlan(plan_entries, seed, "test")
        snr_db = None if cat == "reverb" else float(label)

        def job(entry, plan=plan, snr_db=snr_db):
            mixed = apply_noise(audio[entry.utt_id], plan.entries[entry.utt_id], pool, snr_db=snr_db)
            return as_pcm(mixed.samples) if quantize else mixed

        outputs = _run_jobs(job, list(test), workers)
        entries = [ManifestEntry(e.utt_id, e.speaker_id, f"{cat}/{label}/{e.utt_id}.wav", e.duration,
                                 source=e.utt_id, category=cat, snr_db=snr_db) for e in test]
        out[(cat, label)] = (Manifest(entries, f"test/{cat}/{label}"), dict(zip(test.utt_ids, outputs)), plan)
    return out


# segments and trials ----------------------------------------------------------

def sample_segment(values, length: int = SEGMENT_FRAMES, rng=None):
    """Random contiguous crop along time; short inputs are tiled first."""
    values = values.values if isinstance(values, dsp.Spectrogram) else np.asarray(values)
    n = values.shape[-1]
    if n < 1:
        raise DataError("empty spectrogram")
    if n < length:
        reps = -(-length // n)
        return np.concatenate([values] * reps, axis=-1)[..., :length]
    start = 0 if rng is None or n == length else int(rng.integers(0, n - length + 1))
    return values[..., start:start + length]


@dataclass(frozen=True)
class Trial:
    enroll: str
    test: str
    target: bool


def verification_trials(test: Manifest, n_pairs: int, seed: int) -> list[Trial]:
    """``n_pairs`` target and ``n_pairs`` nontarget trials, no repeats, no self pairs."""
    rng = np.random.default_rng(seed)
    groups = test.by_speaker()
    thin = [s for s, u in groups.items() if len(u) < 2]
    if thin:
        raise DataError(f"speakers with a single utterance cannot form target trials: {', '.join(sorted(thin))}")
    if len(groups) < 2:
        raise DataError("need at least two speakers for nontarget trials")
    positives = [(a, b) for utts in groups.values() for i, a in enumerate(utts) for b in utts[i + 1:]]
    if n_pairs > len(positives):
        raise DataError(f"only {len(positives)} target pairs available, {n_pairs} requested")
    chosen = [positives[i] for i in sorted(rng.choice(len(positives), size=n_pairs, replace=False))]
    speaker = test.speaker_of()
    utts = test.utt_ids
    negatives: set[tuple[str, str]] = set()
    n_utts = len(utts)
    total_neg = n_utts * (n_utts - 1) // 2 - len(positives)
    if n_pairs > total_neg:
        raise DataError(f"only {total_neg} nontarget pairs available")
    while len(negatives) < n_pairs:
        i, j = rng.integers(n_utts, size=2)
        a, b = utts[min(i, j)], utts[max(i, j)]
        if speaker[a] != speaker[b]:
            negatives.add((a, b))
    trials = [Trial(a, b, True) for a, b in chosen] + [Trial(a, b, False) for a, b in sorted(negatives)]
    order = rng.permutation(len(trials))
    return [trials[i] for i in order]


def write_trials(path, trials):
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{t.enroll} {t.test} {'target' if t.target else 'nontarget'}\n")


def read_trials(path) -> list[Trial]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                a, b, lab = line.split()
                out.append(Trial(a, b, lab == "target"))
    return out


# toy corpus -------------------------------------------------------------------

_ENV_GRID = np.linspace(0.0, 8000.0, 129)


@dataclass
class ToySpeakerProfile:
    """A synthetic talker: pitch, a log-amplitude spectral envelope, jitter."""

    speaker_id: str
    f0: float
    envelope_db: np.ndarray  # on _ENV_GRID
    f0_drift: float = 0.06
    amp_jitter_db: float = 2.0
    formant_jitter: float = 0.04

    def utterance_envelope(self, rng) -> np.ndarray:
        """Envelope for one utterance: frequency-warped and amplitude-jittered."""
        warp = 1.0 + self.formant_jitter * rng.standard_normal()
        env = np.interp(_ENV_GRID / warp, _ENV_GRID, self.envelope_db)
        smooth = np.interp(_ENV_GRID, np.linspace(0, 8000, 9), rng.standard_normal(9))
        return env + self.amp_jitter_db * smooth

    def to_dict(self):
        return {"speaker_id": self.speaker_id, "f0": self.f0, "envelope_db": self.envelope_db.tolist(),
                "f0_drift": self.f0_drift, "amp_jitter_db": self.amp_jitter_db,
                "formant_jitter": self.formant_jitter}


def make_profile(speaker_id: str, rng) -> ToySpeakerProfile:
    f0 = float(np.exp(rng.uniform(np.log(85.0), np.log(280.0))))
    env = -9.0 * np.log2(np.maximum(_ENV_GRID, 100.0) / 100.0)
    centers = [rng.uniform(250, 900), rng.uniform(900, 2400), rng.uniform(2200, 3600), rng.uniform(3500, 5500)]
    for c, gain in zip(centers, (18.0, 14.0, 10.0, 8.0)):
        bw = rng.uniform(80, 350)
        env = env + gain * np.exp(-0.5 * ((_ENV_GRID - c) / bw) ** 2)
    fine = np.interp(_ENV_GRID, np.linspace(0, 8000, 33), rng.normal(0.0, 4.0, 33))
    return ToySpeakerProfile(speaker_id, f0, env + fine)


def synth_utterance(profile: ToySpeakerProfile, seconds: float, rng, sample_rate=dsp.SAMPLE_RATE) -> np.ndarray:
    """Harmonic syllables separated by silence gaps."""
    n = int(round(seconds * sample_rate))
    out = np.zeros(n)
    env = profile.utterance_envelope(rng)
    f0_utt = profile.f0 * np.exp(profile.f0_drift * rng.standard_normal())
    pos = int(rng.uniform(0.02, 0.12) * sample_rate)
    while pos < n - int(0.1 * sample_rate):
        dur = min(int(rng.uniform(0.15, 0.45) * sample_rate), n - pos)
        t = np.arange(dur) / sample_rate
        rate = rng.uniform(2.0, 6.0)
        contour = f0_utt * (1 + 0.04 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))) * \
            (1 + rng.uniform(-0.05, 0.05) * t / max(t[-1], 1e-9))
        phase = 2 * np.pi * np.cumsum(contour) / sample_rate
        f_mean = float(contour.mean())
        k = np.arange(1, int(7600 // (f_mean * 1.05)) + 1)
        amps_db = np.interp(k * f_mean, _ENV_GRID, env) + rng.normal(0.0, 1.0, k.size)
        amps = 10 ** (amps_db / 20)
        seg = (amps[:, None] * np.sin(k[:, None] * phase[None, :] + rng.uniform(0, 2 * np.pi, k.size)[:, None])).sum(0)
        ramp = min(int(0.02 * sample_rate), dur // 2)
        shape = np.ones(dur)
        if ramp > 0:
            win = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            shape[:ramp] = win
            shape[dur - ramp:] = win[::-1]
        out[pos:pos + dur] += seg * shape * 10 ** (rng.normal(0.0, 1.5) / 20)
        pos += dur + int(rng.uniform(0.03, 0.15) * sample_rate)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= rng.uniform(0.3, 0.6) / peak
    return out


def _pink(n, rng):
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0
    return np.fft.irfft(spec, n)


def _tones(n, rng, sample_rate=dsp.SAMPLE_RATE):
    out = np.zeros(n)
    pos = 0
    while pos < n:
        dur = min(int(rng.uniform(0.1, 0.5) * sample_rate), n - pos)
        t = np.arange(dur) / sample_rate
        f_start = float(np.exp(rng.uniform(np.log(150), np.log(2500))))
        f_end = f_start * np.exp(rng.uniform(-0.5, 0.5))
        inst = f_start + (f_end - f_start) * t / max(t[-1], 1e-9)
        ph = 2 * np.pi * np.cumsum(inst) / sample_rate
        note = sum(0.6 ** h * np.sin((h + 1) * ph) for h in range(4))
        decay = np.exp(-t * rng.uniform(1.0, 6.0))
        out[pos:pos + dur] += note * decay
        pos += dur
    return out


def make_rir(kind: str, rng, sample_rate=dsp.SAMPLE_RATE) -> np.ndarray:
    rt60 = rng.uniform(0.2, 0.4) if kind == "small" else rng.uniform(0.6, 1.0)
    n = int(1.2 * rt60 * sample_rate)
    t = np.arange(n) / sample_rate
    rir = rng.standard_normal(n) * np.exp(-6.91 * t / rt60) * rng.uniform(0.05, 0.2)
    delay = int(rng.uniform(0.001, 0.004) * sample_rate)
    rir[:delay] = 0
    rir[0] = 1.0
    return rir


def _normalise(x, peak=0.5):
    m = np.max(np.abs(x))
    return x * (peak / m) if m > 0 else x


@dataclass
class ToyCorpus:
    dev: Manifest
    test: Manifest
    audio: dict[str, dsp.Waveform]
    profiles: list[ToySpeakerProfile]
    noise_pool: NoisePool
    babblers: list[ToySpeakerProfile] = field(default_factory=list)

    def write(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        self.dev.write(root / "dev.jsonl")
        self.test.write(root / "test.jsonl")
        write_audio(self.dev, self.audio, root)
        write_audio(self.test, self.audio, root)
        (root / "noise").mkdir(exist_ok=True)
        self.noise_pool.write(root / "noise")
        with open(root / "profiles.json", "w") as fh:
            json.dump({"speakers": [p.to_dict() for p in self.profiles],
                       "babblers": [p.to_dict() for p in self.babblers]}, fh, sort_keys=True)


def synth_toy_corpus(n_speakers=20, utts_per_speaker=20, utt_seconds=3.0, seed=0, test_per_speaker=6,
                     n_babblers=8, sources_per_category=4, noise_seconds=6.0) -> ToyCorpus:
    """Synthetic talkers with a matching noise pool split into dev/test halves.

    Each speaker's last ``test_per_speaker`` utterances form the test split.
    Babble is built from dedicated babble talkers, never from corpus
    speakers, so no target speaker ever appears in its own babble.
    """
    if n_speakers < 2:
        raise DataError("need at least 2 speakers")
    if not 2 <= test_per_speaker <= utts_per_speaker - 2:
        raise DataError("need at least 2 dev and 2 test utterances per speaker")
    profiles = [make_profile(f"spk{i:03d}", np.random.default_rng([seed, 1, i])) for i in range(n_speakers)]
    audio, dev_entries, test_entries = {}, [], []
    for si, prof in enumerate(profiles):
        for u in range(utts_per_speaker):
            rng = np.random.default_rng([seed, 2, si, u])
            uid = f"{prof.speaker_id}-u{u:03d}"
            audio[uid] = as_pcm(synth_utterance(prof, utt_seconds, rng))
            entry = ManifestEntry(uid, prof.speaker_id, f"audio/{prof.speaker_id}/{uid}.wav", utt_seconds)
            (test_entries if u >= utts_per_speaker - test_per_speaker else dev_entries).append(entry)

    n_noise = int(noise_seconds * dsp.SAMPLE_RATE)
    babblers = [make_profile(f"babbler{i:02d}", np.random.default_rng([seed, 3, i])) for i in range(n_babblers)]
    sources = []
    for part_idx, part in enumerate(("dev", "test")):
        talkers = babblers[part_idx::2]
        for k in range(sources_per_category):
            rng = np.random.default_rng([seed, 4, part_idx, k])
            color = "white" if k % 2 == 0 else "pink"
            x = rng.standard_normal(n_noise) if color == "white" else _pink(n_noise, rng)
            sources.append(NoiseSource(f"noise-{part}-{k:02d}", "noise", color, part, as_pcm(_normalise(x))))

            rng = np.random.default_rng([seed, 5, part_idx, k])
            sources.append(NoiseSource(f"music-{part}-{k:02d}", "music", "tones", part,
                                       as_pcm(_normalise(_tones(n_noise, rng)))))

            rng = np.random.default_rng([seed, 6, part_idx, k])
            n_mix = min(len(talkers), 3)
            picks = sorted(rng.choice(len(talkers), size=n_mix, replace=False))
            mix = sum(synth_utterance(talkers[p], noise_seconds, rng) for p in picks)
            sources.append(NoiseSource(f"babble-{part}-{k:02d}", "babble", "babble", part,
                                       as_pcm(_normalise(mix)), tuple(talkers[p].speaker_id for p in picks)))

            rng = np.random.default_rng([seed, 7, part_idx, k])
            room = ROOM_CLASSES[k % 2]
            sources.append(NoiseSource(f"reverb-{part}-{k:02d}", "reverb", room, part,
                                       as_pcm(make_rir(room, rng) * 0.99)))
    return ToyCorpus(Manifest(dev_entries, "dev"), Manifest(test_entries, "test"), audio, profiles,
                     NoisePool(sources), babblers)


def load_corpus(root) -> ToyCorpus:
    root = Path(root)
    for name in ("dev.jsonl", "test.jsonl"):
        if not (root / name).exists():
            raise DataError(f"corpus manifest missing: {root / name}")
    dev = Manifest.read(root / "dev.jsonl")
    test = Manifest.read(root / "test.jsonl")
    audio = load_audio(dev, root)
    audio.update(load_audio(test, root))
    pool = NoisePool.read(root / "noise") if (root / "noise" / "pool.jsonl").exists() else NoisePool([])
    return ToyCorpus(dev, test, audio, [], pool)
