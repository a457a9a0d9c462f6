"""Framing, STFT/iSTFT, power-law compression, SNR mixing and reverberation."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

SAMPLE_RATE = 16000
FEATURE_EXPONENT = 0.3


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D array")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = SAMPLE_RATE
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window(self) -> np.ndarray:
        n = np.arange(self.win_length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.win_length)

    def __post_init__(self):
        if self.win_length > self.fft_size:
            raise ValueError("window longer than FFT size")
        if self.hop_length < 1:
            raise ValueError("hop must be at least one sample")


DEFAULT_STFT = StftConfig()


@dataclass(frozen=True)
class ComplexSpec:
    magnitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        if self.magnitude.shape != self.phase.shape:
            raise ValueError(f"magnitude {self.magnitude.shape} and phase {self.phase.shape} differ")
        if np.any(self.magnitude < 0):
            raise ValueError("magnitude must be non-negative")

    @property
    def n_frames(self) -> int:
        return self.magnitude.shape[1]


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray
    compression_exponent: float = 1.0

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("spectrogram values must be non-negative")
        if not 0 < self.compression_exponent <= 1:
            raise ValueError("compression_exponent must be in (0, 1]")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def frame_count(n_samples: int, cfg: StftConfig = DEFAULT_STFT) -> int:
    if n_samples < cfg.win_length:
        raise ValueError(f"{n_samples} samples is shorter than one {cfg.win_length}-sample window")
    return 1 + (n_samples - cfg.win_length) // cfg.hop_length


def signal_length(n_frames: int, cfg: StftConfig = DEFAULT_STFT) -> int:
    """Samples covered by ``n_frames`` frames; inverse of ``frame_count``."""
    return (n_frames - 1) * cfg.hop_length + cfg.win_length


def _frames(x, cfg):
    n = frame_count(x.size, cfg)
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.win_length)
    return view[: (n - 1) * cfg.hop_length + 1: cfg.hop_length]


def stft(w: Waveform, cfg: StftConfig = DEFAULT_STFT) -> ComplexSpec:
    """Magnitude and phase, shaped (n_bins, frames). No centering or padding."""
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"sample rate {w.sample_rate} != configured {cfg.sample_rate}")
    spec = np.fft.rfft(_frames(w.samples, cfg) * cfg.window(), n=cfg.fft_size, axis=1).T
    return ComplexSpec(np.ascontiguousarray(np.abs(spec)), np.ascontiguousarray(np.angle(spec)))


def istft_with_phase(mag, phase, cfg: StftConfig = DEFAULT_STFT) -> Waveform:
    """Weighted overlap-add inverse with window-power normalisation."""
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if mag.shape != phase.shape:
        raise ValueError(f"magnitude {mag.shape} and phase {phase.shape} differ")
    if mag.ndim != 2 or mag.shape[0] != cfg.n_bins:
        raise ValueError(f"expected ({cfg.n_bins}, frames), got {mag.shape}")
    if np.any(mag < 0):
        raise ValueError("magnitude must be non-negative")
    win = cfg.window()
    frames = np.fft.irfft((mag * np.exp(1j * phase)).T, n=cfg.fft_size, axis=1)[:, : cfg.win_length]
    n_frames = frames.shape[0]
    length = signal_length(n_frames, cfg)
    out = np.zeros(length)
    norm = np.zeros(length)
    hop = cfg.hop_length
    for k in range(n_frames):
        sl = slice(k * hop, k * hop + cfg.win_length)
        out[sl] += frames[k] * win
        norm[sl] += win * win
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    return Waveform(out, cfg.sample_rate)


def magnitude_spectrogram(w: Waveform, cfg: StftConfig = DEFAULT_STFT, exponent=FEATURE_EXPONENT) -> Spectrogram:
    """STFT magnitude compressed to ``exponent``: the network feature."""
    return compress(Spectrogram(stft(w, cfg).magnitude, 1.0), exponent)


def compress(s: Spectrogram, p: float) -> Spectrogram:
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    if np.any(s.values < 0):
        raise ValueError("cannot compress negative values")
    return Spectrogram(np.power(s.values, p), s.compression_exponent * p)


def decompress(s: Spectrogram, p: float) -> Spectrogram:
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    return Spectrogram(np.power(s.values, 1.0 / p), min(1.0, s.compression_exponent / p))


def power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


def fit_noise(noise: np.ndarray, n: int, offset: int | None = None, rng=None) -> np.ndarray:
    """Tile short noise end-to-end; crop long noise at ``offset`` (or a random one)."""
    if noise.size >= n:
        if offset is None:
            offset = 0 if rng is None else int(rng.integers(0, noise.size - n + 1))
        if not 0 <= offset <= noise.size - n:
            raise ValueError(f"offset {offset} out of range for {noise.size}-sample noise")
        return noise[offset:offset + n]
    reps = -(-n // noise.size)
    return np.tile(noise, reps)[:n]


def noise_scale(clean, noise, snr_linear: float) -> float:
    """Gain ``alpha`` so that P(clean) / P(alpha * noise) equals ``snr_linear``."""
    if snr_linear <= 0:
        raise ValueError("linear SNR must be positive")
    p_clean = power(clean)
    p_noise = power(noise)
    if p_clean == 0:
        raise ValueError("clean signal is silent")
    if p_noise == 0:
        raise ValueError("noise is silent")
    return float(np.sqrt(p_clean / (snr_linear * p_noise)))


def db_to_linear(snr_db: float) -> float:
    return float(10.0 ** (snr_db / 10.0))


def mix_at_snr(clean: Waveform, noise: Waveform, *, snr_db=None, snr_linear=None, offset=None, rng=None) -> Waveform:
    """Return ``clean + alpha * noise`` at the requested SNR (give exactly one)."""
    if (snr_db is None) == (snr_linear is None):
        raise ValueError("give exactly one of snr_db or snr_linear")
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("clean and noise sample rates differ")
    if snr_linear is None:
        snr_linear = db_to_linear(snr_db)
    fitted = fit_noise(noise.samples, clean.samples.size, offset, rng)
    alpha = noise_scale(clean.samples, fitted, snr_linear)
    return Waveform(clean.samples + alpha * fitted, clean.sample_rate)


def measured_snr_db(clean, mixture) -> float:
    """SNR of ``mixture`` against its clean component."""
    clean = np.asarray(clean, dtype=np.float64)
    resid = np.asarray(mixture, dtype=np.float64) - clean
    return 10.0 * np.log10(power(clean) / power(resid))


def rir_convolve(w: Waveform, rir: Waveform) -> Waveform:
    """Convolve with a room impulse response, keep the input length and peak."""
    if w.sample_rate != rir.sample_rate:
        raise ValueError(f"sample rate mismatch: {w.sample_rate} vs {rir.sample_rate}")
    out = fftconvolve(w.samples, rir.samples, mode="full")[: w.samples.size]
    peak_in = np.max(np.abs(w.samples))
    peak_out = np.max(np.abs(out))
    if peak_out > 0:
        out = out * (peak_in / peak_out)
    return Waveform(out, w.sample_rate)


# file I/O ---------------------------------------------------------------------

def read_wav(path, expected_rate: int | None = SAMPLE_RATE) -> Waveform:
    """Read 16-bit PCM mono WAV as floats in [-1, 1)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (resample offline)")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)


def quantize(samples) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, w: Waveform) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(quantize(w.samples).tobytes())


def write_csv(path, matrix, fmt="%.6g") -> None:
    np.savetxt(path, np.asarray(matrix), delimiter=",", fmt=fmt)


def write_pgm(path, matrix, lo=None, hi=None, flip=True) -> None:
    """8-bit binary PGM, min-max scaled. ``flip`` puts row 0 at the bottom."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("PGM export needs a 2-D matrix")
    lo = float(m.min()) if lo is None else lo
    hi = float(m.max()) if hi is None else hi
    scaled = np.zeros_like(m) if hi <= lo else (np.clip(m, lo, hi) - lo) / (hi - lo)
    img = np.round(scaled * 255).astype(np.uint8)
    if flip:
        img = img[::-1]
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)
