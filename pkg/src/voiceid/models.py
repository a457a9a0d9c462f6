"""Graph builders and inference entry points for the three networks.

``VerifierModel``: conv1d stack over (freq-as-channels, time), global average
pooling, two fully connected layers and a softmax head. Embeddings are the
pre-activation output of the second FC layer.

``MaskerModel``: 11 same-padded dilated conv2d layers ending in a sigmoid that
yields a ratio mask of the input's shape.

``DaeModel``: replication-padded TDNN regressing clean from noisy features.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import dsp
from .nncore import LayerSpec, Multiply, Network
from .nncore import checkpoint as ckpt
from .nncore.receptive import layer_contexts, receptive_field

N_BINS = 257

# (name, kernel (freq, time), dilation (freq, time)) for conv1..conv10; all have `filters` outputs.
# conv4-6 use 5x1 kernels so the cumulative context matches 19x11, 35x11, 67x11.
MASKER_TABLE = (
    ("conv1", (1, 7), (1, 1)),
    ("conv2", (7, 1), (1, 1)),
    ("conv3", (5, 5), (1, 1)),
    ("conv4", (5, 1), (2, 1)),
    ("conv5", (5, 1), (4, 1)),
    ("conv6", (5, 1), (8, 1)),
    ("conv7", (5, 5), (1, 1)),
    ("conv8", (5, 5), (2, 2)),
    ("conv9", (5, 5), (4, 4)),
    ("conv10", (5, 5), (8, 8)),
)


class _Config:
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict):
        names = {f.name for f in fields(cls)}
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
        return cls(**kwargs)


@dataclass
class VerifierConfig(_Config):
    n_speakers: int = 1211
    n_bins: int = N_BINS
    conv_filters: tuple[int, ...] = (1000, 1000, 1000, 1500)
    conv_widths: tuple[int, ...] = (5, 7, 1, 1)
    conv_strides: tuple[int, ...] = (1, 2, 1, 1)
    fc_sizes: tuple[int, int] = (1500, 600)
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError("need at least 2 speakers")
        if not len(self.conv_filters) == len(self.conv_widths) == len(self.conv_strides):
            raise ValueError("conv filter/width/stride lists differ in length")


@dataclass
class MaskerConfig(_Config):
    filters: int = 48
    literal_5x5: bool = False
    final_bias: float = 0.0
    seed: int = 0
    dtype: str = "float64"


@dataclass
class DaeConfig(_Config):
    n_bins: int = N_BINS
    hidden: int = 1000
    splice_offsets: tuple[tuple[int, ...], ...] = field(
        default_factory=lambda: ((-2, 0, 2),) * 6 + ((0,),) * 2
    )
    seed: int = 0
    dtype: str = "float64"

    @property
    def context(self) -> int:
        return 1 + sum(max(o) - min(o) for o in self.splice_offsets)


def verifier_specs(cfg: VerifierConfig) -> list[LayerSpec]:
    specs = []
    channels = cfg.n_bins
    for i, (f, k, s) in enumerate(zip(cfg.conv_filters, cfg.conv_widths, cfg.conv_strides), 1):
        specs.append(LayerSpec("conv1d", f"conv{i}", filters=f, kernel=(channels, k), stride=s))
        specs.append(LayerSpec("relu", f"conv{i}_relu"))
        channels = f
    specs.append(LayerSpec("global_avg_pool", "pool"))
    specs.append(LayerSpec("linear", "fc1", filters=cfg.fc_sizes[0]))
    specs.append(LayerSpec("relu", "fc1_relu"))
    specs.append(LayerSpec("linear", "fc2", filters=cfg.fc_sizes[1]))
    specs.append(LayerSpec("relu", "fc2_relu"))
    specs.append(LayerSpec("linear", "head", filters=cfg.n_speakers))
    return specs


def masker_specs(cfg: MaskerConfig) -> list[LayerSpec]:
    specs = []
    for name, kernel, dilation in MASKER_TABLE:
        if cfg.literal_5x5 and name in ("conv4", "conv5", "conv6"):
            kernel = (5, 5)
        specs.append(LayerSpec("conv2d_dilated", name, filters=cfg.filters, kernel=kernel,
                               dilation=dilation, padding="same_zero"))
        specs.append(LayerSpec("relu", f"{name}_relu"))
    specs.append(LayerSpec("conv2d_dilated", "conv11", filters=1, kernel=(1, 1), padding="same_zero"))
    specs.append(LayerSpec("sigmoid", "mask"))
    return specs


def dae_specs(cfg: DaeConfig) -> list[LayerSpec]:
    half = (cfg.context - 1) // 2
    specs = [LayerSpec("replicate_pad", "pad", pad=(half, cfg.context - 1 - half))]
    for i, offsets in enumerate(cfg.splice_offsets, 1):
        if len(offsets) > 1:
            specs.append(LayerSpec("tdnn_splice", f"tdnn{i}_splice", offsets=tuple(offsets)))
        specs.append(LayerSpec("linear", f"tdnn{i}", filters=cfg.hidden))
        specs.append(LayerSpec("relu", f"tdnn{i}_relu"))
    specs.append(LayerSpec("linear", "out", filters=cfg.n_bins))
    return specs


def _values(s) -> np.ndarray:
    return s.values if isinstance(s, dsp.Spectrogram) else np.asarray(s)


class _Model:
    kind = ""
    config_cls: type = _Config

    def __init__(self, cfg, net: Network):
        self.config = cfg
        self.net = net

    @property
    def dtype(self):
        return self.net.dtype

    def header(self, **meta) -> dict:
        return {"model": self.kind, "config": self.config.to_dict(),
                "specs": [s.to_dict() for s in self.net.specs], "meta": meta}

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.net.params()}

    def to_bytes(self, extra=None, **meta) -> bytes:
        arrays = dict(self.param_arrays())
        arrays.update(extra or {})
        return ckpt.dumps(self.header(**meta), arrays)

    def save(self, path, extra=None, **meta) -> str:
        arrays = dict(self.param_arrays())
        arrays.update(extra or {})
        return ckpt.save(path, self.header(**meta), arrays)

    def load_arrays(self, arrays):
        for name, p in self.net.named_params().items():
            if name not in arrays:
                raise ckpt.CheckpointError(f"checkpoint missing parameter {name!r}")
            if arrays[name].shape != p.value.shape:
                raise ckpt.CheckpointError(f"{name}: shape {arrays[name].shape} != {p.value.shape}")
            p.value[...] = arrays[name]

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.param_arrays().items()}

    def inspect(self) -> str:
        return inspect_report(self)


class VerifierModel(_Model):
    kind = "verifier"
    config_cls = VerifierConfig

    @property
    def min_frames(self) -> int:
        return receptive_field(self.net.specs)[1]

    @property
    def embedding_dim(self) -> int:
        return self.config.fc_sizes[1]

    def _batch(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.shape[-1] < self.min_frames:
            raise ValueError(f"{x.shape[-1]} frames is shorter than the verifier's {self.min_frames}-frame receptive field")
        return x

    def logits(self, x):
        return self.net.forward(self._batch(x))

    def embed(self, s) -> np.ndarray:
        """Pre-activation output of the last FC layer."""
        out = self.net.forward(self._batch(_values(s)), until="fc2")
        return out[0] if np.ndim(_values(s)) == 2 else out

    def frame_features(self, s) -> np.ndarray:
        """Last conv layer activations (channels, frames), before pooling."""
        last = [sp.name for sp in self.net.specs if sp.kind == "conv1d"][-1]
        return self.net.forward(self._batch(_values(s)), until=f"{last}_relu")[0]


class MaskerModel(_Model):
    kind = "masker"
    config_cls = MaskerConfig

    def mask(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 2
        if single:
            x = x[None]
        m = self.net.forward(x[:, None])[:, 0]
        return m[0] if single else m

    def apply_mask(self, s):
        """Return ``(mask, masked)``; ``masked = mask * s`` elementwise."""
        values = _values(s)
        m = self.mask(values)
        masked = m * np.asarray(values, dtype=m.dtype)
        if isinstance(s, dsp.Spectrogram):
            masked = dsp.Spectrogram(masked, s.compression_exponent)
        return m, masked


class DaeModel(_Model):
    kind = "dae"
    config_cls = DaeConfig

    def predict(self, x) -> np.ndarray:
        """Raw network output (no clamping), batch or single."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 2
        out = self.net.forward(x[None] if single else x)
        return out[0] if single else out

    def enhance(self, s):
        values = _values(s)
        out = np.maximum(self.predict(values), 0.0)
        if isinstance(s, dsp.Spectrogram):
            return dsp.Spectrogram(out, s.compression_exponent)
        return out


def _dtype(name):
    return np.dtype(name)


def build_verifier(n_speakers: int | None = None, cfg: VerifierConfig | None = None) -> VerifierModel:
    cfg = cfg or VerifierConfig()
    if n_speakers is not None:
        cfg = VerifierConfig.from_dict({**cfg.to_dict(), "n_speakers": n_speakers})
    net = Network(verifier_specs(cfg), cfg.n_bins, seed=cfg.seed, dtype=_dtype(cfg.dtype), zero_init=("head",))
    return VerifierModel(cfg, net)


def build_masker(cfg: MaskerConfig | None = None) -> MaskerModel:
    cfg = cfg or MaskerConfig()
    net = Network(masker_specs(cfg), 1, seed=cfg.seed, dtype=_dtype(cfg.dtype))
    net.layers[net.index("conv11")].bias.value[...] = cfg.final_bias
    return MaskerModel(cfg, net)


def build_dae(cfg: DaeConfig | None = None) -> DaeModel:
    cfg = cfg or DaeConfig()
    net = Network(dae_specs(cfg), cfg.n_bins, seed=cfg.seed, dtype=_dtype(cfg.dtype))
    return DaeModel(cfg, net)


_BUILDERS = {"verifier": (VerifierConfig, build_verifier), "masker": (MaskerConfig, build_masker),
             "dae": (DaeConfig, build_dae)}


def from_checkpoint(header: dict, arrays: dict):
    kind = header.get("model")
    if kind not in _BUILDERS:
        raise ckpt.CheckpointError(f"unknown model kind {kind!r}")
    cfg_cls, builder = _BUILDERS[kind]
    cfg = cfg_cls.from_dict(header["config"])
    model = builder(cfg=cfg)
    model.load_arrays(arrays)
    return model


def load_model(path, verify=True):
    header, arrays = ckpt.load(path, verify=verify)
    return from_checkpoint(header, arrays), header, arrays


class VoiceIdPipeline:
    """Masker -> elementwise product with the input -> verifier logits.

    The verifier's weights receive gradients (they are on the backward path)
    but are expected to be frozen by the caller.
    """

    def __init__(self, masker: MaskerModel, verifier: VerifierModel):
        self.masker = masker
        self.verifier = verifier
        self.junction = Multiply()

    def forward(self, x):
        x = np.asarray(x, dtype=self.masker.dtype)
        mask = self.masker.net.forward(x[:, None])[:, 0]
        masked = self.junction.forward(mask, x)
        return self.verifier.net.forward(masked)

    def backward(self, grad_logits):
        g_masked = self.verifier.net.backward(grad_logits)
        g_mask, g_x = self.junction.backward(g_masked)
        g_x_from_mask = self.masker.net.backward(g_mask[:, None])[:, 0]
        return g_x + g_x_from_mask


def enhance_to_waveform(enhanced, original: dsp.ComplexSpec, cfg: dsp.StftConfig = dsp.DEFAULT_STFT,
                        exponent: float = dsp.FEATURE_EXPONENT) -> dsp.Waveform:
    """Undo compression on the enhanced feature and invert with the noisy phase."""
    values = _values(enhanced)
    if values.shape != original.magnitude.shape:
        raise ValueError(f"enhanced shape {values.shape} != original {original.magnitude.shape}")
    if isinstance(enhanced, dsp.Spectrogram):
        exponent = enhanced.compression_exponent
    mag = np.power(np.maximum(np.asarray(values, dtype=np.float64), 0.0), 1.0 / exponent)
    return dsp.istft_with_phase(mag, original.phase, cfg)


def inspect_report(model: _Model) -> str:
    """Text table of layers with output channels, parameter counts and context."""
    contexts = {spec.name: ctx for spec, ctx in layer_contexts(model.net.specs)}
    rows = [("layer", "kind", "kernel", "dilation", "params", "context")]
    total = 0
    for layer in model.net.layers:
        spec = layer.spec
        n = sum(p.value.size for p in layer.params())
        total += n
        ctx = contexts.get(spec.name)
        kernel = "x".join(map(str, spec.kernel)) if spec.kind in ("conv1d", "conv2d_dilated") else "-"
        dil = "x".join(map(str, spec.dilation)) if spec.kind == "conv2d_dilated" else "-"
        if spec.kind == "tdnn_splice":
            kernel = "{" + ",".join(map(str, spec.offsets)) + "}"
        rows.append((spec.name, spec.kind, kernel, dil, str(n), f"{ctx[0]}x{ctx[1]}" if ctx else "-"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [f"{model.kind} ({total} parameters)"]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines)
