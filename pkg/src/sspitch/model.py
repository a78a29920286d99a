"""Pitch network: grouped-convolution residual encoder + Toeplitz pitch head.

Every convolution runs over the frequency axis. Encoder convolutions pad with
zeros, so the band edges give the network an absolute frequency reference;
the Toeplitz head pads circularly so its kernel is shared by every output bin.
Input frames are centred, normalization has no affine part, and the residual
projections and channel reduction carry no bias. A frame that is constant
over frequency (an all-zero CQT frame in particular) therefore propagates as
exact zeros and yields identical logits in every bin: an exactly uniform
distribution, bit for bit, wherever it sits in a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, load_checkpoint, ops, parameter, save_checkpoint
from .cqt import CqtConfig, bin_to_hz


OFFSET_KEY = "head.offset"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_bins: int = 269
    output_bins: int = 269
    stem_channels: int = 32
    stem_kernel: int = 7
    stage_channels: tuple = (32, 64, 128)
    blocks_per_stage: int = 2
    groups: int = 4
    kernel: int = 3
    head_taps: int = 81
    seed: int = 0


@dataclass
class PitchEstimate:
    bin: np.ndarray
    f0_hz: np.ndarray
    confidence: np.ndarray


def _layer_shapes(cfg: ModelConfig):
    """Ordered (name, shape) list; weights are (C_out, C_in / groups, k)."""
    shapes = [("stem.w", (cfg.stem_channels, 1, cfg.stem_kernel)), ("stem.b", (cfg.stem_channels,))]
    cin = cfg.stem_channels
    for i, cout in enumerate(cfg.stage_channels):
        for j in range(cfg.blocks_per_stage):
            p = f"stage{i}.block{j}"
            shapes += [
                (f"{p}.conv1.w", (cout, cin // cfg.groups, cfg.kernel)), (f"{p}.conv1.b", (cout,)),
                (f"{p}.conv2.w", (cout, cout // cfg.groups, cfg.kernel)), (f"{p}.conv2.b", (cout,)),
            ]
            if cin != cout:
                shapes += [(f"{p}.proj.w", (cout, cin, 1))]
            cin = cout
    shapes += [("reduce.w", (1, cin, 1)),
               ("head.w", (1, 1, cfg.head_taps)), ("head.b", (1,))]
    return shapes


def parameter_count(cfg: ModelConfig = ModelConfig()) -> int:
    return int(sum(np.prod(s) for _, s in _layer_shapes(cfg)))


class PitchModel:
    """Maps (N, B) log-CQT frames to (N, K) pitch logits."""

    def __init__(self, cfg: ModelConfig, params: dict, offset: int = 0):
        self.cfg = cfg
        self.params = params
        # calibration: logits are rolled by -offset bins (not trainable)
        self.offset = int(offset) % cfg.output_bins

    @property
    def dtype(self):
        return self.params["stem.w"].dtype

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def astype(self, dtype) -> "PitchModel":
        return PitchModel(self.cfg, {k: parameter(v.data, k, dtype=dtype)
                                     for k, v in self.params.items()}, self.offset)

    def copy(self) -> "PitchModel":
        return self.astype(self.dtype)

    def state(self) -> dict:
        out = {k: v.data for k, v in self.params.items()}
        out[OFFSET_KEY] = np.array([self.offset], dtype=np.float32)
        return out

    def _conv(self, x, name, groups=1, padding=None):
        w = self.params[f"{name}.w"]
        k = w.shape[-1]
        pad = k // 2 if padding is None else padding
        mode = "circular" if name == "head" else "zeros"
        return ops.conv1d(x, w, self.params.get(f"{name}.b"), padding=pad, groups=groups,
                          padding_mode=mode)

    def __call__(self, frames):
        return self.forward(frames)

    def forward(self, frames) -> Tensor:
        cfg = self.cfg
        x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=self.dtype))
        if x.ndim != 2 or x.shape[1] != cfg.input_bins:
            raise ValueError(f"frames must be (N, {cfg.input_bins}), got {x.shape}")
        if not np.all(np.isfinite(x.data)):
            raise ValueError("frames contain non-finite values")
        n = x.shape[0]
        # exact per-frame centring: constant frames become exact zeros
        shifted = x.data - x.data[:, :1]
        x = Tensor(shifted - shifted.mean(axis=1, keepdims=True))
        h = ops.reshape(x, (n, cfg.input_bins, 1))   # channels-last (N, L, C)
        h = ops.relu(ops.instance_norm(self._conv(h, "stem")))
        cin = cfg.stem_channels
        for i, cout in enumerate(cfg.stage_channels):
            for j in range(cfg.blocks_per_stage):
                p = f"stage{i}.block{j}"
                r = self._conv(h, f"{p}.proj", padding=0) if cin != cout else h
                u = ops.relu(ops.instance_norm(self._conv(h, f"{p}.conv1", groups=cfg.groups)))
                u = ops.instance_norm(self._conv(u, f"{p}.conv2", groups=cfg.groups))
                h = ops.relu(ops.add(u, r))
                cin = cout
        h = self._conv(h, "reduce", padding=0)
        y = ops.reshape(self._conv(h, "head"), (n, cfg.output_bins))
        return ops.roll(y, -self.offset) if self.offset else y

    def predict(self, frames, batch=512) -> np.ndarray:
        """Logits without building a gradient graph."""
        frames = np.asarray(frames)
        out = [self.forward(frames[i:i + batch]).data for i in range(0, len(frames), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.cfg.output_bins))

    def save(self, path):
        save_checkpoint(path, self.state())


def init_model(cfg: ModelConfig = ModelConfig(), cqt_cfg: CqtConfig = CqtConfig(),
               dtype=np.float32) -> PitchModel:
    """Fan-in scaled uniform initialization, deterministic in ``cfg.seed``."""
    if cfg.output_bins != cqt_cfg.n_bins or cfg.input_bins != cqt_cfg.n_bins:
        raise ConfigError(f"output_bins ({cfg.output_bins}) and input_bins ({cfg.input_bins}) "
                          f"must equal the CQT bin count ({cqt_cfg.n_bins})")
    for c in (cfg.stem_channels, *cfg.stage_channels):
        if c % cfg.groups:
            raise ConfigError(f"channel count {c} not divisible by groups={cfg.groups}")
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in _layer_shapes(cfg):
        if name.endswith(".w"):
            fan_in = shape[1] * shape[2]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = parameter(rng.uniform(-bound, bound, shape), name, dtype=dtype)
    return PitchModel(cfg, params)


def load_model(path, cfg: ModelConfig = ModelConfig(), dtype=np.float32) -> PitchModel:
    state = load_checkpoint(path)
    offset = int(round(float(state.pop(OFFSET_KEY, np.zeros(1))[0])))
    expected = dict(_layer_shapes(cfg))
    if set(state) != set(expected):
        missing = sorted(set(expected) - set(state))
        raise ConfigError(f"{path}: checkpoint does not match model config (missing {missing[:3]})")
    params = {}
    for name, shape in _layer_shapes(cfg):
        if tuple(state[name].shape) != tuple(shape):
            raise ConfigError(f"{path}: {name} has shape {state[name].shape}, expected {shape}")
        params[name] = parameter(state[name], name, dtype=dtype)
    return PitchModel(cfg, params, offset)


def softmax_rows(logits) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decode_pitch(p, radius: int = 4, cqt_cfg: CqtConfig = CqtConfig()) -> PitchEstimate:
    """Local centroid around the argmax (window clipped at the edges)."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    n, k = p.shape
    peak = p.argmax(axis=1)
    offs = np.arange(-radius, radius + 1)
    idx = peak[:, None] + offs[None, :]
    valid = (idx >= 0) & (idx < k)
    mass = np.where(valid, p[np.arange(n)[:, None], np.clip(idx, 0, k - 1)], 0.0)
    total = mass.sum(axis=1)
    refined = np.where(total > 0, (mass * idx).sum(axis=1) / np.where(total > 0, total, 1),
                       peak.astype(np.float64))
    refined = np.clip(refined, 0, k - 1)
    return PitchEstimate(refined, bin_to_hz(refined, cqt_cfg), p.max(axis=1))


def shift_output(model: PitchModel, offset: int) -> PitchModel:
    """Return a copy whose logits are circularly rolled by a further ``-offset`` bins.

    Unlike :func:`calibrate_head` this is exact for any offset: the decoded
    bin of every frame moves by ``-offset`` (modulo the bin count).
    """
    out = model.copy()
    out.offset = (model.offset + int(offset)) % model.cfg.output_bins
    return out


def calibrate_head(model: PitchModel, offset: int) -> PitchModel:
    """Return a copy whose Toeplitz head taps are circularly shifted by ``offset``.

    For interior pitches this moves the output peak by about ``-offset`` bins.
    """
    taps = model.cfg.head_taps
    if abs(offset) >= taps:
        raise ValueError(f"|offset| must be < {taps}, got {offset}")
    out = model.copy()
    out.params["head.w"].data[...] = np.roll(model.params["head.w"].data, offset, axis=-1)
    return out
