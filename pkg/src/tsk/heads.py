"""Temporal aggregation heads for segmented clips and continuous videos.

A head turns a T x D feature sequence into class logits: one vector per clip
in ``segmented`` mode, one row per frame in ``continuous`` mode.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import filters
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    conv1d_temporal,
    linear,
    matmul,
    pool_time,
    segment_max,
    sliding_windows,
)

SEGMENTED_KINDS = ("mean_pool", "max_pool", "pyramid", "temporal_conv", "sub_events", "bilstm")
CONTINUOUS_KINDS = SEGMENTED_KINDS + ("per_frame", "super_events", "sub_super")
ALL_KINDS = CONTINUOUS_KINDS
TASKS = ("multilabel", "detection", "speed", "pitch_type")

DEFAULT_WINDOW = 16
DEFAULT_CONV_LENGTH = 8
# initial Gaussian width in frames: broad enough that every filter sees a
# few frames at the start of training instead of a single point sample
SEGMENTED_WIDTH_INIT = 8.0


class ConfigError(ValueError):
    """A head configuration is inconsistent."""


@dataclass
class HeadConfig:
    mode: str
    kind: str
    D: int
    C: int
    L: int | None = None
    pyramid_levels: list[int] | None = None
    M: int = 3
    N: int = 3
    super_M: int = 3
    hidden: int = 512
    task: str | None = None
    # regression heads predict target_offset + target_scale * output
    target_offset: float = 0.0
    target_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("segmented", "continuous"):
            raise ConfigError(f"mode must be 'segmented' or 'continuous', got {self.mode!r}")
        if self.kind not in ALL_KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}; expected one of {', '.join(ALL_KINDS)}")
        if self.mode == "segmented" and self.kind not in SEGMENTED_KINDS:
            raise ConfigError(f"head {self.kind!r} is only available in continuous mode")
        if self.D < 1 or self.C < 1:
            raise ConfigError(f"D and C must be >= 1, got D={self.D}, C={self.C}")
        if self.task is None:
            self.task = "multilabel" if self.mode == "segmented" else "detection"
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if (self.task == "detection") != (self.mode == "continuous"):
            raise ConfigError(f"task {self.task!r} is incompatible with {self.mode} mode")
        if self.task == "speed" and self.C != 1:
            raise ConfigError(f"speed regression needs C=1 output, got C={self.C}")
        if self.task == "pitch_type" and self.C < 2:
            raise ConfigError("pitch-type classification needs at least 2 classes")
        if self.L is None and self.kind in ("max_pool", "mean_pool", "pyramid", "temporal_conv", "sub_events", "sub_super"):
            if self.kind == "temporal_conv":
                self.L = DEFAULT_CONV_LENGTH
            elif self.mode == "continuous":
                self.L = DEFAULT_WINDOW
        if self.pyramid_levels is None and self.kind == "pyramid":
            self.pyramid_levels = [1, 2, 4] if self.mode == "segmented" else [2, 4, 8]
        if self.L is not None and self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.kind in ("sub_events", "sub_super") and self.N < 2:
            raise ConfigError(f"sub-event filters need N >= 2, got {self.N}")
        if self.kind == "pyramid" and self.mode == "continuous" and max(self.pyramid_levels) > self.L:
            raise ConfigError(f"window L={self.L} is shorter than pyramid level {max(self.pyramid_levels)}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown HeadConfig fields: {sorted(unknown)}")
        return cls(**d)

    @property
    def feature_width(self) -> int:
        """Width of the representation fed to the final classifier."""
        D, C = self.D, self.C
        k = self.kind
        if k in ("mean_pool", "max_pool", "per_frame", "temporal_conv"):
            return D
        if k == "pyramid":
            return sum(self.pyramid_levels) * D
        if k == "sub_events":
            return self.M * self.N * D
        if k == "bilstm":
            return 2 * self.hidden
        if k == "super_events":
            return D + C * D
        if k == "sub_super":
            return self.M * self.N * D + C * D
        raise AssertionError(k)


def count_parameters(config: HeadConfig) -> int:
    """Learnable scalars the head adds on top of the (frozen) feature extractor."""
    return sum(math.prod(s) for s in parameter_shapes(config).values())


def parameter_shapes(config: HeadConfig) -> dict[str, tuple]:
    D, C = config.D, config.C
    shapes: dict[str, tuple] = {}
    k = config.kind
    if k == "temporal_conv":
        shapes["conv.kernel"] = (config.L, D, D)
    if k in ("sub_events", "sub_super"):
        for name in ("center", "stride", "width"):
            shapes[f"sub.{name}"] = (config.M,)
    if k in ("super_events", "sub_super"):
        shapes["super.center"] = (config.super_M,)
        shapes["super.width"] = (config.super_M,)
        shapes["super.attention"] = (C, config.super_M)
    if k == "bilstm":
        H = config.hidden
        for d in ("fwd", "bwd"):
            shapes[f"lstm.{d}.w_input"] = (D, 4 * H)
            shapes[f"lstm.{d}.w_hidden"] = (H, 4 * H)
            shapes[f"lstm.{d}.bias"] = (4 * H,)
    shapes["classifier.weight"] = (config.feature_width, C)
    shapes["classifier.bias"] = (C,)
    return shapes


def pyramid_bounds(T: int, levels) -> list[tuple[int, int]]:
    """Contiguous near-equal intervals per level, extra frames going to the earliest ones."""
    if T < max(levels):
        raise ShapeError(f"pyramid needs T >= {max(levels)} frames, got T={T}")
    bounds = []
    for n in levels:
        q, r = divmod(T, n)
        start = 0
        for j in range(n):
            end = start + q + (1 if j < r else 0)
            bounds.append((start, end))
            start = end
    return bounds


def pyramid_pool(v: Tensor, levels) -> Tensor:
    """Max-pool each pyramid interval of ``v`` (..., T, D) into (..., K, D)."""
    return segment_max(v, pyramid_bounds(v.shape[-2], levels))


class Model:
    """A head configuration plus its named learnable tensors."""

    def __init__(self, config: HeadConfig, parameters: dict[str, Tensor]):
        expected = parameter_shapes(config)
        if set(parameters) != set(expected):
            raise ConfigError(f"parameter names {sorted(parameters)} do not match head {config.kind!r}")
        for name, shape in expected.items():
            if parameters[name].shape != shape:
                raise ConfigError(f"parameter {name} has shape {parameters[name].shape}, expected {shape}")
        self.config = config
        self.parameters = {name: parameters[name] for name in expected}

    @classmethod
    def init(cls, config: HeadConfig, seed: int = 0) -> "Model":
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for name, shape in parameter_shapes(config).items():
            if name == "sub.width":
                width = SEGMENTED_WIDTH_INIT if config.mode == "segmented" else config.L / 4
                params[name] = np.full(shape, width)
            elif name == "super.attention":
                params[name] = rng.uniform(-0.1, 0.1, shape)
            elif name.startswith(("sub.", "super.")):
                params[name] = rng.uniform(-0.5, 0.5, shape)
            elif name.startswith("lstm."):
                bound = 1.0 / math.sqrt(config.hidden)
                params[name] = rng.uniform(-bound, bound, shape)
            elif name == "conv.kernel":
                bound = 1.0 / math.sqrt(shape[0] * shape[1])
                params[name] = rng.uniform(-bound, bound, shape)
            else:
                bound = 1.0 / math.sqrt(config.feature_width)
                params[name] = rng.uniform(-bound, bound, shape)
        return cls(config, {k: Tensor(a, requires_grad=True) for k, a in params.items()})

    def __getitem__(self, name: str) -> Tensor:
        return self.parameters[name]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters.values())

    def zero_grad(self) -> None:
        for p in self.parameters.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters.items()}

    def sub_bank(self) -> filters.SubEventFilterBank:
        p = self.parameters
        return filters.SubEventFilterBank(p["sub.center"], p["sub.stride"], p["sub.width"], N=self.config.N)

    def super_bank(self) -> filters.SuperEventFilterBank:
        p = self.parameters
        return filters.SuperEventFilterBank(p["super.center"], p["super.width"], p["super.attention"])

    def classify(self, features: Tensor) -> Tensor:
        return linear(features, self.parameters["classifier.weight"], self.parameters["classifier.bias"])

    def __call__(self, v) -> Tensor:
        if self.config.mode == "segmented":
            return forward_segmented(self, v)
        return forward_continuous(self, v)


def _check_features(model: Model, v) -> Tensor:
    v = v if isinstance(v, Tensor) else Tensor(v)
    if v.ndim != 2 or v.shape[1] != model.config.D:
        raise ShapeError(f"expected T x {model.config.D} features, got shape {v.shape}")
    if v.shape[0] < 1:
        raise ShapeError("feature sequence is empty")
    return v


def _lstm_direction(model: Model, v: Tensor, direction: str) -> list[Tensor]:
    """Run one LSTM direction; returns hidden states in time order (each 1 x H)."""
    H = model.config.hidden
    p = model.parameters
    w_hidden = p[f"lstm.{direction}.w_hidden"]
    xp = matmul(v, p[f"lstm.{direction}.w_input"]) + p[f"lstm.{direction}.bias"]
    T = v.shape[0]
    steps = range(T) if direction == "fwd" else range(T - 1, -1, -1)
    h = Tensor(np.zeros((1, H)))
    c = Tensor(np.zeros((1, H)))
    hs: list[Tensor | None] = [None] * T
    for t in steps:
        gates = xp[t:t + 1] + matmul(h, w_hidden)
        i = gates[:, :H].sigmoid()
        f = gates[:, H:2 * H].sigmoid()
        g = gates[:, 2 * H:3 * H].tanh()
        o = gates[:, 3 * H:].sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        hs[t] = h
    return hs


def bilstm_forward(model: Model, v: Tensor) -> Tensor:
    """Concatenate the final hidden state of the forward and the backward pass."""
    v = _check_features(model, v)
    fwd = _lstm_direction(model, v, "fwd")
    bwd = _lstm_direction(model, v, "bwd")
    return concat([fwd[-1], bwd[0]], axis=1).reshape(-1)


def forward_segmented(model: Model, v) -> Tensor:
    cfg = model.config
    if cfg.mode != "segmented":
        raise ConfigError("forward_segmented called on a continuous head")
    v = _check_features(model, v)
    T = v.shape[0]
    kind = cfg.kind
    if kind in ("mean_pool", "max_pool"):
        feats = pool_time(v, "max" if kind == "max_pool" else "mean")
    elif kind == "pyramid":
        feats = pyramid_pool(v, cfg.pyramid_levels).reshape(-1)
    elif kind == "temporal_conv":
        if T < cfg.L:
            raise ShapeError(f"temporal_conv needs T >= {cfg.L} frames, got T={T}")
        feats = pool_time(conv1d_temporal(v, model["conv.kernel"], "valid"), "max")
    elif kind == "sub_events":
        F = filters.build_gaussian_filters(model.sub_bank(), T)
        feats = filters.apply_subevents_segmented(F, v).reshape(-1)
    elif kind == "bilstm":
        feats = bilstm_forward(model, v)
    else:
        raise ConfigError(f"{kind!r} has no segmented form")
    return model.classify(feats)


def _super_context(model: Model, v: Tensor) -> Tensor:
    """Super-event summary repeated on every frame: T x (C*D)."""
    bank = model.super_bank()
    T = v.shape[0]
    S = filters.super_event_representation(
        filters.build_cauchy_filters(bank, T), filters.attention_weights(bank), v
    )
    return matmul(Tensor(np.ones((T, 1))), S.reshape(1, -1))


def forward_continuous(model: Model, v) -> Tensor:
    cfg = model.config
    if cfg.mode != "continuous":
        raise ConfigError("forward_continuous called on a segmented head")
    v = _check_features(model, v)
    T = v.shape[0]
    kind = cfg.kind
    if cfg.L is not None and cfg.L > T:
        raise ShapeError(f"window L={cfg.L} exceeds sequence length T={T}")
    if kind == "per_frame":
        feats = v
    elif kind in ("max_pool", "mean_pool"):
        win = sliding_windows(v, cfg.L, "same")
        feats = win.max(axis=1) if kind == "max_pool" else win.mean(axis=1)
    elif kind == "pyramid":
        win = sliding_windows(v, cfg.L, "same")
        feats = pyramid_pool(win, cfg.pyramid_levels).reshape(T, -1)
    elif kind == "temporal_conv":
        feats = conv1d_temporal(v, model["conv.kernel"], "same")
    elif kind == "sub_events":
        F = filters.build_gaussian_filters(model.sub_bank(), cfg.L)
        feats = filters.apply_subevents_continuous(F, v)
    elif kind == "super_events":
        feats = concat([v, _super_context(model, v)], axis=1)
    elif kind == "sub_super":
        F = filters.build_gaussian_filters(model.sub_bank(), cfg.L)
        feats = concat([filters.apply_subevents_continuous(F, v), _super_context(model, v)], axis=1)
    elif kind == "bilstm":
        fwd = _lstm_direction(model, v, "fwd")
        bwd = _lstm_direction(model, v, "bwd")
        feats = concat([concat(fwd, axis=0), concat(bwd, axis=0)], axis=1)
    else:
        raise ConfigError(f"unknown head kind {kind!r}")
    return model.classify(feats)


def abbreviate(n: int) -> str:
    """Round a parameter count the way the results tables do (16K, 10.5M)."""
    if n >= 1_000_000:
        return f"{n / 1e6:.1f}M"
    if n >= 1_000:
        return f"{round(n / 1e3)}K"
    return str(n)
