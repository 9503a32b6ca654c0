"""Learnable temporal filter banks.

Sub-event banks place ``N`` strided Gaussians per filter; each filter is
controlled by a centre, a stride and a width.  Super-event banks are
Cauchy-shaped structure filters mixed per class by soft attention.  Both
materialize into row-normalized weights over time and are differentiable
with respect to their raw (unconstrained) parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, matmul, sliding_windows, softmax

SIGMA_EPS = 1e-4


@dataclass
class SubEventFilterBank:
    """``M`` filters of ``N`` strided Gaussians each.

    ``center``, ``stride`` and ``width`` are length-``M`` tensors holding the
    raw centre, raw stride and raw width of each filter.
    """

    center: Tensor
    stride: Tensor
    width: Tensor
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"a sub-event filter needs N >= 2 Gaussians (stride divides by N-1), got {self.N}")
        shapes = {self.center.shape, self.stride.shape, self.width.shape}
        if len(shapes) != 1 or self.center.ndim != 1:
            raise ShapeError(f"center/stride/width must be equal-length vectors, got {sorted(shapes)}")

    @property
    def M(self) -> int:
        return self.center.shape[0]

    @classmethod
    def init(cls, M: int, N: int, rng: np.random.Generator, requires_grad: bool = True) -> "SubEventFilterBank":
        return cls(
            center=Tensor(rng.uniform(-0.5, 0.5, M), requires_grad=requires_grad),
            stride=Tensor(rng.uniform(-0.5, 0.5, M), requires_grad=requires_grad),
            width=Tensor(np.full(M, 0.5), requires_grad=requires_grad),
            N=N,
        )


@dataclass
class SuperEventFilterBank:
    """``M`` Cauchy structure filters plus ``C x M`` attention logits."""

    center: Tensor
    width: Tensor
    attention: Tensor

    def __post_init__(self):
        if self.center.shape != self.width.shape or self.center.ndim != 1:
            raise ShapeError(f"center/width must be equal-length vectors, got {self.center.shape}, {self.width.shape}")
        if self.attention.ndim != 2 or self.attention.shape[1] != self.center.shape[0]:
            raise ShapeError(f"attention must be C x {self.center.shape[0]}, got {self.attention.shape}")

    @property
    def M(self) -> int:
        return self.center.shape[0]

    @classmethod
    def init(cls, M: int, C: int, rng: np.random.Generator, requires_grad: bool = True) -> "SuperEventFilterBank":
        return cls(
            center=Tensor(rng.uniform(-0.5, 0.5, M), requires_grad=requires_grad),
            width=Tensor(rng.uniform(-0.5, 0.5, M), requires_grad=requires_grad),
            attention=Tensor(rng.uniform(-0.1, 0.1, (C, M)), requires_grad=requires_grad),
        )


def gaussian_centers(bank: SubEventFilterBank, T: int) -> Tensor:
    """Gaussian centres ``mu[m, i]`` in frame units, shape M x N."""
    if T < 1:
        raise ValueError(f"filter length must be >= 1, got T={T}")
    N = bank.N
    g = (bank.center + 1.0) * (0.5 * T)
    delta = bank.stride * (T / (N - 1))
    offsets = np.arange(N, dtype=np.float64) - 0.5 * N + 0.5
    return g.reshape(-1, 1) + delta.reshape(-1, 1) * offsets.reshape(1, N)


def build_gaussian_filters(bank: SubEventFilterBank, T: int) -> Tensor:
    """Materialize the bank as an M x N x T tensor whose (m, i) rows sum to 1."""
    mu = gaussian_centers(bank, T)
    var = bank.width.square() + SIGMA_EPS
    t = np.arange(T, dtype=np.float64).reshape(1, 1, T)
    sq = (mu.reshape(bank.M, bank.N, 1) - t).square()
    logits = sq / (var.reshape(-1, 1, 1) * -2.0)
    # shift by the row max before exp so far-off centres don't underflow to 0/0
    shift = logits.data.max(axis=2, keepdims=True)
    w = (logits - shift).exp()
    return w / w.sum(axis=2, keepdims=True)


def apply_subevents_segmented(F: Tensor, v: Tensor) -> Tensor:
    """Pool ``v`` (T x D) with every filter row: (M*N) x D."""
    M, N, T = F.shape
    if v.ndim != 2 or v.shape[0] != T:
        raise ShapeError(f"filters have length T={T} but features have shape {v.shape}")
    return matmul(F.reshape(M * N, T), v)


def apply_subevents_continuous(F: Tensor, v: Tensor) -> Tensor:
    """Convolve each filter row along time with every channel of ``v``.

    Filters are M x N x L; windows are centred with edge replication so the
    output keeps all T frames.  Returns T x (M*N*D), ordered (m, i, d).
    """
    M, N, L = F.shape
    if v.ndim != 2:
        raise ShapeError(f"features must be T x D, got {v.shape}")
    T, D = v.shape
    if L > T:
        raise ShapeError(f"filter length L={L} exceeds sequence length T={T}")
    win = sliding_windows(v, L, "same")  # T x L x D
    cols = win.transpose(0, 2, 1).reshape(T * D, L)
    out = matmul(cols, F.reshape(M * N, L).T)  # (T*D) x (M*N)
    return out.reshape(T, D, M * N).transpose(0, 2, 1).reshape(T, M * N * D)


def cauchy_params(bank: SuperEventFilterBank, T: int) -> tuple[Tensor, Tensor]:
    """Return (centre, width) in frame units after the bounding transforms."""
    if T < 1:
        raise ValueError(f"filter length must be >= 1, got T={T}")
    center = (bank.center.tanh() + 1.0) * ((T - 1) / 2.0)
    width = (1.0 - bank.width.tanh().abs() * 2.0).exp()
    return center, width


def build_cauchy_filters(bank: SuperEventFilterBank, T: int) -> Tensor:
    """Materialize the structure filters as T x M, each column summing to 1."""
    center, width = cauchy_params(bank, T)
    t = np.arange(T, dtype=np.float64).reshape(T, 1)
    z = (t - center.reshape(1, -1)) / width.reshape(1, -1)
    dens = 1.0 / ((z.square() + 1.0) * width.reshape(1, -1) * np.pi)
    return dens / dens.sum(axis=0, keepdims=True)


def attention_weights(bank: SuperEventFilterBank) -> Tensor:
    """Per-class softmax over the M structure filters (C x M)."""
    return softmax(bank.attention, axis=1)


def super_event_representation(F: Tensor, A: Tensor, v: Tensor) -> Tensor:
    """Per-class context ``S[c] = sum_m A[c, m] * sum_t F[t, m] * v[t]`` (C x D)."""
    T, M = F.shape
    if v.ndim != 2 or v.shape[0] != T:
        raise ShapeError(f"filters have length T={T} but features have shape {v.shape}")
    if A.ndim != 2 or A.shape[1] != M:
        raise ShapeError(f"attention must be C x {M}, got {A.shape}")
    return matmul(A, matmul(F.T, v))
