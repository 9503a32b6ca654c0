"""Central finite-difference gradients, for checking the tape."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm relative error: max|a - n| / max(max|a|, max|n|, floor)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5) -> dict[str, float]:
    """Relative error between tape and finite-difference gradients, per parameter.

    ``loss_fn`` must rebuild the graph from ``params`` on every call.
    """
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    errors = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_gradient(lambda: loss_fn().item(), p.data, h)
        errors[name] = relative_error(analytic, numeric)
    return errors


def random_target(task: str, T: int, C: int, rng: np.random.Generator):
    if task == "multilabel":
        return rng.integers(0, 2, C).astype(float)
    if task == "detection":
        return rng.integers(0, 2, (T, C)).astype(float)
    if task == "speed":
        return float(rng.uniform(70, 100))
    return int(rng.integers(0, C))


def head_gradient_errors(config, T: int, seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of the task loss of a freshly initialized head.

    Inputs are uniform in [-2, 2]; returns the relative error per parameter.
    """
    from .heads import Model
    from .training import example_loss

    rng = np.random.default_rng(seed)
    model = Model.init(config, seed)
    v = rng.uniform(-2, 2, (T, config.D))
    target = random_target(config.task, T, config.C, rng)
    return check_gradients(lambda: example_loss(model, v, target, config.task), model.parameters, h)
