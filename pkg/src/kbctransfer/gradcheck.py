"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _patterns_equal(a: list, b: list) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def numeric_gradient(fn: Callable[[], Tensor], param: Tensor, coords: np.ndarray, eps: float = 1e-5):
    """Central differences of ``fn()`` w.r.t. ``param`` at flat ``coords``.

    Returns ``(values, usable)``; a coordinate is unusable when a perturbation
    changes the activation pattern of any relu/abs, i.e. crosses a kink.
    """
    with T.no_grad(), T.track_kinks() as base:
        fn()
    base = list(base)
    flat = param.data.reshape(-1)
    values = np.zeros(len(coords))
    usable = np.ones(len(coords), dtype=bool)
    for i, c in enumerate(coords):
        orig = flat[c]
        out = []
        for step in (eps, -eps):
            flat[c] = orig + step
            with T.no_grad(), T.track_kinks() as kinks:
                out.append(float(fn().item()))
            usable[i] &= _patterns_equal(base, kinks)
        flat[c] = orig
        values[i] = (out[0] - out[1]) / (2 * eps)
    return values, usable


ABS_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|)``; the denominator is floored so all-but-zero gradients compare absolutely."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), ABS_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[[], Tensor], params: dict[str, Tensor], rng: np.random.Generator,
                    n_coords: int = 12, eps: float = 1e-5) -> dict[str, float]:
    """Relative error between backprop and finite differences, per parameter.

    ``fn`` must be deterministic (reseed any dropout inside it) and should
    run in 64-bit.  Up to ``n_coords`` coordinates are sampled per tensor.
    """
    T.zero_grad(params.values())
    grads = T.backward(fn(), params.values())
    errors = {}
    for (name, p), g in zip(params.items(), grads):
        k = min(n_coords, p.size)
        coords = rng.choice(p.size, size=k, replace=False)
        numeric, usable = numeric_gradient(fn, p, coords, eps)
        if not usable.any():
            continue
        errors[name] = relative_error(g.reshape(-1)[coords][usable], numeric[usable])
    return errors


def check_directional(fn: Callable[[], Tensor], params: dict[str, Tensor], rng: np.random.Generator,
                      eps: float = 1e-5, attempts: int = 3) -> dict[str, float]:
    """Per-tensor check of ``grad . v`` against a central difference along a random unit ``v``.

    Covers every coordinate with two evaluations per tensor.  Directions
    that cross a kink are redrawn up to ``attempts`` times, then skipped.
    """
    T.zero_grad(params.values())
    grads = T.backward(fn(), params.values())
    with T.no_grad(), T.track_kinks() as base:
        fn()
    base = list(base)
    errors = {}
    for (name, p), g in zip(params.items(), grads):
        orig = p.data.copy()
        for _ in range(attempts):
            v = rng.standard_normal(p.shape)
            v /= np.linalg.norm(v)
            out = []
            smooth = True
            for step in (eps, -eps):
                p.data = orig + step * v
                with T.no_grad(), T.track_kinks() as kinks:
                    out.append(float(fn().item()))
                smooth &= _patterns_equal(base, kinks)
            p.data = orig
            if smooth:
                numeric = (out[0] - out[1]) / (2 * eps)
                errors[name] = relative_error(np.array([float(np.sum(g * v))]), np.array([numeric]))
                break
    return errors
