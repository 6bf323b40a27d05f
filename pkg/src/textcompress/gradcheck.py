"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6,
                   indices: Sequence[tuple] | None = None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place.

    ``indices`` restricts the probe to a subset of entries; the rest stay 0.
    """
    grad = np.zeros_like(x)
    for ix in indices if indices is not None else np.ndindex(*x.shape):
        old = x[ix]
        x[ix] = old + h
        fp = f()
        x[ix] = old - h
        fm = f()
        x[ix] = old
        grad[ix] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with a floor so all-zero gradients compare as equal."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6,
                    max_entries: int | None = None, rng: np.random.Generator | None = None) -> dict[int, float]:
    """Relative error per parameter (by position) between backprop and central differences.

    With ``max_entries`` each parameter is probed on a random subset of that many entries,
    and the analytic gradient is compared on the same subset.
    """
    params = list(params)
    loss = loss_fn()
    for p in params:
        p.grad = None
    ad.backward(loss, params)
    rng = rng or np.random.default_rng(0)

    def value() -> float:
        with ad.no_grad():
            return loss_fn().item()

    errors = {}
    for i, p in enumerate(params):
        analytic = p.grad.copy()
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            flat = rng.choice(p.data.size, size=max_entries, replace=False)
            idx = [np.unravel_index(int(j), p.data.shape) for j in flat]
            mask = np.zeros(p.data.shape, dtype=bool)
            for ix in idx:
                mask[ix] = True
            analytic = np.where(mask, analytic, 0.0)
        numeric = numerical_grad(value, p.data, h, idx)
        errors[i] = relative_error(analytic, numeric)
    return errors
