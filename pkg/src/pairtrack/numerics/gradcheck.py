"""Finite-difference gradient oracle.

``finite_diff_grad`` never touches the tape: it evaluates a plain scalar
function of a numpy array at perturbed points and forms central
differences. It is the independent side of every gradient check in the
test suite, so it must stay free of the reverse-mode machinery.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericError


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate."""
    if h <= 0:
        raise NumericError(f"finite_diff_grad: step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.copy()
    for i in range(x.size):
        view = base.reshape(-1)
        orig = view[i]
        view[i] = orig + h
        fp = float(f(base))
        view[i] = orig - h
        fm = float(f(base))
        view[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"finite_diff_grad: non-finite evaluation at coordinate {i}")
        flat[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_max_rel_error(
    analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-6
) -> float:
    """Worst-coordinate relative error between two gradients.

    Coordinates where both magnitudes sit below ``floor`` are compared
    absolutely against the floor instead, so numerically-zero entries do
    not produce spurious huge ratios.
    """
    a = np.asarray(analytic, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if a.shape != r.shape:
        raise NumericError(f"gradient shapes differ: {a.shape} vs {r.shape}")
    mag = np.maximum(np.abs(a), np.abs(r))
    diff = np.abs(a - r)
    big = mag > floor
    worst = 0.0
    if np.any(big):
        worst = float(np.max(diff[big] / mag[big]))
    if np.any(~big):
        worst = max(worst, float(np.max(diff[~big])) / floor)
    return worst
