"""Continuous-to-discrete conversion: ZOH for the state matrix, forward Euler for B."""

from __future__ import annotations

import numpy as np

from .tensor import matexp


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def discretize_zoh_euler(A, B, delta):
    """Return ``(exp(delta A), delta B)``.

    A 2-D square ``A`` with a scalar step takes the dense path through
    :func:`matexp`. Anything else is treated as a diagonal spectrum and is
    broadcast elementwise against ``delta``; for per-channel steps of shape
    ``(batch, length, channels)`` pass ``delta[..., None]`` so the step
    spreads over the state axis.
    """
    A = np.asarray(A)
    delta_arr = np.asarray(delta, dtype=float)
    if np.any(delta_arr < 0):
        raise ValueError("step sizes must be non-negative")
    B = np.asarray(B)
    if A.ndim == 2 and A.shape[0] == A.shape[1] and delta_arr.ndim == 0 and B.ndim == 1:
        return matexp(float(delta_arr) * A), float(delta_arr) * B
    return np.exp(delta_arr * A), delta_arr * B


def discretize_zoh_exact(lam, B, delta, small: float = 1e-8):
    """Exact zero-order-hold input map ``(exp(delta lam) - 1) / lam * B`` (diagonal only).

    Used as the reference for the Euler rule; never on the training path.
    """
    lam = np.asarray(lam)
    delta = np.asarray(delta, dtype=float)
    z = delta * lam
    tiny = np.abs(z) < small
    safe_lam = np.where(tiny, 1.0, lam)
    factor = np.where(tiny, delta * (1.0 + 0.5 * z), np.expm1(z) / safe_lam)
    return factor * np.asarray(B)
