"""Piecewise-Legendre (LegP) multiscale machinery.

Coefficients at one scale live in the orthonormal shifted-Legendre basis of a
window; two adjacent half-windows merge into the parent window through the
two-scale matrices ``H_left``/``H_right`` and split back through their
pseudo-inverses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .hippo import legendre_basis
from .tensor import NoConvergence


class IllConditioned(ValueError):
    pass


def _legendre_with_derivative(k: int, x: np.ndarray):
    p_prev, p = np.ones_like(x), x.copy()
    if k == 0:
        return np.ones_like(x), np.zeros_like(x)
    for j in range(1, k):
        p_prev, p = p, ((2 * j + 1) * x * p - j * p_prev) / (j + 1)
    dp = k * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def gauss_legendre(k: int, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the k-point Gauss-Legendre rule on [-1, 1].

    Roots of ``P_k`` by Newton iteration started from Chebyshev points.
    """
    if not 1 <= k <= 256:
        raise ValueError("k must be in [1, 256]")
    if k == 1:
        return np.zeros(1), np.full(1, 2.0)
    x = np.cos(np.pi * (np.arange(k) + 0.5) / k)
    for _ in range(max_iter):
        p, dp = _legendre_with_derivative(k, x)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-15:
            break
    else:
        raise NoConvergence("Newton iteration for Legendre roots did not converge")
    _, dp = _legendre_with_derivative(k, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    return x[order], w[order]


def orthonormal_basis(k: int, t) -> np.ndarray:
    """``sqrt(2n+1) P_n(2t-1)`` for n < k: orthonormal in L2([0, 1])."""
    return np.sqrt(2.0 * np.arange(k) + 1.0)[:, None] * legendre_basis(k, np.atleast_1d(t))


@dataclass
class TwoScaleOperators:
    H_left: np.ndarray
    H_right: np.ndarray
    Hd_left: np.ndarray
    Hd_right: np.ndarray
    trainable: bool = False

    @property
    def k(self) -> int:
        return self.H_left.shape[0]


def build_two_scale(k: int, trainable: bool = False, tol: float = 1e-8) -> TwoScaleOperators:
    """Exact two-scale matrices for the degree-<k Legendre basis.

    ``H_side[i, j] = <phi_i, phi_j^side>`` where ``phi_j^side`` is the
    basis of the half window rescaled to stay orthonormal on [0, 1]. The
    stacked ``[H_left, H_right]`` has orthonormal rows, so its pseudo-inverse
    is its transpose.
    """
    if not 1 <= k <= 64:
        raise ValueError("k must be in [1, 64]")
    x, w = gauss_legendre(2 * k)
    y = 0.5 * (x + 1.0)
    w = 0.5 * w
    fine = orthonormal_basis(k, y)
    coarse_left = orthonormal_basis(k, 0.5 * y)
    coarse_right = orthonormal_basis(k, 0.5 * y + 0.5)
    H_left = (coarse_left * w) @ fine.T / np.sqrt(2.0)
    H_right = (coarse_right * w) @ fine.T / np.sqrt(2.0)
    stacked = np.hstack([H_left, H_right])
    residual = np.max(np.abs(stacked @ stacked.T - np.eye(k)))
    if residual > tol:
        raise IllConditioned(f"two-scale rows not orthonormal (residual {residual:.2e})")
    return TwoScaleOperators(H_left, H_right, H_left.T.copy(), H_right.T.copy(), trainable)


def project_up(left, right, H_left, H_right):
    """Parent-window coefficients from the two children (last axis = coefficients)."""
    return ad.einsum("...j,ij->...i", left, H_left) + ad.einsum("...j,ij->...i", right, H_right)


def project_down(parent, Hd_left, Hd_right):
    return ad.einsum("...j,ij->...i", parent, Hd_left), ad.einsum("...j,ij->...i", parent, Hd_right)


def default_scales(length: int) -> int:
    return int(np.floor(np.log2(length))) if length >= 1 else 0


def legp_block(x, ops, r_max: int, basis=None, axis: int = 1, include_input: bool = True):
    """Multiscale pass over a state trajectory.

    Adjacent positions along ``axis`` are merged pairwise up to ``r_max``
    times; every coarse level is split back down to full length and all
    levels are summed with the input. Odd lengths are zero-padded at the
    tail. With a readout ``y = Re(sum_n C_n x_n)`` shared across levels, this
    equals reading out each scale separately and summing.

    ``ops`` is a :class:`TwoScaleOperators` or a 4-tuple of (possibly taped)
    ``(H_left, H_right, Hd_left, Hd_right)``. ``basis`` maps stored states to
    Legendre coordinates (``x_leg = basis @ x``), e.g. the unitary
    eigenvectors of a diagonalized system; its inverse is its conjugate
    transpose. ``include_input=False`` returns only the coarse-level sum.
    """
    if r_max == 0:
        return x if include_input else ad.mul(x, 0.0)
    if isinstance(ops, TwoScaleOperators):
        ops = (ops.H_left, ops.H_right, ops.Hd_left, ops.Hd_right)
    H_left, H_right, Hd_left, Hd_right = ops
    if not isinstance(x, ad.Var):
        x = np.asarray(x)
    nd = x.ndim
    axis = axis % nd
    if basis is not None:
        x_leg = ad.einsum("...m,nm->...n", x, np.asarray(basis))
    else:
        x_leg = x
    x_leg = ad.moveaxis(x_leg, axis, 0)
    length = x_leg.shape[0]
    if length < 2:
        raise ValueError("legp_block needs at least two positions")

    levels = [x_leg]
    lengths = [length]
    cur = x_leg
    for _ in range(r_max):
        n = cur.shape[0]
        if n % 2:
            cur = ad.pad(cur, (0, 1), axis=0)
        cur = project_up(cur[0::2], cur[1::2], H_left, H_right)
        levels.append(cur)
        lengths.append(n)
    total = x_leg if include_input else None
    for r in range(1, len(levels)):
        y = levels[r]
        for n in reversed(lengths[1 : r + 1]):
            left, right = project_down(y, Hd_left, Hd_right)
            y = ad.stack([left, right], axis=1)
            y = ad.reshape(y, (2 * y.shape[0],) + tuple(y.shape[2:]))
            y = y[:n]
        total = y if total is None else total + y
    total = ad.moveaxis(total, 0, axis)
    if basis is not None:
        total = ad.einsum("...m,mn->...n", total, np.conj(np.asarray(basis)))
    return total


def piecewise_projection(f_values: np.ndarray, t: np.ndarray, weights: np.ndarray, k: int, r: int):
    """L2-orthogonal projection onto piecewise polynomials of degree < k on
    ``2**r`` equal pieces of [0, 1], given samples on a quadrature grid."""
    pieces = 2**r
    idx = np.minimum((t * pieces).astype(int), pieces - 1)
    local = t * pieces - idx
    phi = orthonormal_basis(k, local) * np.sqrt(pieces)
    out = np.zeros_like(f_values)
    for piece in range(pieces):
        sel = idx == piece
        coef = (phi[:, sel] * weights[sel]) @ f_values[sel]
        out[sel] = coef @ phi[:, sel]
    return out


def composite_gauss(n_pieces: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre grid on [0, 1]: ``n_pieces * order`` points."""
    x, w = gauss_legendre(order)
    edges = np.arange(n_pieces) / n_pieces
    h = 1.0 / n_pieces
    t = (edges[:, None] + h * 0.5 * (x[None, :] + 1.0)).ravel()
    wt = np.tile(0.5 * h * w, n_pieces)
    return t, wt


def projection_error(f, k: int, r: int, n_points: int = 10_000) -> float:
    """``||f - Q_r^k f||_2`` on [0, 1] using a ``n_points`` composite quadrature
    aligned with the finest pieces."""
    order = 10
    pieces = max(2**r, n_points // order)
    pieces = (pieces // 2**r) * 2**r
    t, w = composite_gauss(pieces, order)
    fv = f(t)
    g = piecewise_projection(fv, t, w, k, r)
    return float(np.sqrt(np.sum(w * (fv - g) ** 2)))
