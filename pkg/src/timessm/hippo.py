"""HiPPO state matrices, their normal-plus-low-rank forms and diagonalizations."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .tensor import hermitian_eig


class Family(str, Enum):
    LEGS = "legs"
    LEGT = "legt"
    LEGP = "legp"
    S4D_REAL = "s4d-real"


class ResidualNotRank2(ValueError):
    pass


@dataclass(frozen=True)
class DenseSystem:
    A: np.ndarray
    B: np.ndarray
    C_init: np.ndarray


@dataclass(frozen=True)
class NormalForm:
    """``A = A_normal - low_rank @ low_rank.T``."""

    A_normal: np.ndarray
    low_rank: np.ndarray

    def dense_A(self) -> np.ndarray:
        return self.A_normal - self.low_rank @ self.low_rank.T


@dataclass(frozen=True)
class DiagonalSystem:
    """``A_normal == V @ diag(lam) @ V^H`` with unitary ``V``."""

    lam: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.V * self.lam) @ self.V.conj().T


def _c_init(n: int, rng: np.random.Generator | None) -> np.ndarray:
    rng = np.random.default_rng(0) if rng is None else rng
    return rng.standard_normal(n) / np.sqrt(n)


def _sqrt_odd(n: int) -> np.ndarray:
    return np.sqrt(2.0 * np.arange(n) + 1.0)


def build_legs(n: int, rng: np.random.Generator | None = None) -> DenseSystem:
    if n < 1:
        raise ValueError("n must be >= 1")
    r = _sqrt_odd(n)
    row, col = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    A = np.where(row > col, r[:, None] * r[None, :], 0.0)
    A = -(A + np.diag(np.arange(n) + 1.0))
    return DenseSystem(A, r.copy(), _c_init(n, rng))


def build_legt(n: int, rng: np.random.Generator | None = None) -> DenseSystem:
    if n < 1:
        raise ValueError("n must be >= 1")
    r = _sqrt_odd(n)
    row, col = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    sign = np.where(col <= row, 1.0, (-1.0) ** (row - col))
    A = -(r[:, None] * r[None, :]) * sign
    return DenseSystem(A, r.copy(), _c_init(n, rng))


def build_legs_normal(n: int) -> NormalForm:
    if n < 1:
        raise ValueError("n must be >= 1")
    p = np.sqrt(np.arange(n) + 0.5)
    outer = p[:, None] * p[None, :]
    row, col = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    A = np.where(row > col, -outer, outer)
    np.fill_diagonal(A, -0.5)
    return NormalForm(A, p[:, None].copy())


def build_legt_normal(n: int) -> NormalForm:
    """Skew-symmetric part of LegT plus a numerically recovered rank-2 correction.

    Entries couple only indices of opposite parity: ``-s_nk`` below the
    diagonal and ``+s_nk`` above it, with ``s_nk = sqrt((2n+1)(2k+1))``.
    The correction columns come from the top two eigenpairs of the
    (symmetric, positive semidefinite) residual ``A_normal - A``.
    """
    if n < 2 or n % 2:
        raise ValueError("LegT normal form needs an even n >= 2")
    r = _sqrt_odd(n)
    row, col = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    odd_gap = (row - col) % 2 == 1
    outer = r[:, None] * r[None, :]
    A_normal = np.where(odd_gap, np.where(row > col, -outer, outer), 0.0)

    residual = A_normal - build_legt(n).A
    # Jacobi rotations on a real symmetric input stay real
    w, U = hermitian_eig(residual)
    top = U[:, -2:].real * np.sqrt(np.clip(w[-2:], 0.0, None))
    fit_err = np.max(np.abs(residual - top @ top.T))
    if fit_err > 1e-6:
        raise ResidualNotRank2(f"rank-2 fit leaves residual {fit_err:.3e}")
    return NormalForm(A_normal, top)


def diagonalize(nf: NormalForm | np.ndarray, tol: float = 1e-9) -> DiagonalSystem:
    """Unitary diagonalization of a constant-diagonal skew-symmetric matrix.

    ``A - d I`` is skew-symmetric, so ``i (A - d I)`` is Hermitian; its
    eigenvalues ``mu`` give ``lam = d - i mu``. Modes are sorted by imaginary part.
    """
    A = nf.A_normal if isinstance(nf, NormalForm) else np.asarray(nf)
    d = float(np.mean(np.diag(A).real))
    S = A - d * np.eye(A.shape[0])
    if np.max(np.abs(S + S.conj().T)) > tol or np.max(np.abs(np.diag(A) - d)) > tol:
        raise ValueError("matrix is not a shifted skew-symmetric matrix")
    mu, V = hermitian_eig(1j * S)
    lam = d - 1j * mu
    order = np.argsort(lam.imag, kind="stable")
    return DiagonalSystem(lam[order], V[:, order])


def s4d_real_log_a(n: int) -> np.ndarray:
    """Trainable parameterization of S4D-real: ``lam = -exp(log_a)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.log(np.arange(n) + 1.0)


def s4d_real_lambda(log_a: np.ndarray) -> np.ndarray:
    return (-np.exp(np.asarray(log_a, dtype=float))).astype(np.complex128)


def build_s4d_real(n: int) -> np.ndarray:
    return s4d_real_lambda(s4d_real_log_a(n))


def legendre_eval(n: int, t) -> np.ndarray:
    """Shifted Legendre polynomial ``P_n(2t - 1)`` via the three-term recurrence."""
    if not 0 <= n <= 256:
        raise ValueError("degree must be in [0, 256]")
    return legendre_basis(n + 1, t)[-1]


def legendre_basis(n: int, t) -> np.ndarray:
    """Rows ``P_0 .. P_{n-1}`` of the shifted Legendre family evaluated at ``t``."""
    x = 2.0 * np.asarray(t, dtype=float) - 1.0
    out = np.empty((n,) + x.shape)
    out[0] = 1.0
    if n > 1:
        out[1] = x
    for k in range(1, n - 1):
        out[k + 1] = ((2 * k + 1) * x * out[k] - k * out[k - 1]) / (k + 1)
    return out


@dataclass(frozen=True)
class HippoSpec:
    family: Family
    n_state: int
    legp_scales: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.n_state < 1:
            raise ValueError("n_state must be >= 1")
        if self.legp_scales < 0:
            raise ValueError("legp_scales must be >= 0")

    def dense(self, rng: np.random.Generator | None = None) -> DenseSystem:
        if self.family is Family.LEGS:
            return build_legs(self.n_state, rng)
        if self.family in (Family.LEGT, Family.LEGP):
            # LegP shares LegT's dynamics; the scales only add projections
            return build_legt(self.n_state, rng)
        A = np.diag(build_s4d_real(self.n_state).real)
        return DenseSystem(A, np.ones(self.n_state), _c_init(self.n_state, rng))

    def normal(self) -> NormalForm:
        if self.family is Family.LEGS:
            return build_legs_normal(self.n_state)
        if self.family in (Family.LEGT, Family.LEGP):
            return build_legt_normal(self.n_state)
        raise ValueError("S4D-real is already diagonal; it has no normal form")

    def diagonal(self) -> DiagonalSystem:
        if self.family is Family.S4D_REAL:
            return DiagonalSystem(build_s4d_real(self.n_state), np.eye(self.n_state, dtype=complex))
        return diagonalize(self.normal())
