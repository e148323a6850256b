"""Dense numeric substrate: Hermitian eigensolver, matrix exponential, FFT, top-k.

Matrices are plain numpy arrays (float64 or complex128). Everything here is
pure; inputs are never modified in place.
"""

from __future__ import annotations

import numpy as np


class NotHermitian(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


MAX_SWEEPS = 100


def _round_robin(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: m-1 rounds of m/2 disjoint index pairs (m even)."""
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array([min(players[i], players[m - 1 - i]) for i in range(m // 2)])
        q = np.array([max(players[i], players[m - 1 - i]) for i in range(m // 2)])
        rounds.append((p, q))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def hermitian_eig(M: np.ndarray, tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the rotations of one round touch disjoint rows/columns and can be
    applied together. ``tol`` is relative to ``max(1, ||M||_F)``: it bounds
    both the allowed asymmetry and the final off-diagonal Frobenius norm.

    Returns ascending real eigenvalues and a unitary matrix of column
    eigenvectors, so that ``M @ V == V @ diag(w)``.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    n = M.shape[0]
    scale = max(1.0, float(np.linalg.norm(M)))
    if n and np.max(np.abs(M - M.conj().T)) > tol * scale:
        raise NotHermitian(f"max |M - M*| = {np.max(np.abs(M - M.conj().T)):.3e}")

    work = 0.5 * (M + M.conj().T).astype(np.complex128)
    V = np.eye(n, dtype=np.complex128)
    if n <= 1:
        return work.real.diagonal().copy(), V

    m = n + (n % 2)
    schedule = _round_robin(m)
    if m != n:
        # drop pairs touching the padding index
        schedule = [(p[q < n], q[q < n]) for p, q in schedule]

    off_mask = ~np.eye(n, dtype=bool)

    def off_norm(X):
        return float(np.linalg.norm(X[off_mask]))

    for _ in range(MAX_SWEEPS):
        if off_norm(work) < tol * scale:
            break
        for p, q in schedule:
            g = work[p, q]
            mag = np.abs(g)
            active = mag > 1e-300
            if not active.any():
                continue
            p, q, g, mag = p[active], q[active], g[active], mag[active]
            a = work[p, p].real
            b = work[q, q].real
            # smaller of the two annihilating angles, |theta| <= pi/4
            tau = (b - a) / (2.0 * mag)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            phase = g / mag  # e^{i phi}
            # columns: X <- X U with U = [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
            for X in (work, V):
                xp = X[:, p].copy()
                xq = X[:, q]
                X[:, p] = c * xp - s * np.conj(phase) * xq
                X[:, q] = s * xp + c * np.conj(phase) * xq
            # rows: X <- U^H X
            rp = work[p, :].copy()
            rq = work[q, :]
            cc, ss, ph = c[:, None], s[:, None], phase[:, None]
            work[p, :] = cc * rp - ss * ph * rq
            work[q, :] = ss * rp + cc * ph * rq
            work[p, q] = 0.0
            work[q, p] = 0.0
    else:
        if off_norm(work) >= tol * scale:
            raise NoConvergence(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")

    w = work.diagonal().real
    order = np.argsort(w, kind="stable")
    return w[order].copy(), V[:, order].copy()


# Padé [6/6] coefficients of exp
_PADE6 = (1.0, 1 / 2, 5 / 44, 1 / 66, 1 / 792, 1 / 15840, 1 / 665280)


def matexp(M: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a [6/6] Padé core."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    n = M.shape[0]
    norm = np.max(np.sum(np.abs(M), axis=0)) if n else 0.0
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = M / (2.0**squarings)

    eye = np.eye(n, dtype=X.dtype)
    powers = [eye, X]
    for _ in range(5):
        powers.append(powers[-1] @ X)
    even = sum(c * P for c, P in zip(_PADE6[0::2], powers[0::2]))
    odd = sum(c * P for c, P in zip(_PADE6[1::2], powers[1::2]))
    R = np.linalg.solve(even - odd, even + odd)
    for _ in range(squarings):
        R = R @ R
    return R


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_radix2(x: np.ndarray, sign: float) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    y = x[..., _bit_reverse(n)].astype(np.complex128)
    m = 1
    while m < n:
        w = np.exp(sign * 2j * np.pi * np.arange(m) / (2 * m))
        y = y.reshape(*lead, n // (2 * m), 2, m)
        even = y[..., 0, :]
        odd = y[..., 1, :] * w
        y = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return y.reshape(*lead, n)


MAX_DFT_LEN = 4096


def _dft(x: np.ndarray, sign: float) -> np.ndarray:
    n = x.shape[-1]
    if n > MAX_DFT_LEN:
        raise ValueError(f"direct DFT limited to length {MAX_DFT_LEN}, got {n}")
    k = np.arange(n)
    W = np.exp(sign * 2j * np.pi * np.outer(k, k) / n)
    return x.astype(np.complex128) @ W.T


def fft(x, axis: int = -1) -> np.ndarray:
    """Unnormalized forward DFT along ``axis``.

    Power-of-two lengths use an iterative radix-2 Cooley-Tukey; any other
    length falls back to the O(n^2) matrix DFT.
    """
    x = np.moveaxis(np.asarray(x), axis, -1)
    n = x.shape[-1]
    y = _fft_radix2(x, -1.0) if _is_pow2(n) else _dft(x, -1.0)
    return np.moveaxis(y, -1, axis)


def ifft(x, axis: int = -1) -> np.ndarray:
    x = np.moveaxis(np.asarray(x), axis, -1)
    n = x.shape[-1]
    y = _fft_radix2(x, 1.0) if _is_pow2(n) else _dft(x, 1.0)
    return np.moveaxis(y / n, -1, axis)


def topk_mask(x, k: int, axis: int = -1, tie_rtol: float = 0.0) -> np.ndarray:
    """Boolean mask of the ``k`` largest-magnitude entries (ties to lower index).

    With ``tie_rtol > 0`` magnitudes are first rounded to multiples of
    ``tie_rtol * max|x|`` along the axis, so near-ties from rounding noise
    (e.g. conjugate bins of a real signal's FFT) resolve by index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.moveaxis(np.asarray(x), axis, -1)
    n = x.shape[-1]
    k = min(k, n)
    mag = np.abs(x)
    if tie_rtol > 0:
        scale = tie_rtol * np.max(mag, axis=-1, keepdims=True)
        mag = np.round(mag / np.where(scale > 0, scale, 1.0))
    order = np.argsort(-mag, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(x.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    return np.moveaxis(mask, -1, axis)


def topk_by_magnitude(x, k: int, axis: int = -1, tie_rtol: float = 0.0) -> np.ndarray:
    x = np.asarray(x)
    return np.where(topk_mask(x, k, axis, tie_rtol), x, 0)


def format_number(v) -> str:
    if np.iscomplexobj(v):
        v = complex(v)
        return f"{v.real + 0.0:.17g}{v.imag + 0.0:+.17g}j"
    return f"{float(v) + 0.0:.17g}"


def format_matrix(M) -> str:
    """Text dump: one row per line, space separated, 17 significant digits."""
    M = np.asarray(M)
    if M.ndim == 1:
        M = M[None, :]
    return "\n".join(" ".join(format_number(v) for v in row) for row in M)


def parse_matrix(text: str) -> np.ndarray:
    rows = [line.split() for line in text.strip().splitlines() if line.strip()]
    is_complex = any(tok.endswith("j") for row in rows for tok in row)
    conv = complex if is_complex else float
    return np.array([[conv(tok) for tok in row] for row in rows])
