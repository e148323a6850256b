"""Memory benchmark: project band-limited noise online onto a HiPPO basis and
reconstruct the most recent window from the final state.

All three families run ``x' = (A x + B u) / theta``. For LegT and LegP the
state holds shifted-Legendre coefficients of the last ``theta`` seconds
(probability-normalized); for LegS the memory is the exponentially warped
history ``tau = exp((s - t) / theta)``. LegP is LegT at window
``theta / 2**scales``: snapshots of its state taken every sub-window give
the finest-scale pieces, and the two-scale operators lift them to coarser
scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hippo import Family, HippoSpec, legendre_basis
from .legp import build_two_scale, projection_error, project_up


@dataclass(frozen=True)
class SignalSpec:
    length: int = 100_000
    dt: float = 1e-4
    band_limit: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.length < 2:
            raise ValueError("length must be >= 2")
        if self.dt <= 0 or self.band_limit <= 0:
            raise ValueError("dt and band_limit must be positive")
        if self.dt * self.band_limit > 0.5 + 1e-12:
            raise ValueError(f"band limit {self.band_limit} Hz exceeds Nyquist {0.5 / self.dt} Hz")


def bandlimited_noise(spec: SignalSpec) -> np.ndarray:
    """Gaussian white noise with every FFT bin above ``band_limit`` zeroed, rescaled to unit variance."""
    rng = np.random.default_rng(spec.seed)
    white = rng.standard_normal(spec.length)
    coeffs = np.fft.rfft(white)
    coeffs[np.fft.rfftfreq(spec.length, spec.dt) > spec.band_limit] = 0.0
    x = np.fft.irfft(coeffs, n=spec.length)
    return x / x.std()


def _family(family) -> Family:
    family = Family(family)
    if family is Family.S4D_REAL:
        raise ValueError("online projection needs a HiPPO family (legs, legt, legp)")
    return family


def effective_window(family, window: float, scales: int) -> float:
    return window / 2**scales if _family(family) is Family.LEGP else window


def online_project(
    u,
    family,
    n: int = 64,
    window: float = 1.0,
    dt: float = 1e-4,
    scales: int = 3,
    alpha: float = 0.5,
    record=None,
) -> np.ndarray:
    """Integrate ``x' = (A x + B u) / theta`` from ``x = 0`` with the
    generalized bilinear rule, the input taken at the same ``alpha`` blend.

    Returns the state after every sample ``(len(u), n)``, or only after the
    sample indices in ``record``.
    """
    u = np.asarray(u, dtype=float)
    theta = effective_window(family, window, scales)
    sys = HippoSpec(_family(family), n).dense()
    h = dt / theta
    eye = np.eye(n)
    lhs = eye - alpha * h * sys.A
    M = np.linalg.solve(lhs, eye + (1.0 - alpha) * h * sys.A)
    G = np.linalg.solve(lhs, h * sys.B)
    keep = np.arange(len(u)) if record is None else np.asarray(record, dtype=int)
    slot = {int(i): k for k, i in enumerate(keep)}
    out = np.zeros((len(keep), n))
    x = np.zeros(n)
    prev = 0.0
    last = int(keep.max()) if len(keep) else -1
    for t in range(last + 1):
        x = M @ x + G * (alpha * u[t] + (1.0 - alpha) * prev)
        prev = u[t]
        if t in slot:
            out[slot[t]] = x
    return out


def _orthonormal(n: int, tau) -> np.ndarray:
    return np.sqrt(2.0 * np.arange(n) + 1.0)[:, None] * legendre_basis(n, tau)


def window_samples(window: float, dt: float) -> int:
    return int(round(window / dt))


def reconstruct(x_at_T, family, window: float = 1.0, dt: float = 1e-4) -> np.ndarray:
    """``u_hat(s) = sum_n x_n p_n(s)`` on the ``window / dt`` samples ending at T.

    ``x_at_T`` is one state ``(n,)`` for LegS/LegT, or ``(pieces, n)`` for
    LegP, oldest piece first.
    """
    family = _family(family)
    W = window_samples(window, dt)
    x = np.atleast_2d(np.asarray(x_at_T, dtype=float))
    if family is Family.LEGS:
        lag = (W - 1 - np.arange(W)) * dt
        return x[0] @ _orthonormal(x.shape[1], np.exp(-lag / window))
    pieces = x.shape[0]
    if W % pieces:
        raise ValueError(f"{W} window samples do not split into {pieces} pieces")
    w = W // pieces
    basis = _orthonormal(x.shape[1], (np.arange(w) + 1.0) / w)
    return (x @ basis).reshape(-1)


def legp_pieces(u, n: int = 64, window: float = 1.0, dt: float = 1e-4, scales: int = 3, alpha: float = 0.5):
    """Finest-scale LegP coefficients ``(2**scales, n)`` covering the last window."""
    W = window_samples(window, dt)
    pieces = 2**scales
    if W % pieces:
        raise ValueError(f"{W} window samples do not split into {pieces} pieces")
    w = W // pieces
    end = len(u) - 1
    record = [end - (pieces - 1 - j) * w for j in range(pieces)]
    if record[0] < 0:
        raise ValueError("signal shorter than one window")
    return online_project(u, "legp", n, window, dt, scales, alpha, record=record)


def legp_scale_coefficients(pieces: np.ndarray, ops=None) -> list[np.ndarray]:
    """Coefficients at every scale, finest first; each level halves the piece count.

    States are normalized per piece (mean over the piece), so each merge
    carries a ``1/sqrt(2)`` on top of the orthonormal two-scale operators.
    """
    pieces = np.asarray(pieces, dtype=float)
    count, n = pieces.shape
    if count & (count - 1):
        raise ValueError("piece count must be a power of two")
    ops = build_two_scale(n) if ops is None else ops
    levels = [pieces]
    while levels[-1].shape[0] > 1:
        cur = levels[-1]
        levels.append(project_up(cur[0::2], cur[1::2], ops.H_left, ops.H_right) / np.sqrt(2.0))
    return levels


def error(u, u_hat) -> float:
    u, u_hat = np.asarray(u, dtype=float), np.asarray(u_hat, dtype=float)
    return float(np.mean((u - u_hat) ** 2))


@dataclass
class Reconstruction:
    family: str
    n: int
    seed: int
    mse: float
    target: np.ndarray
    estimate: np.ndarray


def run_reconstruction(
    family, n: int = 64, spec: SignalSpec | None = None, window: float = 1.0, scales: int = 3, alpha: float = 0.5
) -> Reconstruction:
    """Final-window reconstruction of one noise draw."""
    spec = spec or SignalSpec()
    family = _family(family)
    u = bandlimited_noise(spec)
    W = window_samples(window, spec.dt)
    if family is Family.LEGP:
        state = legp_pieces(u, n, window, spec.dt, scales, alpha)
    else:
        state = online_project(u, family, n, window, spec.dt, scales, alpha, record=[len(u) - 1])[0]
    est = reconstruct(state, family, window, spec.dt)
    target = u[-W:]
    return Reconstruction(family.value, n, spec.seed, error(target, est), target, est)


def exact_window_coefficients(u_window, n: int) -> np.ndarray:
    """Discrete projection of window samples onto the first ``n`` orthonormal
    Legendre functions (sample mean as the inner product)."""
    u_window = np.asarray(u_window, dtype=float)
    W = len(u_window)
    return _orthonormal(n, (np.arange(W) + 1.0) / W) @ u_window / W


# --- projection rate -------------------------------------------------------


@dataclass
class RateTable:
    k: int
    scales: list[int]
    errors: list[float]
    ratios: list[float]
    bound: float

    @property
    def ok(self) -> bool:
        return all(r <= self.bound for r in self.ratios)


def error_rate_table(k: int, scales=range(4), f=None, slack: float = 1.5) -> RateTable:
    """Errors of the degree-<k piecewise projection at each scale and the
    ratios between consecutive scales, against the bound ``slack * 2**-k``."""
    f = f if f is not None else (lambda t: np.sin(2 * np.pi * t))
    scales = list(scales)
    errors = [projection_error(f, k, r) for r in scales]
    ratios = [b / a if a > 0 else 0.0 for a, b in zip(errors, errors[1:])]
    return RateTable(k, scales, errors, ratios, slack * 2.0**-k)
