"""Three ways to evaluate a discretized SSM: sequential recurrence, associative
scan and causal convolution. Shapes follow ``(batch, length, channels, state)``
for per-step parameters and ``(batch, length, channels)`` for inputs/outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import fft, ifft


class ShapeMismatch(ValueError):
    pass


class SingularTransform(ValueError):
    pass


@dataclass(frozen=True)
class TimeVaryingParams:
    A_bar: np.ndarray
    B_bar: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        try:
            shape = np.broadcast_shapes(self.A_bar.shape, self.B_bar.shape, self.C.shape)
        except ValueError as exc:
            raise ShapeMismatch(str(exc)) from None
        if len(shape) != 4:
            raise ShapeMismatch(f"expected (batch, length, channels, N), got {shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return np.broadcast_shapes(self.A_bar.shape, self.B_bar.shape, self.C.shape)

    @classmethod
    def time_invariant(cls, lam, B, C, delta, batch: int, length: int, channels: int):
        """Constant diagonal system ``(exp(delta lam), delta B, C)`` tiled over steps."""
        lam, B, C = (np.asarray(v, dtype=np.complex128) for v in (lam, B, C))
        shape = (batch, length, channels, lam.shape[-1])
        return cls(
            np.broadcast_to(np.exp(delta * lam), shape),
            np.broadcast_to(delta * B, shape),
            np.broadcast_to(C, shape),
        )


def _check_input(shape, u):
    if u.ndim != 3 or u.shape != tuple(shape[:3]):
        raise ShapeMismatch(f"input shape {u.shape} does not match parameters {shape[:3]}")


def recur_sequential(params: TimeVaryingParams, u, x0=None):
    """Step ``x_t = A_t * x_{t-1} + B_t u_t`` and read out ``y_t = Re(sum_n C_t x_t)``."""
    u = np.asarray(u)
    shape = params.shape
    _check_input(shape, u)
    batch, length, channels, n = shape
    A = np.broadcast_to(params.A_bar, shape)
    B = np.broadcast_to(params.B_bar, shape)
    C = np.broadcast_to(params.C, shape)
    dtype = np.result_type(A, B, C, u)
    x = np.zeros((batch, channels, n), dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    xs = np.empty(shape, dtype=dtype)
    for t in range(length):
        x = A[:, t] * x + B[:, t] * u[:, t, :, None]
        xs[:, t] = x
    y = np.sum(C * xs, axis=-1).real
    return y, xs


def recur_dense(A_bar, B_bar, C, u, x0=None):
    """Time-invariant recurrence with a full state matrix, shared by every channel.

    ``B_bar`` and ``C`` are ``(N,)`` or per-channel ``(channels, N)``.
    """
    u = np.asarray(u)
    A_bar = np.asarray(A_bar)
    if u.ndim != 3:
        raise ShapeMismatch("input must be (batch, length, channels)")
    batch, length, channels = u.shape
    n = A_bar.shape[0]
    B_bar = np.broadcast_to(B_bar, (channels, n))
    C = np.broadcast_to(C, (channels, n))
    dtype = np.result_type(A_bar, B_bar, C, u)
    x = np.zeros((batch, channels, n), dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    xs = np.empty((batch, length, channels, n), dtype=dtype)
    for t in range(length):
        x = x @ A_bar.T + B_bar * u[:, t, :, None]
        xs[:, t] = x
    y = np.sum(C * xs, axis=-1).real
    return y, xs


def combine(first, second):
    """Compose two affine maps ``x -> a x + b``: apply ``first`` then ``second``."""
    a1, b1 = first
    a2, b2 = second
    return a2 * a1, a2 * b1 + b2


def linear_scan(a, b, axis: int = 1):
    """All prefixes of ``x_t = a_t x_{t-1} + b_t`` from ``x_{-1} = 0``.

    Work-efficient up-sweep/down-sweep over ``axis``; the length is padded to
    a power of two with identity elements ``(1, 0)``. The tree shape depends
    only on the length, so results are reproducible run to run.
    """
    a, b = np.broadcast_arrays(np.asarray(a), np.asarray(b))
    dtype = np.result_type(a, b)
    a = np.moveaxis(a, axis, 0).astype(dtype)
    b = np.moveaxis(b, axis, 0).astype(dtype)
    length = a.shape[0]
    size = 1 << max(0, (length - 1).bit_length())
    if size != length:
        pad = [(0, size - length)] + [(0, 0)] * (a.ndim - 1)
        a = np.pad(a, pad, constant_values=1)
        b = np.pad(b, pad, constant_values=0)

    levels = size.bit_length() - 1
    for d in range(levels):
        step = 1 << (d + 1)
        right = np.arange(step - 1, size, step)
        left = right - (1 << d)
        a[right], b[right] = combine((a[left], b[left]), (a[right], b[right]))
    for d in range(levels - 2, -1, -1):
        step = 1 << (d + 1)
        left = np.arange(step - 1, size - (1 << d), step)
        right = left + (1 << d)
        a[right], b[right] = combine((a[left], b[left]), (a[right], b[right]))
    return np.moveaxis(b[:length], 0, axis)


def scan_parallel(params: TimeVaryingParams, u, return_states: bool = False):
    u = np.asarray(u)
    shape = params.shape
    _check_input(shape, u)
    B = np.broadcast_to(params.B_bar, shape)
    xs = linear_scan(np.broadcast_to(params.A_bar, shape), B * u[..., None], axis=1)
    y = np.sum(np.broadcast_to(params.C, shape) * xs, axis=-1).real
    return (y, xs) if return_states else y


def conv_kernel(lam, B, C, delta: float, length: int) -> np.ndarray:
    """``K[l] = Re(sum_n C_n exp(l delta lam_n) delta B_n)``; leading dims of the
    parameters (e.g. channels) are kept, time goes first."""
    lam = np.asarray(lam, dtype=np.complex128)
    steps = np.arange(length).reshape((length,) + (1,) * lam.ndim)
    powers = np.exp(steps * delta * lam)
    return np.sum(np.asarray(C) * powers * (delta * np.asarray(B)), axis=-1).real


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def causal_conv(K, u, axis: int = 1):
    """``y_t = sum_{j<=t} K_j u_{t-j}`` along ``axis`` by zero-padded FFT.

    ``K`` carries time on its first axis; its remaining axes broadcast
    against the dims of ``u`` that follow ``axis``.
    """
    u = np.moveaxis(np.asarray(u, dtype=float), axis, -1)
    K = np.moveaxis(np.asarray(K, dtype=float), 0, -1)
    length = u.shape[-1]
    if K.shape[-1] != length:
        raise ShapeMismatch("kernel and input lengths differ")
    size = _next_pow2(2 * length)
    pad_u = np.zeros(u.shape[:-1] + (size,))
    pad_u[..., :length] = u
    pad_k = np.zeros(K.shape[:-1] + (size,))
    pad_k[..., :length] = K
    y = ifft(fft(pad_k) * fft(pad_u))[..., :length].real
    return np.moveaxis(y, -1, axis)


def conjugate_system(T, A, B, C, max_cond: float = 1e6):
    """Change of state coordinates ``x = T z``: ``(T^-1 A T, T^-1 B, C T)``."""
    T = np.asarray(T)
    cond = np.linalg.cond(T)
    if not np.isfinite(cond) or cond > max_cond:
        raise SingularTransform(f"condition number {cond:.3e} exceeds {max_cond:.0e}")
    T_inv = np.linalg.inv(T)
    return T_inv @ np.asarray(A) @ T, T_inv @ np.asarray(B), np.asarray(C) @ T


def characteristic_poly(A) -> np.ndarray:
    """Coefficients ``[1, c_1, ..., c_n]`` of ``det(zI - A)`` (Faddeev-LeVerrier)."""
    A = np.asarray(A)
    n = A.shape[0]
    coeffs = [np.array(1.0, dtype=A.dtype)]
    M = np.zeros_like(A)
    eye = np.eye(n, dtype=A.dtype)
    for k in range(1, n + 1):
        M = A @ M + coeffs[-1] * eye
        coeffs.append(-np.trace(A @ M) / k)
    return np.array(coeffs)
