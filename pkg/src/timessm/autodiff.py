"""Tape-based reverse-mode differentiation over a small, fixed op vocabulary.

Every op accepts :class:`Var` or plain arrays. When no input is a ``Var`` the
op simply returns the numpy result, so the same code serves both inference on
arrays and training on a tape.

Complex values follow the usual convention that the adjoint of ``z`` holds
``dL/dRe(z) + i dL/dIm(z)``; a holomorphic op ``y = f(z)`` therefore
back-propagates ``g * conj(f'(z))``, and a real input receives the real part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from . import tensor


class BackwardBeforeForward(RuntimeError):
    pass


class Param:
    """A named trainable tensor with its gradient buffer."""

    def __init__(self, value, name: str, trainable: bool = True):
        self.value = np.array(value, dtype=float)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.trainable = trainable

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        flag = "" if self.trainable else ", frozen"
        return f"Param({self.name}, shape={self.value.shape}{flag})"


@dataclass
class _Record:
    op: str
    inputs: tuple
    vjp: Callable | None
    param: Param | None = None


class Var:
    __array_priority__ = 1000

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    dtype = property(lambda self: self.value.dtype)

    def __repr__(self):
        op = self.tape.records[self.index].op if self.index < len(self.tape.records) else "released"
        return f"Var(#{self.index}, op={op}, shape={self.shape})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(o))

    def __rsub__(self, o):
        return add(o, neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return mul(self, reciprocal(o))

    def __rtruediv__(self, o):
        return mul(o, reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def real(self):
        return real(self)


class Tape:
    """Records ops in execution order; supports exactly one backward pass."""

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def watch(self, param: Param):
        """Leaf for ``param``; frozen params come back as plain constants."""
        if not param.trainable:
            return param.value
        return self._push("param", param.value, (), None, param=param)

    def _push(self, op, value, inputs, vjp, param=None) -> Var:
        if self.consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self.records.append(_Record(op, inputs, vjp, param))
        return Var(value, self, len(self.records) - 1)

    def backward(self, loss: Var):
        if not self.records or not isinstance(loss, Var) or loss.tape is not self:
            raise BackwardBeforeForward("no recorded forward pass for this loss")
        if self.consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        if loss.value.size != 1:
            raise ValueError("loss must be a scalar")
        adj: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for index in range(loss.index, -1, -1):
            g = adj.pop(index, None)
            if g is None:
                continue
            rec = self.records[index]
            if rec.param is not None:
                rec.param.grad = rec.param.grad + np.real(g)
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if not isinstance(inp, Var) or gi is None:
                    continue
                gi = _unbroadcast(gi, inp.value)
                adj[inp.index] = adj[inp.index] + gi if inp.index in adj else gi
        self.consumed = True
        # Vars and records reference each other; drop the records so the
        # saved activations are freed now rather than at the next GC cycle
        self.records = []


def _unbroadcast(g, like):
    g = np.asarray(g)
    while g.ndim > like.ndim:
        g = g.sum(axis=0)
    for ax, n in enumerate(like.shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    if not np.iscomplexobj(like) and np.iscomplexobj(g):
        g = g.real
    return g


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _op(name: str, value, inputs: Sequence, vjp: Callable):
    tape = _tape_of(*inputs)
    if tape is None:
        return value
    return tape._push(name, value, tuple(inputs), vjp)


def value_of(x) -> np.ndarray:
    return _val(x)


# --- elementwise -----------------------------------------------------------


def add(a, b):
    return _op("add", _val(a) + _val(b), (a, b), lambda g: (g, g))


def neg(a):
    return _op("neg", -_val(a), (a,), lambda g: (-g,))


def _conj(v):
    return np.conj(v) if np.iscomplexobj(v) else v


def mul(a, b):
    va, vb = _val(a), _val(b)

    def vjp(g):
        return (
            g * _conj(vb) if isinstance(a, Var) else None,
            g * _conj(va) if isinstance(b, Var) else None,
        )

    return _op("mul", va * vb, (a, b), vjp)


def reciprocal(a):
    va = _val(a)
    out = 1.0 / va
    return _op("reciprocal", out, (a,), lambda g: (-g * np.conj(out * out),))


def exp(a):
    out = np.exp(_val(a))
    return _op("exp", out, (a,), lambda g: (g * _conj(out),))


def log(a):
    va = _val(a)
    return _op("log", np.log(va), (a,), lambda g: (g / np.conj(va),))


def square(a):
    return mul(a, a)


def sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(a):
    va = _val(a)
    return _op("softplus", np.logaddexp(0.0, va), (a,), lambda g: (g * sigmoid_np(va),))


def gelu(a):
    va = _val(a)
    cdf = 0.5 * (1.0 + erf(va / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * va * va) / np.sqrt(2.0 * np.pi)
    return _op("gelu", va * cdf, (a,), lambda g: (g * (cdf + va * pdf),))


def real(a):
    va = _val(a)
    return _op("real", np.real(va).copy(), (a,), lambda g: (g.astype(va.dtype),))


def conj(a):
    return _op("conj", np.conj(_val(a)), (a,), lambda g: (np.conj(g),))


# --- contractions and reductions -------------------------------------------


def _expand_ellipsis(subscripts: str, ndims: list[int]) -> str:
    if "..." not in subscripts:
        return subscripts
    lhs, out = subscripts.split("->")
    terms = lhs.split(",")
    used = set(subscripts)
    spare = [c for c in "ABCDEFGHIJKLMNOPQRSTUVWXYZ" if c not in used]
    width = max(nd - (len(t) - 3) for t, nd in zip(terms, ndims) if "..." in t)
    letters = "".join(spare[:width])

    def fill(term, nd):
        if "..." not in term:
            return term
        k = nd - (len(term) - 3)
        return term.replace("...", letters[width - k :])

    terms = [fill(t, nd) for t, nd in zip(terms, ndims)]
    return ",".join(terms) + "->" + out.replace("...", letters)


def einsum(subscripts: str, *operands):
    """``np.einsum`` with explicit output; each operand's adjoint is an einsum
    of the output adjoint against the conjugated remaining operands."""
    vals = [_val(o) for o in operands]
    subscripts = _expand_ellipsis(subscripts.replace(" ", ""), [v.ndim for v in vals])
    lhs, out = subscripts.split("->")
    terms = lhs.split(",")
    value = np.einsum(subscripts, *vals, optimize=True)

    def vjp(g):
        grads = []
        for i, term in enumerate(terms):
            if not isinstance(operands[i], Var):
                grads.append(None)
                continue
            others = [t for j, t in enumerate(terms) if j != i]
            other_vals = [_conj(v) for j, v in enumerate(vals) if j != i]
            have = set(out).union(*others) if others else set(out)
            missing = [c for c in term if c not in have]
            spec = ",".join([out] + others) + "->" + "".join(c for c in term if c not in missing)
            gi = np.einsum(spec, g, *other_vals, optimize=True)
            if missing:
                # indices summed only inside this operand broadcast back
                for c in missing:
                    gi = np.expand_dims(gi, term.index(c))
                gi = np.broadcast_to(gi, vals[i].shape).copy()
            grads.append(gi)
        return grads

    return _op("einsum", value, operands, vjp)


def matmul(a, b):
    va, vb = _val(a), _val(b)

    def vjp(g):
        ga = g @ np.conj(np.swapaxes(vb, -1, -2)) if vb.ndim > 1 else np.multiply.outer(g, np.conj(vb))
        gb = np.conj(np.swapaxes(va, -1, -2)) @ g if va.ndim > 1 else np.multiply.outer(np.conj(va), g)
        return ga, gb

    return _op("matmul", va @ vb, (a, b), vjp)


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001
    va = _val(a)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, va.shape).copy(),)

    return _op("sum", np.sum(va, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False):
    va = _val(a)
    count = va.size if axis is None else np.prod([va.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# --- shape ops --------------------------------------------------------------


def reshape(a, shape):
    va = _val(a)
    return _op("reshape", va.reshape(shape), (a,), lambda g: (g.reshape(va.shape),))


def moveaxis(a, source, destination):
    va = _val(a)
    return _op(
        "moveaxis", np.moveaxis(va, source, destination), (a,), lambda g: (np.moveaxis(g, destination, source),)
    )


def getitem(a, idx):
    va = _val(a)

    def vjp(g):
        out = np.zeros(va.shape, dtype=np.result_type(va, g))
        np.add.at(out, idx, g)
        return (out,)

    return _op("getitem", va[idx], (a,), vjp)


def pad(a, pad_width, axis: int):
    """Zero-pad ``(before, after)`` along one axis."""
    va = _val(a)
    widths = [(0, 0)] * va.ndim
    widths[axis] = tuple(pad_width)
    sl = [slice(None)] * va.ndim
    sl[axis] = slice(pad_width[0], pad_width[0] + va.shape[axis])
    return _op("pad", np.pad(va, widths), (a,), lambda g: (g[tuple(sl)],))


def stack(items, axis: int = 0):
    vals = [_val(x) for x in items]

    def vjp(g):
        return [np.take(g, i, axis=axis) for i in range(len(vals))]

    return _op("stack", np.stack(vals, axis=axis), tuple(items), vjp)


def concat(items, axis: int = 0):
    vals = [_val(x) for x in items]
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def vjp(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(vals))]

    return _op("concat", np.concatenate(vals, axis=axis), tuple(items), vjp)


# --- spectral ---------------------------------------------------------------


def fft(a, axis: int = -1):
    va = _val(a)
    n = va.shape[axis]
    return _op("fft", tensor.fft(va, axis=axis), (a,), lambda g: (n * tensor.ifft(g, axis=axis),))


def ifft(a, axis: int = -1):
    va = _val(a)
    n = va.shape[axis]
    return _op("ifft", tensor.ifft(va, axis=axis), (a,), lambda g: (tensor.fft(g, axis=axis) / n,))


def topk_select(a, k: int, axis: int = -1, tie_rtol: float = 0.0):
    """Keep the top-k magnitudes; the mask is a constant (straight-through)."""
    va = _val(a)
    mask = tensor.topk_mask(va, k, axis=axis, tie_rtol=tie_rtol)
    return _op("topk", np.where(mask, va, 0), (a,), lambda g: (np.where(mask, g, 0),))


# --- sequence ops -----------------------------------------------------------


def scan(a, b, axis: int = 1, method: str = "sequential"):
    """States of ``x_t = a_t x_{t-1} + b_t`` (zero start) along ``axis``.

    The adjoint runs the reversed recurrence ``l_t = g_t + conj(a_{t+1}) l_{t+1}``
    and uses the saved states: ``db_t = l_t``, ``da_t = l_t conj(x_{t-1})``.
    """
    from .engine import linear_scan

    va, vb = np.broadcast_arrays(_val(a), _val(b))
    va = np.moveaxis(va, axis, 0)
    vb = np.moveaxis(vb, axis, 0)
    if method == "parallel":
        xs = linear_scan(va, vb, axis=0)
    else:
        xs = np.empty(vb.shape, dtype=np.result_type(va, vb))
        x = np.zeros(vb.shape[1:], dtype=xs.dtype)
        for t in range(vb.shape[0]):
            x = va[t] * x + vb[t]
            xs[t] = x

    def vjp(g):
        g = np.moveaxis(g, axis, 0)
        lam = np.zeros_like(g, dtype=np.result_type(g, va))
        carry = np.zeros(g.shape[1:], dtype=lam.dtype)
        for t in range(g.shape[0] - 1, -1, -1):
            carry = g[t] + (np.conj(va[t + 1]) * carry if t + 1 < g.shape[0] else 0)
            lam[t] = carry
        prev = np.concatenate([np.zeros_like(xs[:1]), xs[:-1]], axis=0)
        da = lam * np.conj(prev)
        return np.moveaxis(da, 0, axis), np.moveaxis(lam, 0, axis)

    return _op("scan", np.moveaxis(xs, 0, axis), (a, b), vjp)


def normalize(a, axis: int, eps: float = 0.0):
    """``(x - mean) / sqrt(var + eps)`` along ``axis`` (population variance)."""
    va = _val(a)
    mu = va.mean(axis=axis, keepdims=True)
    sd = np.sqrt(((va - mu) ** 2).mean(axis=axis, keepdims=True) + eps)
    y = (va - mu) / sd

    def vjp(g):
        gm = g.mean(axis=axis, keepdims=True)
        gy = (g * y).mean(axis=axis, keepdims=True)
        return ((g - gm - y * gy) / sd,)

    return _op("normalize", y, (a,), vjp)


# --- optimisation -----------------------------------------------------------


@dataclass
class Adam:
    params: list[Param]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p in self.params:
            if not p.trainable:
                continue
            key = id(p)
            m = self._m.get(key, np.zeros_like(p.value))
            v = self._v.get(key, np.zeros_like(p.value))
            m = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v = self.beta2 * v + (1.0 - self.beta2) * p.grad * p.grad
            self._m[key], self._v[key] = m, v
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8, state: Adam | None = None) -> Adam:
    """One Adam update; pass the returned state back in to continue the run."""
    opt = state if state is not None else Adam(list(params), lr, beta1, beta2, eps)
    opt.step()
    return opt


def grad_check(
    f: Callable[[Tape], Var],
    params: Sequence[Param],
    eps: float = 1e-5,
    max_coords: int = 200,
    atol: float = 1e-6,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` builds the loss on the tape it is given. At most ``max_coords``
    coordinates across the trainable params are probed; the relative error
    uses ``max(|analytic|, |numeric|, atol)`` as denominator.
    """
    trainable = [p for p in params if p.trainable]
    for p in params:
        p.zero_grad()
    tape = Tape()
    tape.backward(f(tape))
    coords = [(p, i) for p in trainable for i in range(p.value.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    def loss_value():
        return float(np.real(_val(f(Tape()))))

    worst = 0.0
    for p, i in coords:
        flat = p.value.reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_value()
        flat[i] = orig - eps
        down = loss_value()
        flat[i] = orig
        numeric = (up - down) / (2 * eps)
        analytic = p.grad.reshape(-1)[i]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), atol)
        worst = max(worst, rel)
    return worst
