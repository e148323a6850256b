"""Patch-based SSM forecaster: instance norm, patch embedding, operator layers
``sigma(W u + SSM u)``, optional channel-mixing spectral kernel, linear head.

Every trainable tensor is a :class:`~timessm.autodiff.Param`; the forward
pass runs on plain arrays or, given a tape, records for back-propagation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .hippo import Family, HippoSpec, s4d_real_log_a
from .legp import build_two_scale, default_scales, legp_block
from .tensor import format_matrix, matexp, parse_matrix

STD_FLOOR = 1e-5
TIE_RTOL = 1e-9
CHECKPOINT_MAGIC = "timessm-v1"


class VariantMismatch(ValueError):
    pass


class Variant(str, Enum):
    S4D_REAL = "s4d-real"
    LEGS_COMPLEX = "legs-complex"
    LEGT_COMPLEX = "legt-complex"
    LEGP_COMPLEX = "legp-complex"
    LEGS_DENSE = "legs-dense"
    LEGT_DENSE = "legt-dense"
    ROBUST_B = "robust-b"
    FULL_SELECT = "full-select"

    @property
    def is_complex(self) -> bool:
        return self in (Variant.LEGS_COMPLEX, Variant.LEGT_COMPLEX, Variant.LEGP_COMPLEX)

    @property
    def is_dense(self) -> bool:
        return self in (Variant.LEGS_DENSE, Variant.LEGT_DENSE)

    @property
    def family(self) -> Family:
        return {
            Variant.LEGS_COMPLEX: Family.LEGS,
            Variant.LEGS_DENSE: Family.LEGS,
            Variant.LEGT_COMPLEX: Family.LEGT,
            Variant.LEGT_DENSE: Family.LEGT,
            Variant.LEGP_COMPLEX: Family.LEGP,
        }.get(self, Family.S4D_REAL)


PATCH_LENGTHS = (8, 16, 24)
HORIZONS = (96, 192, 336, 720)


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    patch_len: int = 16
    stride: int | None = None
    d_model: int = 256
    d_state: int = 64
    n_layers: int = 2
    n_vars: int = 1
    variant: Variant = Variant.S4D_REAL
    variable_kernel: bool = False
    k_modes: int = 64
    ar_pad: int = 0
    use_v: bool = True
    use_w: bool = True
    activation: str = "gelu"
    legp_scales: int | None = None
    legp_trainable: bool = True
    legp_shared_c: bool = True
    robust_base: Variant = Variant.S4D_REAL

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.robust_base = Variant(self.robust_base)
        if self.stride is None:
            self.stride = self.patch_len
        if self.stride != self.patch_len:
            raise ValueError("stride must equal patch_len")
        for name in ("lookback", "horizon", "patch_len", "d_model", "d_state", "n_layers", "n_vars", "k_modes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ar_pad < 0:
            raise ValueError("ar_pad must be >= 0")
        if self.activation not in ("gelu", "identity"):
            raise ValueError("activation must be 'gelu' or 'identity'")
        if self.variant.family in (Family.LEGT, Family.LEGP) and self.d_state % 2:
            raise ValueError("LegT/LegP variants need an even d_state")
        if self.variant is Variant.ROBUST_B and self.robust_base in (Variant.ROBUST_B, Variant.FULL_SELECT):
            raise ValueError("robust_base must be a fixed-A variant")
        if self.variant is Variant.ROBUST_B and self.robust_base.is_dense:
            raise ValueError("dense variants already use a fixed B")

    def n_patches(self, length: int | None = None) -> int:
        length = self.lookback if length is None else length
        return -(-length // self.patch_len)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["robust_base"] = self.robust_base.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class NormStats:
    mean: np.ndarray  # (batch, 1, channels)
    std: np.ndarray


def instance_normalize(u) -> tuple[np.ndarray, NormStats]:
    u = np.asarray(u, dtype=float)
    if u.shape[1] < 2:
        raise ValueError("need at least two time steps to normalize")
    mean = u.mean(axis=1, keepdims=True)
    std = np.maximum(u.std(axis=1, keepdims=True), STD_FLOOR)
    return (u - mean) / std, NormStats(mean, std)


def denormalize(y, stats: NormStats):
    return y * stats.std + stats.mean


def pad_to_patches(u: np.ndarray, patch_len: int) -> np.ndarray:
    """Right-pad the time axis with the last value up to a multiple of patch_len."""
    length = u.shape[1]
    extra = (-length) % patch_len
    if extra == 0:
        return u
    return np.concatenate([u, np.repeat(u[:, -1:], extra, axis=1)], axis=1)


def patch_embed(u_norm, P, bias=None, patch_len: int | None = None):
    """``(batch, L, D)`` -> tokens ``(batch, D, L/p, d_model)``, each patch mapped by ``P``."""
    u_norm = np.asarray(u_norm, dtype=float)
    p = ad.value_of(P).shape[1] if patch_len is None else patch_len
    u = pad_to_patches(u_norm, p)
    batch, length, D = u.shape
    patches = np.moveaxis(u, 2, 1).reshape(batch, D, length // p, p)
    tokens = ad.einsum("bdlp,mp->bdlm", patches, P)
    return tokens if bias is None else tokens + bias


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _inv_softplus(y):
    return y + np.log(-np.expm1(-y))


def variable_kernel(y, W, k_modes: int, axis: int = 1):
    """``Re(IFFT(W * topk(FFT(y))))`` over the channel axis.

    ``W`` holds one complex weight per frequency bin, broadcast along the
    other axes; ``k_modes`` above the channel count is clamped. Bins whose
    magnitudes agree to ``TIE_RTOL`` count as tied, so the conjugate pairs of
    a real input are always split the same way.
    """
    D = ad.value_of(y).shape[axis]
    spec = ad.fft(y, axis=axis)
    kept = ad.topk_select(spec, min(k_modes, D), axis=axis, tie_rtol=TIE_RTOL)
    shape = [1] * ad.value_of(y).ndim
    shape[axis] = D
    return ad.real(ad.ifft(kept * ad.reshape(W, tuple(shape)), axis=axis))


class TimeSSM:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params: dict[str, ad.Param] = {}
        self._init_params(np.random.default_rng(seed))

    # -- parameters ---------------------------------------------------------

    def _add(self, name, value, trainable=True):
        self.params[name] = ad.Param(value, name, trainable)

    def _init_params(self, rng):
        c = self.config
        dm, N, p = c.d_model, c.d_state, c.patch_len
        self._add("embed/P", _uniform(rng, (dm, p), p))
        self._add("embed/b", _uniform(rng, (dm,), p))

        # HiPPO-derived matrices are frozen params: saved with the model, never updated
        base = c.robust_base if c.variant is Variant.ROBUST_B else c.variant
        if base.is_complex:
            diag = HippoSpec(base.family, N).diagonal()
            V = diag.V if c.use_v else np.eye(N, dtype=complex)
            for name, value in (("lam", diag.lam), ("V", V)):
                self._add(f"hippo/{name}_re", value.real, trainable=False)
                self._add(f"hippo/{name}_im", value.imag, trainable=False)
        if c.variant.is_dense:
            dense = HippoSpec(c.variant.family, N).dense(rng)
            self._add("hippo/A", dense.A, trainable=False)
            self._add("hippo/B", dense.B, trainable=False)

        for layer in range(c.n_layers):
            pre = f"layer{layer}/"
            self._add(pre + "W", _uniform(rng, (dm, dm), dm))
            self._add(pre + "W_b", _uniform(rng, (dm,), dm))
            if c.variant.is_dense:
                self._add(pre + "C", rng.standard_normal((dm, N)) / np.sqrt(N))
                continue
            self._add(pre + "W_dt", _uniform(rng, (dm, dm), dm))
            dt0 = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=dm))
            self._add(pre + "b_dt", _inv_softplus(dt0))
            self._add(pre + "W_C", _uniform(rng, (N, dm), dm))
            if c.variant is Variant.ROBUST_B:
                self._add(pre + "B", HippoSpec(Family.LEGS, N).dense().B)
            else:
                self._add(pre + "W_B", _uniform(rng, (N, dm), dm))
            if base is Variant.S4D_REAL:
                self._add(pre + "log_a", np.tile(s4d_real_log_a(N), (dm, 1)))
            if c.variant is Variant.FULL_SELECT:
                self._add(pre + "W_A", _uniform(rng, (N, dm), dm))
                self._add(pre + "b_A", _inv_softplus(np.arange(N) + 1.0))
            if c.variant is Variant.LEGP_COMPLEX:
                ops = build_two_scale(N)
                for key in ("H_left", "H_right", "Hd_left", "Hd_right"):
                    self._add(pre + key, getattr(ops, key), trainable=c.legp_trainable)
                if not c.legp_shared_c:
                    self._add(pre + "W_C_scales", _uniform(rng, (N, dm), dm))

        if c.variable_kernel:
            # zero weights make the residual kernel start as the identity map
            self._add("vk/W_re", np.zeros(c.n_vars))
            self._add("vk/W_im", np.zeros(c.n_vars))

        Lp = c.n_patches()
        self._add("head/Q", _uniform(rng, (c.horizon, Lp * dm), Lp * dm))
        self._add("head/b", _uniform(rng, (c.horizon,), Lp * dm))
        if c.ar_pad > 0:
            self._add("ar_head/Q", _uniform(rng, (p, dm), dm))
            self._add("ar_head/b", _uniform(rng, (p,), dm))

    def parameters(self) -> list[ad.Param]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.params.values() if p.trainable))

    # -- forward ------------------------------------------------------------

    def _complex(self, name):
        return self.params[f"hippo/{name}_re"].value + 1j * self.params[f"hippo/{name}_im"].value

    def _w(self, tape, name):
        p = self.params[name]
        return tape.watch(p) if tape is not None else p.value

    def _step_factors(self, tape, layer: int, x):
        """``(dt, lam, B, C)`` before discretization; ``B`` is ``(N,)`` for
        the robust variant and ``(Bt, Lp, N)`` otherwise."""
        c = self.config
        if c.variant.is_dense:
            raise VariantMismatch("dense variants have no per-step parameters")
        pre = f"layer{layer}/"
        w = lambda name: self._w(tape, pre + name)  # noqa: E731
        dt = ad.softplus(ad.einsum("blm,nm->bln", x, w("W_dt")) + w("b_dt"))
        Cgen = ad.einsum("blm,nm->bln", x, w("W_C"))
        if c.variant is Variant.ROBUST_B:
            Bgen = w("B")
        else:
            Bgen = ad.einsum("blm,nm->bln", x, w("W_B"))

        base = c.robust_base if c.variant is Variant.ROBUST_B else c.variant
        if c.variant is Variant.FULL_SELECT:
            lam = -ad.softplus(ad.einsum("blm,nm->bln", x, w("W_A")) + w("b_A"))
            lam = ad.reshape(lam, lam.shape[:2] + (1, c.d_state))
        elif base is Variant.S4D_REAL:
            lam = -ad.exp(w("log_a"))
        else:
            lam = self._complex("lam")
            V = self._complex("V")
            Bgen = ad.einsum("...n,nk->...k", Bgen, np.conj(V))
            Cgen = ad.einsum("bln,nk->blk", Cgen, V)
        return dt, lam, Bgen, Cgen

    def generate_params(self, tape, layer: int, x):
        """Per-step ``(A_bar, B_bar, C)`` for a diagonal variant; ``x`` is ``(Bt, Lp, dm)``."""
        dt, lam, Bgen, Cgen = self._step_factors(tape, layer, x)
        A_bar = ad.exp(ad.reshape(dt, dt.shape + (1,)) * lam)
        spec = "bld,n->bldn" if Bgen.ndim == 1 else "bld,bln->bldn"
        return A_bar, ad.einsum(spec, dt, Bgen), Cgen

    def _ssm(self, tape, layer: int, x):
        c = self.config
        if c.variant.is_dense:
            return self._dense_ssm(tape, layer, x)
        pre = f"layer{layer}/"
        dt, lam, Bgen, Cgen = self._step_factors(tape, layer, x)
        A_bar = ad.exp(ad.reshape(dt, dt.shape + (1,)) * lam)
        # B_bar * u formed in one product: (dt * u) outer B
        spec = "bld,n->bldn" if Bgen.ndim == 1 else "bld,bln->bldn"
        states = ad.scan(A_bar, ad.einsum(spec, dt * x, Bgen), axis=1)
        y = ad.einsum("bln,bldn->bld", Cgen, states)
        if c.variant is Variant.LEGP_COMPLEX:
            r_max = c.legp_scales if c.legp_scales is not None else default_scales(states.shape[1])
            if r_max > 0:
                ops = tuple(self._w(tape, pre + k) for k in ("H_left", "H_right", "Hd_left", "Hd_right"))
                basis = self._complex("V") if c.use_v else None
                multi = legp_block(states, ops, r_max, basis=basis, axis=1, include_input=False)
                if c.legp_shared_c:
                    C_scales = Cgen
                else:
                    C_scales = ad.einsum("blm,nm->bln", x, self._w(tape, pre + "W_C_scales"))
                    C_scales = ad.einsum("bln,nk->blk", C_scales, self._complex("V"))
                y = y + ad.einsum("bln,bldn->bld", C_scales, multi)
        return ad.real(y)

    def _dense_ssm(self, tape, layer: int, x):
        """Fixed HiPPO ``(A, B)`` at step ``1/Lp``, trainable per-channel C,
        evaluated as the causal kernel ``C A_bar^(t-j) B_bar``."""
        pre = f"layer{layer}/"
        Lp = ad.value_of(x).shape[1]
        delta = 1.0 / Lp
        A_bar = matexp(delta * self.params["hippo/A"].value)
        N = A_bar.shape[0]
        powers = [np.eye(N)]
        for _ in range(Lp - 1):
            powers.append(A_bar @ powers[-1])
        lag = np.arange(Lp)[:, None] - np.arange(Lp)[None, :]
        M = np.where((lag >= 0)[..., None, None], np.stack(powers)[np.clip(lag, 0, None)], 0.0)
        B_bar = delta * self.params["hippo/B"].value
        return ad.einsum("dn,tjnm,m,bjd->btd", self._w(tape, pre + "C"), M, B_bar, x)

    def layer_forward(self, tape, layer: int, x):
        c = self.config
        pre = f"layer{layer}/"
        z = self._ssm(tape, layer, x)
        if c.use_w:
            z = z + ad.einsum("blm,nm->bln", x, self._w(tape, pre + "W")) + self._w(tape, pre + "W_b")
        return ad.gelu(z) if c.activation == "gelu" else z

    def encode(self, tape, u_norm):
        """Normalized ``(batch, L, D)`` -> tokens ``(batch, D, Lp, d_model)`` after all layers."""
        c = self.config
        tokens = patch_embed(u_norm, self._w(tape, "embed/P"), self._w(tape, "embed/b"))
        batch, D, Lp, dm = ad.value_of(tokens).shape
        x = ad.reshape(tokens, (batch * D, Lp, dm))
        for layer in range(c.n_layers):
            x = self.layer_forward(tape, layer, x)
        x = ad.reshape(x, (batch, D, Lp, dm))
        if c.variable_kernel:
            W = ad.add(self._w(tape, "vk/W_re"), ad.mul(1j, self._w(tape, "vk/W_im")))
            x = x + variable_kernel(x, W, c.k_modes, axis=1)
        return x

    def head_project(self, tape, x):
        """Tokens ``(batch, D, Lp, dm)`` -> normalized forecast ``(batch, H, D)``."""
        batch, D, Lp, dm = ad.value_of(x).shape
        flat = ad.reshape(x, (batch, D, Lp * dm))
        out = ad.einsum("bdf,hf->bdh", flat, self._w(tape, "head/Q")) + self._w(tape, "head/b")
        return ad.moveaxis(out, 1, 2)

    def predict_normalized(self, u_norm, tape=None):
        c = self.config
        if np.asarray(u_norm).shape[1] != c.lookback:
            raise ValueError(f"expected lookback {c.lookback}, got {np.asarray(u_norm).shape[1]}")
        return self.head_project(tape, self.encode(tape, u_norm))

    def forward(self, u, tape=None):
        """Raw ``(batch, L, D)`` history -> raw ``(batch, H, D)`` forecast."""
        u_norm, stats = instance_normalize(u)
        y = self.predict_normalized(u_norm, tape)
        return ad.add(ad.mul(y, stats.std), stats.mean)

    def predict_ar_normalized(self, u_norm, pad: int, tape=None):
        """Zero-pad ``pad`` steps in normalized space, run the stack over
        ``L + pad`` and keep the last ``H`` outputs of the token-wise head."""
        c = self.config
        if pad == 0:
            return self.predict_normalized(u_norm, tape)
        if "ar_head/Q" not in self.params:
            raise VariantMismatch("model was built without an autoregressive head (ar_pad=0)")
        u_norm = np.asarray(u_norm, dtype=float)
        batch, L, D = u_norm.shape
        padded = np.concatenate([u_norm, np.zeros((batch, pad, D))], axis=1)
        x = self.encode(tape, padded)
        _, _, Lp, dm = ad.value_of(x).shape
        seq = ad.einsum("bdlm,pm->bdlp", x, self._w(tape, "ar_head/Q")) + self._w(tape, "ar_head/b")
        seq = ad.reshape(seq, (batch, D, Lp * c.patch_len))
        total = L + pad
        seq = seq[:, :, max(0, total - c.horizon) : total]
        return ad.moveaxis(seq, 1, 2)

    def forward_ar_padded(self, u, pad: int | None = None, tape=None):
        pad = self.config.ar_pad if pad is None else pad
        if pad == 0:
            return self.forward(u, tape)
        u_norm, stats = instance_normalize(u)
        y = self.predict_ar_normalized(u_norm, pad, tape)
        return ad.add(ad.mul(y, stats.std), stats.mean)

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k}")
            if v.shape != self.params[k].value.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].value.shape}")
            self.params[k].value = np.array(v, dtype=float)


def save_checkpoint(model: TimeSSM, path, extra: dict | None = None):
    lines = [CHECKPOINT_MAGIC]
    meta = {"config": model.config.to_dict(), "seed": model.seed, **(extra or {})}
    lines.append("config " + json.dumps(meta, sort_keys=True))
    for name, p in model.params.items():
        value = p.value.reshape(p.value.shape[0] if p.value.ndim else 1, -1)
        shape = ",".join(str(s) for s in p.value.shape)
        lines.append(f"param {name} shape={shape} trainable={int(p.trainable)} rows={value.shape[0]}")
        lines.append(format_matrix(value))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[TimeSSM, dict]:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    meta = json.loads(text[1].split(" ", 1)[1])
    model = TimeSSM(ModelConfig.from_dict(meta["config"]), seed=meta.get("seed", 0))
    state = {}
    i = 2
    while i < len(text):
        if not text[i].strip():
            i += 1
            continue
        head = text[i].split()
        name = head[1]
        attrs = dict(tok.split("=") for tok in head[2:])
        shape = tuple(int(s) for s in attrs["shape"].split(",") if s)
        rows = int(attrs["rows"])
        state[name] = parse_matrix("\n".join(text[i + 1 : i + 1 + rows])).reshape(shape)
        model.params[name].trainable = bool(int(attrs["trainable"]))
        i += 1 + rows
    model.load_state_dict(state)
    return model, meta
