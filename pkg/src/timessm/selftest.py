"""Fast invariant suite behind ``timessm selftest`` and ``timessm gradcheck``.

Each check returns ``(name, ok, detail)``; none needs the test-suite files.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .bench import error_rate_table
from .discretize import discretize_zoh_euler, discretize_zoh_exact
from .engine import TimeVaryingParams, causal_conv, conv_kernel, recur_sequential, scan_parallel
from .hippo import build_legs, build_legs_normal, build_legt, build_legt_normal, diagonalize
from .model import ModelConfig, TimeSSM, Variant, instance_normalize

GRAD_TOL = 1e-4


def gradcheck_table(eps: float = 1e-5) -> list[tuple[str, float]]:
    """Max relative finite-difference error per op and per tiny-model variant."""
    rng = np.random.default_rng(0)
    P = ad.Param(rng.standard_normal((4, 6)), "p")
    Z = ad.Param(rng.uniform(0.2, 0.9, (2, 6, 3)), "z")
    W = rng.standard_normal((4, 6))

    def sq(v):
        return ad.sum(ad.real(v * ad.conj(v)))

    def p(t):
        return t.watch(P)

    def z(t):
        return t.watch(Z)

    ops: dict[str, Callable] = {
        "add": lambda t: ad.sum(ad.square(p(t) + p(t)[0])),
        "mul": lambda t: ad.sum(p(t) * p(t) * W),
        "reciprocal": lambda t: ad.sum(1.0 / (ad.square(p(t)) + 1.0)),
        "exp": lambda t: ad.sum(ad.exp(p(t) * 0.5) * W),
        "log": lambda t: ad.sum(ad.log(ad.square(p(t)) + 1.0)),
        "softplus": lambda t: ad.sum(ad.softplus(p(t)) * W),
        "gelu": lambda t: ad.sum(ad.gelu(p(t)) * W),
        "einsum": lambda t: ad.sum(ad.square(ad.einsum("ij,kj->ik", p(t), p(t)))),
        "matmul": lambda t: ad.sum(ad.square(p(t) @ ad.moveaxis(p(t), 0, 1))),
        "fft": lambda t: sq(ad.fft(p(t) * (1 + 0.5j), axis=1) * np.arange(6)),
        "ifft": lambda t: sq(ad.ifft(p(t) * (0.3 - 1j), axis=0) * np.arange(1, 5)[:, None]),
        "topk": lambda t: sq(ad.topk_select(p(t) * W, 3, axis=1)),
        "scan": lambda t: sq(ad.scan(z(t) * np.exp(0.3j), z(t), axis=1) * np.arange(6)[:, None]),
        "scan_parallel": lambda t: sq(ad.scan(z(t), ad.square(z(t)), axis=1, method="parallel")),
        "pad/stack/concat": lambda t: ad.sum(
            ad.square(ad.concat([ad.pad(p(t), (1, 1), axis=1), ad.stack([p(t)[:, 0]] * 8, axis=1)], axis=0))
            * np.arange(8)
        ),
        "normalize": lambda t: ad.sum(ad.normalize(p(t), axis=1, eps=1e-3) * W),
    }
    rows = [(name, ad.grad_check(f, [P, Z], eps=eps)) for name, f in ops.items()]

    u = np.random.default_rng(1).standard_normal((2, 32, 2))
    y = np.random.default_rng(2).standard_normal((2, 8, 2))
    u_norm, _ = instance_normalize(u)
    for variant in Variant:
        cfg = ModelConfig(lookback=32, horizon=8, patch_len=8, d_model=16, d_state=8, n_vars=2, variant=variant)
        model = TimeSSM(cfg, seed=0)

        def loss(t, model=model):
            return ad.mean(ad.square(model.predict_normalized(u_norm, t) - y))

        rows.append((f"model:{variant.value}", ad.grad_check(loss, model.parameters(), eps=eps)))
    return rows


def _check_nplr():
    A = build_legs(128).A
    err = np.max(np.abs(build_legs_normal(128).dense_A() - A))
    nf = build_legt_normal(64)
    s = np.linalg.svd(nf.A_normal - build_legt(64).A, compute_uv=False)
    return err < 1e-12 and s[2] / s[0] < 1e-9, f"LegS err {err:.1e}, LegT s3/s1 {s[2] / s[0]:.1e}"


def _check_spectrum():
    worst = 0.0
    for build, re in ((build_legs_normal, -0.5), (build_legt_normal, 0.0)):
        d = diagonalize(build(64))
        worst = max(worst, np.max(np.abs(d.lam.real - re)), np.max(np.abs(d.V.conj().T @ d.V - np.eye(64))))
    return worst < 1e-9, f"max deviation {worst:.1e}"


def _check_engines():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(5):
        n, L = 16, 200
        lam = -rng.uniform(0.1, 2, n) + 1j * rng.uniform(-5, 5, n)
        B = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        C = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        u = rng.standard_normal((1, L, 1))
        params = TimeVaryingParams.time_invariant(lam, B, C, 0.05, 1, L, 1)
        y_seq, _ = recur_sequential(params, u)
        y_scan = scan_parallel(params, u)
        y_conv = causal_conv(conv_kernel(lam, B, C, 0.05, L)[:, None], u)
        worst = max(worst, np.max(np.abs(y_seq - y_scan)), np.max(np.abs(y_seq - y_conv)))
    return worst < 1e-10, f"max difference {worst:.1e}"


def _check_discretization():
    rng = np.random.default_rng(0)
    lam = -rng.uniform(0.1, 10, 50) + 1j * rng.uniform(-10, 10, 50)
    delta = rng.uniform(1e-3, 1e-2, 50)
    err = [np.abs(discretize_zoh_euler(lam, 1.0, d)[1] - discretize_zoh_exact(lam, 1.0, d)) for d in (delta, delta / 2)]
    ratio = err[0] / err[1]
    return bool(np.all((ratio > 3.5) & (ratio < 4.5))), f"ratios in [{ratio.min():.3f}, {ratio.max():.3f}]"


def _check_grads():
    rows = gradcheck_table()
    worst = max(err for _, err in rows)
    return worst < GRAD_TOL, f"worst {worst:.1e} over {len(rows)} checks"


def _check_model_contracts():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((2, 32, 2))
    u_norm, stats = instance_normalize(u)
    round_trip = np.max(np.abs(u_norm * stats.std + stats.mean - u))
    cfg = dict(lookback=32, horizon=8, patch_len=8, d_model=8, d_state=4, n_vars=2)
    model = TimeSSM(ModelConfig(**cfg, ar_pad=8))
    ar_same = np.array_equal(model.forward_ar_padded(u, 0), model.forward(u))
    shift = np.max(np.abs(model.forward(u + 3.0) - model.forward(u) - 3.0))
    legt = TimeSSM(ModelConfig(**cfg, variant="legt-complex")).forward(u)
    legp = TimeSSM(ModelConfig(**cfg, variant="legp-complex", legp_scales=0)).forward(u)
    ok = round_trip < 1e-10 and ar_same and shift < 1e-8 and np.array_equal(legt, legp)
    return ok, f"norm round trip {round_trip:.1e}, shift {shift:.1e}, AR(O=0) {ar_same}, LegP(r=0)==LegT {np.array_equal(legt, legp)}"


def _check_rate():
    tables = [error_rate_table(k, scales=range(2, 6)) for k in (1, 2, 3)]
    worst = max(max(t.ratios) / t.bound for t in tables)
    return all(t.ok for t in tables), f"asymptotic ratio / bound at most {worst:.3f}"


CHECKS = {
    "nplr": _check_nplr,
    "spectrum": _check_spectrum,
    "engines": _check_engines,
    "discretization": _check_discretization,
    "gradients": _check_grads,
    "model-contracts": _check_model_contracts,
    "projection-rate": _check_rate,
}


def run_all() -> list[tuple[str, bool, str]]:
    out = []
    for name, check in CHECKS.items():
        try:
            ok, detail = check()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
