"""Command-line entry point: ``timessm <command> ...``.

Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from .bench import SignalSpec, run_reconstruction
from .data import ParseError, RunConfig, TooShort, load_dataset, write_csv
from .engine import conv_kernel
from .hippo import Family, HippoSpec
from .model import TimeSSM, load_checkpoint, save_checkpoint
from .tensor import NoConvergence, format_matrix
from .selftest import gradcheck_table, run_all
from .train import DivergedLoss, evaluate, predict, prepare, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


# flags that map one-to-one onto flat config keys; None means "not given"
_MODEL_FLAGS = {
    "lookback": int,
    "horizon": int,
    "patch_len": int,
    "d_model": int,
    "d_state": int,
    "n_layers": int,
    "variant": str,
    "k_modes": int,
    "ar_pad": int,
    "activation": str,
    "legp_scales": int,
}
_RUN_FLAGS = {
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "max_steps": int,
    "eval_every": int,
    "patience": int,
    "seed": int,
    "dataset": str,
    "split": str,
}
_BOOL_FLAGS = ("variable_kernel", "no_v", "no_w", "no_scale")


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat JSON config; explicit flags take precedence")
    for name, typ in {**_MODEL_FLAGS, **_RUN_FLAGS}.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--variable-kernel", dest="variable_kernel", action="store_true", default=None)
    p.add_argument("--no-v", dest="no_v", action="store_true", default=None, help="ablation: drop the eigenbasis V")
    p.add_argument("--no-w", dest="no_w", action="store_true", default=None, help="ablation: drop the linear path W")
    p.add_argument("--no-scale", dest="no_scale", action="store_true", default=None)


def run_config_from_args(args) -> RunConfig:
    flat = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                flat = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(flat, dict):
            raise UsageError("config file must hold a flat JSON object")
    for name in {**_MODEL_FLAGS, **_RUN_FLAGS}:
        value = getattr(args, name, None)
        if value is not None:
            flat[name] = value
    if getattr(args, "variable_kernel", None):
        flat["variable_kernel"] = True
    if getattr(args, "no_v", None):
        flat["use_v"] = False
    if getattr(args, "no_w", None):
        flat["use_w"] = False
    if getattr(args, "no_scale", None):
        flat["scale"] = False
    try:
        return RunConfig.from_flat(flat)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# --- commands ----------------------------------------------------------------


def cmd_hippo_dump(args):
    spec = HippoSpec(args.family, args.n)
    if args.form == "dense":
        sys_ = spec.dense(np.random.default_rng(args.seed))
        sections = [("A", sys_.A), ("B", sys_.B)]
    elif args.form == "normal":
        nf = spec.normal()
        sections = [("A_normal", nf.A_normal), ("low_rank", nf.low_rank.T)]
    else:
        diag = spec.diagonal()
        sections = [("lambda", diag.lam), ("V", diag.V)]
    for name, M in sections:
        print(f"# {name}")
        print(format_matrix(M))
    return EXIT_OK


def cmd_kernel_dump(args):
    spec = HippoSpec(args.family, args.n)
    diag = spec.diagonal()
    dense = spec.dense(np.random.default_rng(args.seed))
    B_diag = diag.V.conj().T @ dense.B
    C_diag = diag.V.T @ dense.C_init
    K = conv_kernel(diag.lam, B_diag, C_diag, args.delta, args.length)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["lag", "k"])
    for lag, k in enumerate(K):
        w.writerow([lag, f"{k:.17g}"])
    return EXIT_OK


def cmd_reconstruct(args):
    spec = SignalSpec(args.length, args.dt, args.band, args.seed)
    res = run_reconstruction(args.family, args.n, spec, args.window, args.scales)
    row = [res.family, res.n, res.seed, f"{res.mse:.6e}"]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["family", "N", "seed", "mse"])
    w.writerow(row)
    if args.out:
        write_csv(args.out, [row], ["family", "N", "seed", "mse"], "reconstruct")
    if args.trace:
        W = len(res.target)
        t = (spec.length - W + np.arange(W)) * spec.dt
        write_csv(args.trace, np.column_stack([t, res.target, res.estimate]), ["t", "u", "u_hat"], "trace")
    return EXIT_OK


def cmd_gradcheck(args):
    rows = gradcheck_table()
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["op", "max_rel_err"])
    for name, err in rows:
        w.writerow([name, f"{err:.3e}"])
    worst = max(err for _, err in rows)
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


def _load_frame(rc: RunConfig):
    m = rc.model
    return load_dataset(rc.dataset, split=rc.split, min_rows=m.lookback + m.horizon, seed=rc.seed)


def cmd_train(args):
    rc = run_config_from_args(args)
    frame = _load_frame(rc)
    rc.model.n_vars = frame.n_channels
    data = prepare(frame, rc.model.lookback, rc.model.horizon, rc.scale)
    model = TimeSSM(rc.model, seed=rc.seed)
    start = time.time()
    log = (lambda row: print(json.dumps(row), file=sys.stderr)) if args.verbose else None
    history = train(model, data, rc, log=log)
    test_mse, test_mae = evaluate(model, data["test"])
    save_checkpoint(model, args.checkpoint, extra={"run": rc.to_dict()})
    if args.metrics:
        cols = ["step", "train_loss", "val_mse", "val_mae"]
        write_csv(args.metrics, [[r[c] for c in cols] for r in history], cols, "metrics")
    print(f"test_mse={test_mse:.6f} test_mae={test_mae:.6f} steps={history[-1]['step']} seconds={time.time() - start:.1f}")
    return EXIT_OK


def _restore(args):
    try:
        model, meta = load_checkpoint(args.checkpoint)
    except (ValueError, KeyError, IndexError) as exc:
        raise UsageError(f"bad checkpoint {args.checkpoint}: {exc}") from None
    flat = dict(meta.get("run", {}))
    if args.dataset:
        flat["dataset"] = args.dataset
    if args.split:
        flat["split"] = args.split
    rc = RunConfig.from_flat(flat)
    frame = _load_frame(rc)
    if frame.n_channels != model.config.n_vars and model.config.variable_kernel:
        raise UsageError(f"checkpoint expects {model.config.n_vars} channels, data has {frame.n_channels}")
    return model, rc, prepare(frame, rc.model.lookback, rc.model.horizon, rc.scale)


def cmd_predict(args):
    model, rc, data = _restore(args)
    split = data[args.part]
    pred = predict(model, split.inputs)
    n, H, D = pred.shape
    win, step = np.meshgrid(np.arange(n), np.arange(H), indexing="ij")
    table = np.column_stack([win.ravel(), step.ravel(), pred.reshape(n * H, D)])
    cols = ["window", "step"] + [f"c{i}" for i in range(D)]
    rows = [[int(r[0]), int(r[1])] + [float(v) for v in r[2:]] for r in table]
    write_csv(args.out, rows, cols, "predictions")
    print(f"wrote {n} windows to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    model, rc, data = _restore(args)
    mse, mae = evaluate(model, data[args.part])
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["dataset", "variant", "horizon", "mse", "mae"])
    name = rc.dataset.rsplit("/", 1)[-1].removesuffix(".csv")
    w.writerow([name, model.config.variant.value, model.config.horizon, f"{mse:.3f}", f"{mae:.3f}"])
    return EXIT_OK


def cmd_selftest(args):
    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="timessm", description="State-space forecaster and HiPPO tooling")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    families = [f.value for f in Family]

    hippo = sub.add_parser("hippo", help="HiPPO matrices").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = hippo.add_parser("dump", help="print a HiPPO system in the text matrix format")
    p.add_argument("--family", choices=families, default="legs")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--form", choices=("dense", "normal", "diagonal"), default="dense")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_hippo_dump)

    kernel = sub.add_parser("kernel", help="convolution kernels").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = kernel.add_parser("dump", help="print the SSM convolution kernel as CSV")
    p.add_argument("--family", choices=families, default="legs")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--length", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_kernel_dump)

    p = sub.add_parser("reconstruct", help="online projection and reconstruction of band-limited noise")
    p.add_argument("--family", choices=("legs", "legt", "legp"), default="legp")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--scales", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=100_000)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--band", type=float, default=1.0)
    p.add_argument("--window", type=float, default=1.0)
    p.add_argument("--out", help="also write the result row to this CSV")
    p.add_argument("--trace", help="write the per-sample reconstruction trace CSV")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and a tiny model per variant")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train a forecaster and write a checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", default="model.ckpt")
    p.add_argument("--metrics", help="metrics history CSV")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "write forecasts for a split"), ("eval", cmd_eval, "print MSE/MAE")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", help="defaults to the dataset recorded in the checkpoint")
        p.add_argument("--split", help="split convention (ratio or ett)")
        p.add_argument("--part", choices=("train", "val", "test"), default="test")
        if name == "predict":
            p.add_argument("--out", default="predictions.csv")
        p.set_defaults(func=func)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"timessm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, TooShort, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"timessm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergedLoss, NoConvergence, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"timessm: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"timessm: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
