"""Mini-batch Adam training with early stopping on validation MSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import DatasetFrame, RunConfig, Scaler, metrics, window_arrays
from .model import TimeSSM, instance_normalize


class DivergedLoss(FloatingPointError):
    pass


@dataclass
class Split:
    inputs: np.ndarray  # (n, L, D)
    targets: np.ndarray  # (n, H, D)

    def __len__(self):
        return len(self.inputs)


def prepare(frame: DatasetFrame, lookback: int, horizon: int, scale: bool = True) -> dict[str, Split]:
    if scale:
        frame = Scaler.fit(frame).transform(frame)
    return {s: Split(*window_arrays(frame, lookback, horizon, s)) for s in ("train", "val", "test")}


def batch_loss(model: TimeSSM, tape, inputs, targets):
    """MSE in instance-normalized space (targets use the input window's stats)."""
    u_norm, stats = instance_normalize(inputs)
    y_norm = (targets - stats.mean) / stats.std
    pad = model.config.ar_pad
    pred = model.predict_ar_normalized(u_norm, pad, tape) if pad else model.predict_normalized(u_norm, tape)
    return ad.mean(ad.square(pred - y_norm))


def predict(model: TimeSSM, inputs, batch_size: int = 32) -> np.ndarray:
    outs = []
    for i in range(0, len(inputs), batch_size):
        outs.append(model.forward_ar_padded(inputs[i : i + batch_size]))
    return np.concatenate(outs)


def evaluate(model: TimeSSM, split: Split, batch_size: int = 32) -> tuple[float, float]:
    """(MSE, MAE) of denormalized forecasts."""
    return metrics(predict(model, split.inputs, batch_size), split.targets)


def last_value_baseline(split: Split) -> tuple[float, float]:
    pred = np.repeat(split.inputs[:, -1:], split.targets.shape[1], axis=1)
    return metrics(pred, split.targets)


def train(model: TimeSSM, data: dict[str, Split], config: RunConfig, log=None) -> list[dict]:
    """Train in place; returns one history row per validation check.

    Runs ``config.epochs`` passes (or ``config.max_steps`` updates, whichever
    ends first), checks validation MSE every ``eval_every`` steps and at the
    end, stops after ``patience`` checks without improvement and restores the
    best parameters.
    """
    rng = np.random.default_rng(config.seed)
    opt = ad.Adam(model.parameters(), lr=config.lr)
    train_split = data["train"]
    n = len(train_split)
    steps_per_epoch = -(-n // config.batch_size)
    total = steps_per_epoch * config.epochs
    if config.max_steps is not None:
        total = min(total, config.max_steps)

    history: list[dict] = []
    best, best_state, stale = np.inf, model.state_dict(), 0
    running, step = [], 0
    order = rng.permutation(n)
    while step < total:
        pos = (step % steps_per_epoch) * config.batch_size
        if step and pos == 0:
            order = rng.permutation(n)
        idx = order[pos : pos + config.batch_size]
        opt.zero_grad()
        tape = ad.Tape()
        loss = batch_loss(model, tape, train_split.inputs[idx], train_split.targets[idx])
        value = float(ad.value_of(loss))
        if not np.isfinite(value):
            raise DivergedLoss(f"non-finite loss {value} at step {step}")
        tape.backward(loss)
        opt.step()
        running.append(value)
        step += 1
        if step % config.eval_every == 0 or step == total:
            val_mse, val_mae = evaluate(model, data["val"])
            row = {"step": step, "train_loss": float(np.mean(running)), "val_mse": val_mse, "val_mae": val_mae}
            history.append(row)
            running = []
            if log is not None:
                log(row)
            if val_mse < best:
                best, best_state, stale = val_mse, model.state_dict(), 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    model.load_state_dict(best_state)
    return history
