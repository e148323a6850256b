"""CSV ingestion, benchmark splits, sliding windows, metrics and run configuration."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator

import numpy as np

from .model import ModelConfig

LEARNING_RATES = (1e-4, 5e-4, 1e-3)
# absolute (train, val, test) row counts of the hourly ETT benchmarks
NAMED_SPLITS = {"ett": (8545, 2881, 2881)}
SPLIT_NAMES = ("train", "val", "test")


class ParseError(ValueError):
    def __init__(self, row: int, col: int, cell: str):
        super().__init__(f"row {row}, column {col}: cannot parse {cell!r} as a number")
        self.row, self.col, self.cell = row, col, cell


class TooShort(ValueError):
    pass


@dataclass
class DatasetFrame:
    name: str
    values: np.ndarray  # (rows, channels)
    timestamps: list[str] | None = None
    split_sizes: tuple[int, int, int] = (0, 0, 0)
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dataset contains non-finite values")
        if sum(self.split_sizes) > len(self.values):
            raise ValueError(f"split sizes {self.split_sizes} exceed {len(self.values)} rows")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def ratio_split(rows: int, ratios=(7, 1, 2)) -> tuple[int, int, int]:
    """Train/val/test row counts; test takes the remainder after flooring."""
    total = sum(ratios)
    train = rows * ratios[0] // total
    val = rows * ratios[1] // total
    return train, val, rows - train - val


def resolve_split(rows: int, split: str | tuple | None) -> tuple[int, int, int]:
    if split is None or split == "ratio":
        return ratio_split(rows)
    if isinstance(split, str):
        if split not in NAMED_SPLITS:
            raise ValueError(f"unknown split {split!r}; choose from ratio, {', '.join(NAMED_SPLITS)}")
        sizes = NAMED_SPLITS[split]
    else:
        sizes = tuple(int(s) for s in split)
    if sum(sizes) > rows:
        raise TooShort(f"split {sizes} needs {sum(sizes)} rows, file has {rows}")
    return sizes


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, split: str | tuple | None = "ratio", min_rows: int = 0) -> DatasetFrame:
    """Read a header-row CSV of numeric channels.

    A first column whose cells do not parse as floats is taken as timestamps.
    Leading ``#`` lines (such as the marker written by :func:`write_csv`) are
    skipped. Rows are 1-based file lines in error messages.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    skipped = 0
    while rows and rows[0] and rows[0][0].startswith("#"):
        rows.pop(0)
        skipped += 1
    if not rows:
        raise TooShort(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise TooShort(f"{path}: no data rows")
    has_time = not _is_float(body[0][0].strip())
    start = 1 if has_time else 0
    values = np.empty((len(body), len(header) - start))
    stamps = [] if has_time else None
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ParseError(i + 2 + skipped, len(row) + 1, "<missing>")
        if has_time:
            stamps.append(row[0])
        for j, cell in enumerate(row[start:]):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ParseError(i + 2 + skipped, j + start + 1, cell) from None
            if not np.isfinite(values[i, j]):
                raise ParseError(i + 2 + skipped, j + start + 1, cell)
    if len(body) < min_rows:
        raise TooShort(f"{path}: {len(body)} rows, need at least {min_rows}")
    return DatasetFrame(path.stem, values, stamps, resolve_split(len(body), split), header[start:])


def write_csv(path, values: np.ndarray, columns: list[str], kind: str):
    """Numeric CSV preceded by a ``# timessm-v1 <kind>`` marker line."""
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# timessm-v1 {kind}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in np.atleast_2d(values):
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def split_bounds(frame: DatasetFrame, lookback: int, split: str) -> tuple[int, int]:
    """Row range of a split; val/test ranges start ``lookback`` rows early so
    their first window's history comes from the preceding split."""
    n_train, n_val, n_test = frame.split_sizes
    if split == "train":
        return 0, n_train
    if split == "val":
        return max(0, n_train - lookback), n_train + n_val
    if split == "test":
        return max(0, n_train + n_val - lookback), n_train + n_val + n_test
    raise ValueError(f"split must be one of {SPLIT_NAMES}")


def n_windows(rows: int, lookback: int, horizon: int) -> int:
    return max(0, rows - lookback - horizon + 1)


def windows(frame: DatasetFrame, lookback: int, horizon: int, split: str) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be >= 1")
    lo, hi = split_bounds(frame, lookback, split)
    values = frame.values[lo:hi]
    for s in range(n_windows(hi - lo, lookback, horizon)):
        yield values[s : s + lookback], values[s + lookback : s + lookback + horizon]


def window_arrays(frame: DatasetFrame, lookback: int, horizon: int, split: str) -> tuple[np.ndarray, np.ndarray]:
    """All windows of a split stacked into ``(n, L, D)`` and ``(n, H, D)``."""
    pairs = list(windows(frame, lookback, horizon, split))
    if not pairs:
        raise TooShort(f"split {split!r} too short for lookback {lookback} + horizon {horizon}")
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


@dataclass
class Scaler:
    """Per-channel standardization fitted on the training rows."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, frame: DatasetFrame) -> "Scaler":
        train = frame.values[: frame.split_sizes[0]]
        return cls(train.mean(axis=0), np.maximum(train.std(axis=0), 1e-8))

    def transform(self, frame: DatasetFrame) -> DatasetFrame:
        return DatasetFrame(
            frame.name, (frame.values - self.mean) / self.std, frame.timestamps, frame.split_sizes, frame.columns
        )


def metrics(pred, target) -> tuple[float, float]:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))


# --- synthetic datasets ------------------------------------------------------


def sine_frame(rows: int = 2000, channels: int = 2, periods=(24.0, 50.0), noise: float = 0.0, seed: int = 0) -> DatasetFrame:
    """Sinusoids with per-channel period and random phase."""
    rng = np.random.default_rng(seed)
    periods = np.resize(np.asarray(periods, dtype=float), channels)
    phase = rng.uniform(0, 2 * np.pi, channels)
    t = np.arange(rows)[:, None]
    values = np.sin(2 * np.pi * t / periods + phase) + noise * rng.standard_normal((rows, channels))
    return DatasetFrame("sine", values, split_sizes=ratio_split(rows), columns=[f"c{i}" for i in range(channels)])


def arma_frame(
    rows: int = 2000, channels: int = 2, ar=(0.6, -0.3), ma=(0.4,), seed: int = 0
) -> DatasetFrame:
    """Stationary ARMA(p, q) channels driven by independent unit Gaussian noise."""
    rng = np.random.default_rng(seed)
    ar, ma = np.asarray(ar, dtype=float), np.asarray(ma, dtype=float)
    burn = 200
    e = rng.standard_normal((rows + burn, channels))
    x = np.zeros_like(e)
    for t in range(rows + burn):
        acc = e[t].copy()
        for i, a in enumerate(ar, 1):
            if t - i >= 0:
                acc += a * x[t - i]
        for j, m in enumerate(ma, 1):
            if t - j >= 0:
                acc += m * e[t - j]
        x[t] = acc
    return DatasetFrame("arma", x[burn:], split_sizes=ratio_split(rows), columns=[f"c{i}" for i in range(channels)])


SYNTHETIC = {"sine": sine_frame, "arma": arma_frame}


def load_dataset(name_or_path: str, split: str | tuple | None = "ratio", min_rows: int = 0, seed: int = 0):
    if name_or_path in SYNTHETIC:
        return SYNTHETIC[name_or_path](seed=seed)
    return load_csv(name_or_path, split=split, min_rows=min_rows)


# --- run configuration ---------------------------------------------------------


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    max_steps: int | None = 200
    eval_every: int = 50
    patience: int = 3
    seed: int = 0
    dataset: str = "sine"
    split: str = "ratio"
    scale: bool = True

    def __post_init__(self):
        if not any(np.isclose(self.lr, g, rtol=0, atol=1e-12) for g in LEARNING_RATES):
            raise ValueError(f"lr must be one of {LEARNING_RATES}, got {self.lr}")
        for name in ("batch_size", "epochs", "eval_every", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        d.update(self.model.to_dict())
        return d

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        """Build from one flat dict mixing model and run keys; unknown keys raise."""
        model_keys = {f.name for f in fields(ModelConfig)}
        run_keys = {f.name for f in fields(cls)} - {"model"}
        unknown = set(flat) - model_keys - run_keys
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        model = ModelConfig.from_dict({k: v for k, v in flat.items() if k in model_keys})
        return cls(model=model, **{k: v for k, v in flat.items() if k in run_keys})

    @classmethod
    def from_json(cls, path, overrides: dict | None = None) -> "RunConfig":
        flat = json.loads(Path(path).read_text())
        if not isinstance(flat, dict):
            raise ValueError("config file must hold a flat JSON object")
        flat.update(overrides or {})
        return cls.from_flat(flat)
