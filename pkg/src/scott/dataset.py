"""Time-series containers, sliding-window example extraction and generators.

Time is indexed from 1: value ``z_t`` of a series lives at array position
``t - 1``. A training example at prediction time ``t0`` reads the context
``z[t0-context_len+1 .. t0]`` and predicts ``z[t0+1 .. t0+pred_len]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class CSVFormatError(ValueError):
    """Raised when a series CSV file cannot be parsed."""


def _frozen(values, name):
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrainingExample:
    series_idx: int
    t0: int
    context_len: int
    pred_len: int


@dataclass(frozen=True)
class TimeSeriesDataset:
    series: tuple
    context_len: int
    pred_len: int
    stride: int = 1
    features: Optional[tuple] = None
    names: tuple = field(default=())

    def __post_init__(self):
        if self.context_len < 1 or self.pred_len < 1 or self.stride < 1:
            raise ValueError("context_len, pred_len and stride must be positive")
        series = tuple(_frozen(s, f"series {i}") for i, s in enumerate(self.series))
        object.__setattr__(self, "series", series)
        if self.features is not None:
            feats = []
            for i, (s, x) in enumerate(zip(series, self.features)):
                x = np.array(x, dtype=np.float64)
                if x.shape[0] != s.shape[0]:
                    raise ValueError(f"features of series {i} have length {x.shape[0]}, series has {s.shape[0]}")
                if not np.all(np.isfinite(x)):
                    raise ValueError(f"features of series {i} contain non-finite values")
                x.setflags(write=False)
                feats.append(x)
            if len(feats) != len(series):
                raise ValueError("one feature array per series is required")
            object.__setattr__(self, "features", tuple(feats))
        names = tuple(self.names) or tuple(f"s{i}" for i in range(len(series)))
        if len(names) != len(series):
            raise ValueError("one name per series is required")
        object.__setattr__(self, "names", names)

    @property
    def n_series(self) -> int:
        return len(self.series)

    def context(self, ex: TrainingExample) -> np.ndarray:
        z = self.series[ex.series_idx]
        return z[ex.t0 - ex.context_len:ex.t0]

    def target(self, ex: TrainingExample) -> np.ndarray:
        z = self.series[ex.series_idx]
        return z[ex.t0:ex.t0 + ex.pred_len]

    def with_windows(self, context_len=None, pred_len=None, stride=None) -> "TimeSeriesDataset":
        return TimeSeriesDataset(
            self.series,
            context_len or self.context_len,
            pred_len or self.pred_len,
            stride or self.stride,
            self.features,
            self.names,
        )

    def scaled(self, factor: float) -> "TimeSeriesDataset":
        """Return a copy with every value divided by ``factor``."""
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        return TimeSeriesDataset(
            tuple(s / factor for s in self.series),
            self.context_len, self.pred_len, self.stride, self.features, self.names,
        )


def extract_examples(ds: TimeSeriesDataset) -> list[TrainingExample]:
    """Enumerate sliding windows, series-major then by increasing ``t0``."""
    out = []
    for i, z in enumerate(ds.series):
        last = len(z) - ds.pred_len
        for t0 in range(ds.context_len, last + 1, ds.stride):
            out.append(TrainingExample(i, t0, ds.context_len, ds.pred_len))
    return out


def example_arrays(ds: TimeSeriesDataset, examples: Sequence[TrainingExample]):
    """Stack contexts and targets into ``(n, context_len)`` and ``(n, pred_len)`` arrays."""
    n = len(examples)
    X = np.empty((n, ds.context_len))
    Y = np.empty((n, ds.pred_len))
    for k, ex in enumerate(examples):
        X[k] = ds.context(ex)
        Y[k] = ds.target(ex)
    return X, Y


# -- CSV interchange ----------------------------------------------------------

def load_csv(path, context_len: int, pred_len: int, stride: int = 1) -> TimeSeriesDataset:
    """Read a CSV with a header row and one timestamp per subsequent row.

    The first column holds an integer time index, each remaining column one
    series.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [(n, r) for n, r in enumerate(rows, start=1) if any(c.strip() for c in r)]
    if not rows:
        raise CSVFormatError(f"{path}: empty file (no header)")
    _, header = rows[0]
    width = len(header)
    if width < 2:
        raise CSVFormatError(f"{path}: line 1: header needs a time column and at least one series")
    data = rows[1:]
    if not data:
        raise CSVFormatError(f"{path}: no data rows")
    values = np.empty((len(data), width - 1))
    for k, (lineno, row) in enumerate(data):
        if len(row) != width:
            raise CSVFormatError(f"{path}: line {lineno}: expected {width} cells, found {len(row)}")
        try:
            int(row[0])
        except ValueError:
            raise CSVFormatError(f"{path}: line {lineno}, column 1: time index {row[0]!r} is not an integer") from None
        for j, cell in enumerate(row[1:], start=1):
            try:
                v = float(cell)
            except ValueError:
                raise CSVFormatError(f"{path}: line {lineno}, column {j + 1}: {cell!r} is not a number") from None
            if not math.isfinite(v):
                raise CSVFormatError(f"{path}: line {lineno}, column {j + 1}: non-finite value {cell!r}")
            values[k, j - 1] = v
    names = tuple(h.strip() for h in header[1:])
    return TimeSeriesDataset(tuple(values.T), context_len, pred_len, stride, names=names)


def write_csv(ds: TimeSeriesDataset, path) -> None:
    lengths = {len(s) for s in ds.series}
    if len(lengths) != 1:
        raise ValueError("CSV output requires series of equal length")
    (T,) = lengths
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *ds.names])
        for t in range(T):
            w.writerow([t + 1, *(repr(float(s[t])) for s in ds.series)])


def write_labels(labels: Sequence[int], path) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def read_labels(path) -> list[int]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise CSVFormatError(f"{path}: line {lineno}: label {line!r} is not an integer") from None
    return out


# -- generators ---------------------------------------------------------------

def gen_fig1_toy(T: int, seed: int = 0, noise_scale: float = 0.2,
                 context_len: int = 72, pred_len: int = 24, stride: int = 1) -> TimeSeriesDataset:
    """Single series ``sin(t) + cos(2t) + noise_scale * eps_t`` for ``t = 1..T``."""
    if T < context_len + pred_len:
        raise ValueError(f"T={T} is shorter than one window ({context_len + pred_len})")
    t = np.arange(1, T + 1, dtype=np.float64)
    eps = np.random.default_rng(seed).standard_normal(T)
    z = np.sin(t) + np.cos(2 * t) + noise_scale * eps
    return TimeSeriesDataset((z,), context_len, pred_len, stride)


def gen_heterogeneity_toy(delta: float, n_repeats: int, noise_scale: float = 0.0,
                          seed: int = 0) -> TimeSeriesDataset:
    """The pattern ``[-1, -delta, 1, delta]`` tiled ``n_repeats`` times, 1-in/1-out windows.

    Examples with odd ``t0`` are fit exactly by an AR(1) coefficient ``delta``,
    those with even ``t0`` by ``-1/delta``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    z = np.tile([-1.0, -delta, 1.0, delta], n_repeats)
    if noise_scale:
        z = z + noise_scale * np.random.default_rng(seed).standard_normal(z.size)
    return TimeSeriesDataset((z,), 1, 1, 1)


def gen_adversarial(p: int, delta: float, c: float = 0.0, allow_p1: bool = False) -> TimeSeriesDataset:
    """Worst-case AR(p) dataset: ``2 * (p // 2)`` series of length ``p + 1``.

    Each series yields exactly one example (context of length p, one target).
    """
    if p < 1 or (p == 1 and not allow_p1):
        raise ValueError("adversarial construction needs p >= 2 (p = 1 only with allow_p1=True)")
    if 2 * c > delta:
        raise ValueError("construction requires 2c <= delta")
    h = delta / 2
    if p == 1:
        rows = [[h, h + c]]
    else:
        pb = p // 2
        rows = [[h] + [0.0] * (p - 1) + [h + c]]
        for i in range(2, pb + 1):
            rows.append([0.0] * (i - 2) + [h, -h] + [0.0] * (p - i) + [c])
        for _ in range(pb + 1, 2 * pb + 1):
            rows.append([0.0] * pb + [h] * (p - pb) + [h + c])
    return TimeSeriesDataset(tuple(rows), p, 1, 1)


PATTERN_ORDERS = ((0, 1, 2, 3), (3, 2, 1, 0), (0, 2, 1, 3), (3, 1, 2, 0))
PATTERN_LEN = 24


def synthetic_patterns() -> np.ndarray:
    """Rows: sin(t), t, t**2, sqrt(t) over t = 1..24."""
    t = np.arange(1, PATTERN_LEN + 1, dtype=np.float64)
    return np.stack([np.sin(t), t, t ** 2, np.sqrt(t)])


def gen_synthetic_4pattern(repeats: int, seed: int = 0, noise_scale: float = 1.0):
    """Four series, each a distinct ordering of four length-24 patterns tiled ``repeats`` times.

    Returns ``(dataset, labels)`` where ``labels[k]`` is the ground-truth stratum
    of the k-th extracted example: ``4 * series_idx + pattern`` with ``pattern``
    the pattern occupying the prediction window.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    P = synthetic_patterns()
    rng = np.random.default_rng(seed)
    series = []
    for order in PATTERN_ORDERS:
        base = np.tile(np.concatenate([P[k] for k in order]), repeats)
        series.append(base + noise_scale * rng.standard_normal(base.size))
    ds = TimeSeriesDataset(tuple(series), 3 * PATTERN_LEN, PATTERN_LEN, PATTERN_LEN)
    labels = []
    for ex in extract_examples(ds):
        slot = (ex.t0 // PATTERN_LEN) % 4
        labels.append(4 * ex.series_idx + PATTERN_ORDERS[ex.series_idx][slot])
    return ds, labels
