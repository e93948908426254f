"""Experiment configuration, runs, grid search and convergence-log CSVs."""
from __future__ import annotations

import csv
import functools
import math
import time
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataset as dsm
from .models import ARModel, FeedforwardModel, GradientOracle
from .optim import (AdagradRule, AdamRule, DivergenceError, EarlyStop, Fixed, Geometric,
                    SGDRule, scott_run, select_output, sgd_run)
from .samplers import (StratifiedSampler, UniformSampler, estimate_sampler_variance,
                       estimate_stratum_variance, make_rng)
from .stratify import (Stratification, stratify_finest, stratify_ground_truth, stratify_hierarchical,
                       stratify_mod_timestamp, stratify_random_hash, weekday_season_key)

STEP_GRID = (0.1, 0.05, 0.025, 0.01, 0.005, 0.0025, 0.001, 0.0005, 0.00025, 0.0001)
GAMMA_GRID = (0.1, 0.125, 0.15, 0.2)
CSV_COLUMNS = ("grad_evals", "wall_ms", "outer_iter", "train_loss", "test_loss", "sampler_variance")


class ConfigError(ValueError):
    pass


# -- component specs ----------------------------------------------------------

@dataclass(frozen=True)
class OptimizerSpec:
    kind: str                      # sgd | adam | adagrad | scott | sadam | sadagrad
    mode: object = None            # inner-loop policy for the control-variate family
    strata: Optional[str] = None   # strata forced by scsg / svrg
    beta1: float = 0.9
    beta2: float = 0.999

    @property
    def stratified(self) -> bool:
        return self.kind in ("scott", "sadam", "sadagrad")


def _num(text, kind, what):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{what}: cannot parse {text!r} as {kind.__name__}") from None


def _parse_mode(parts, what):
    if not parts or parts == ["geom"]:
        return Geometric()
    if parts[0] == "early" and len(parts) == 2:
        gamma = _num(parts[1], float, what)
        if not gamma > 0:
            raise ConfigError(f"{what}: gamma must be positive")
        return EarlyStop(gamma)
    if parts[0] == "fixed" and len(parts) == 2:
        k = _num(parts[1], int, what)
        if k < 0:
            raise ConfigError(f"{what}: inner length must be >= 0")
        return Fixed(k)
    raise ConfigError(f"{what}: unknown inner-loop mode {':'.join(parts)!r}")


def parse_optimizer(text: str) -> OptimizerSpec:
    what = f"optimizer {text!r}"
    head, *rest = text.strip().split(":")
    if head == "sgd" and not rest:
        return OptimizerSpec("sgd")
    if head == "adagrad" and not rest:
        return OptimizerSpec("adagrad")
    if head in ("adam", "sadam"):
        b1, b2 = 0.9, 0.999
        if rest and rest[0] not in ("geom", "early", "fixed"):
            if len(rest) < 2:
                raise ConfigError(f"{what}: expected {head}:<beta1>:<beta2>")
            b1, b2 = _num(rest[0], float, what), _num(rest[1], float, what)
            rest = rest[2:]
            if not (0 <= b1 < 1 and 0 <= b2 < 1):
                raise ConfigError(f"{what}: betas must lie in [0, 1)")
        if head == "adam":
            if rest:
                raise ConfigError(f"{what}: trailing fields")
            return OptimizerSpec("adam", beta1=b1, beta2=b2)
        return OptimizerSpec("sadam", _parse_mode(rest, what), beta1=b1, beta2=b2)
    if head == "sadagrad":
        return OptimizerSpec("sadagrad", _parse_mode(rest, what))
    if head == "scott" and rest:
        return OptimizerSpec("scott", _parse_mode(rest, what))
    if head == "scsg" and len(rest) == 1:
        B = _num(rest[0], int, what)
        if B < 1:
            raise ConfigError(f"{what}: B must be >= 1")
        return OptimizerSpec("scott", Geometric(), strata=f"random:{B}")
    if head == "svrg" and not rest:
        return OptimizerSpec("scott", Geometric(), strata="finest")
    raise ConfigError(f"unknown optimizer {text!r}")


def parse_model(text: str, context_len: int, pred_len: int):
    parts = text.strip().split(":")
    what = f"model {text!r}"
    if parts[0] == "ar" and len(parts) == 2:
        p = _num(parts[1], int, what)
        if p < 1:
            raise ConfigError(f"{what}: order must be >= 1")
        if p > context_len:
            raise ConfigError(f"{what}: order exceeds context length {context_len}")
        return ARModel(p, pred_len)
    if parts[0] == "ff" and len(parts) == 3:
        hidden = tuple(_num(h, int, what) for h in parts[1].split("x"))
        if parts[2] not in ("mse", "nll"):
            raise ConfigError(f"{what}: loss must be mse or nll")
        if any(h < 1 for h in hidden):
            raise ConfigError(f"{what}: widths must be >= 1")
        return FeedforwardModel(context_len, pred_len, hidden, parts[2])
    raise ConfigError(f"unknown model {text!r}")


def generate_dataset(text: str, seed: int = 0):
    """Build a dataset from a spec string; returns ``(dataset, labels or None)``."""
    head, *rest = text.strip().split(":")
    what = f"dataset {text!r}"
    try:
        if head == "synthetic" and 1 <= len(rest) <= 2:
            noise = _num(rest[1], float, what) if len(rest) > 1 else 1.0
            return dsm.gen_synthetic_4pattern(_num(rest[0], int, what), seed, noise)
        if head == "fig1" and 1 <= len(rest) <= 2:
            noise = _num(rest[1], float, what) if len(rest) > 1 else 0.2
            return dsm.gen_fig1_toy(_num(rest[0], int, what), seed, noise), None
        if head == "hetero" and 2 <= len(rest) <= 3:
            noise = _num(rest[2], float, what) if len(rest) > 2 else 0.0
            return dsm.gen_heterogeneity_toy(_num(rest[0], float, what), _num(rest[1], int, what),
                                             noise, seed), None
        if head == "adversarial" and 2 <= len(rest) <= 3:
            c = _num(rest[2], float, what) if len(rest) > 2 else 0.0
            return dsm.gen_adversarial(_num(rest[0], int, what), _num(rest[1], float, what), c), None
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    raise ConfigError(f"unknown dataset {text!r}")


# -- run configuration --------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    dataset: str
    model: str
    optimizer: str
    budget: int
    strata: Optional[str] = None
    alpha: float = 0.01
    batch_size: int = 16
    strata_batch: int = 1
    seed: int = 0
    log_every: int = 0
    split: float = 0.8
    context_len: Optional[int] = None
    pred_len: Optional[int] = None
    stride: Optional[int] = None
    scale: str = "none"
    variance: str = "none"
    k_max: Optional[int] = None
    reset_moments: bool = False
    output: str = "last"
    wall_clock: bool = False

    def __post_init__(self):
        if self.log_every == 0:
            object.__setattr__(self, "log_every", max(1, self.budget // 10))
        validate(self)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


REQUIRED = ("dataset", "model", "optimizer", "budget")


def _coerce(name, raw, lineno):
    ftype = {f.name: f.type for f in fields(RunConfig)}[name]
    where = f"line {lineno}: {name}"
    if "bool" in ftype:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"{where}: expected true/false, got {raw!r}")
    if "int" in ftype:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
    if "float" in ftype:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a validated RunConfig."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key: {key}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key: {key}")
        values[key] = _coerce(key, raw, lineno)
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"missing key: {key}")
    return RunConfig(**values)


def validate(cfg: RunConfig) -> None:
    if cfg.budget < 1:
        raise ConfigError(f"budget: must be >= 1, got {cfg.budget}")
    if not 1 <= cfg.log_every <= cfg.budget:
        raise ConfigError(f"log_every: need 1 <= log_every <= budget, got {cfg.log_every}")
    if not 0 < cfg.split <= 1:
        raise ConfigError(f"split: need 0 < split <= 1, got {cfg.split}")
    if not (math.isfinite(cfg.alpha) and cfg.alpha >= 0):
        raise ConfigError(f"alpha: must be a finite non-negative number, got {cfg.alpha}")
    if cfg.batch_size < 1 or cfg.strata_batch < 1:
        raise ConfigError("batch_size and strata_batch must be >= 1")
    if cfg.scale not in ("none", "std", "max"):
        raise ConfigError(f"scale: expected none, std or max, got {cfg.scale!r}")
    if cfg.output not in ("last", "sample"):
        raise ConfigError(f"output: expected last or sample, got {cfg.output!r}")
    if cfg.variance not in ("none", "exact"):
        try:
            n = int(cfg.variance)
        except ValueError:
            raise ConfigError(f"variance: expected none, exact or a trial count, got {cfg.variance!r}") from None
        if n < 2:
            raise ConfigError("variance: trial count must be >= 2")
    for name in ("context_len", "pred_len", "stride", "k_max"):
        v = getattr(cfg, name)
        if v is not None and v < 1:
            raise ConfigError(f"{name}: must be >= 1")
    # window lengths are only known once the data is loaded; check the syntax here
    parse_model(cfg.model, cfg.context_len or 10 ** 6, cfg.pred_len or 1)
    spec = parse_optimizer(cfg.optimizer)
    if spec.stratified and spec.strata is None and cfg.strata is None:
        raise ConfigError(f"missing key: strata (required by optimizer {cfg.optimizer!r})")
    if cfg.strata is not None:
        _check_strata_spec(cfg.strata)
    head = cfg.dataset.split(":", 1)[0]
    if head == "csv":
        if cfg.context_len is None or cfg.pred_len is None:
            raise ConfigError("csv datasets need context_len and pred_len")
    elif head not in ("synthetic", "fig1", "hetero", "adversarial"):
        raise ConfigError(f"unknown dataset {cfg.dataset!r}")


def _check_strata_spec(text):
    head, *rest = text.split(":")
    ok = (
        (head == "mod" and len(rest) == 1 and rest[0].isdigit() and int(rest[0]) >= 1)
        or (head == "hier" and rest == ["weekday-season"])
        or (head == "random" and len(rest) in (1, 2) and all(r.lstrip("-").isdigit() for r in rest))
        or (head == "finest" and not rest)
        or (head == "labels" and len(rest) >= 1 and rest[0])
    )
    if not ok:
        raise ConfigError(f"strata: unknown policy {text!r}")


# -- problem assembly ---------------------------------------------------------

@dataclass
class Problem:
    dataset: dsm.TimeSeriesDataset
    model: object
    train: GradientOracle
    test: Optional[GradientOracle]
    train_examples: list
    train_labels: Optional[list]
    scale: float


def split_examples(examples, split: float):
    """Temporal holdout: the last ``floor((1 - split) * n_i)`` examples of each series are test."""
    by_series: dict = {}
    for k, ex in enumerate(examples):
        by_series.setdefault(ex.series_idx, []).append(k)
    train, test = [], []
    for ks in by_series.values():
        n_test = int(math.floor((1 - split) * len(ks) + 1e-9))
        train.extend(ks[:len(ks) - n_test])
        test.extend(ks[len(ks) - n_test:])
    return sorted(train), sorted(test)


def _seeds(seed: int):
    data, sampler, optimizer, output, measure = np.random.SeedSequence(seed).spawn(5)
    return data, sampler, optimizer, output, measure


def _load(dataset, context_len, pred_len, stride, data_seed):
    if dataset.startswith("csv:"):
        try:
            return dsm.load_csv(dataset[4:], context_len, pred_len, stride or 1), None
        except (OSError, dsm.CSVFormatError) as exc:
            raise ConfigError(str(exc)) from None
    ds, labels = _generate_cached(dataset, data_seed)
    if context_len or pred_len or stride:
        ds = ds.with_windows(context_len, pred_len, stride)
    return ds, labels


@functools.lru_cache(maxsize=16)
def _generate_cached(dataset, data_seed):
    return generate_dataset(dataset, data_seed)


def build_problem(cfg: RunConfig) -> Problem:
    data_ss = _seeds(cfg.seed)[0]
    ds, labels = _load(cfg.dataset, cfg.context_len, cfg.pred_len, cfg.stride,
                       int(data_ss.generate_state(1)[0]))
    scale = 1.0
    if cfg.scale != "none":
        allv = np.concatenate(ds.series)
        scale = float(np.std(allv) if cfg.scale == "std" else np.max(np.abs(allv)))
        if scale > 0:
            ds = ds.scaled(scale)
        else:
            scale = 1.0
    examples = dsm.extract_examples(ds)
    if not examples:
        raise ConfigError("dataset yields no training examples for the configured windows")
    if labels is not None and len(labels) != len(examples):
        labels = None
    train_idx, test_idx = split_examples(examples, cfg.split)
    X, Y = dsm.example_arrays(ds, examples)
    model = parse_model(cfg.model, ds.context_len, ds.pred_len)
    train = GradientOracle(model, X[train_idx], Y[train_idx])
    test = GradientOracle(model, X[test_idx], Y[test_idx]) if test_idx else None
    train_labels = None if labels is None else [labels[k] for k in train_idx]
    return Problem(ds, model, train, test, [examples[k] for k in train_idx], train_labels, scale)


def build_stratification(text: str, problem: Problem, seed: int) -> Stratification:
    head, *rest = text.split(":")
    ex = problem.train_examples
    try:
        if head == "mod":
            return stratify_mod_timestamp(ex, int(rest[0]))
        if head == "hier":
            return stratify_hierarchical(ex, weekday_season_key)
        if head == "random":
            return stratify_random_hash(ex, int(rest[0]), int(rest[1]) if len(rest) > 1 else seed)
        if head == "finest":
            return stratify_finest(ex)
        if head == "labels":
            src = ":".join(rest)
            if src == "truth":
                if problem.train_labels is None:
                    raise ConfigError("strata labels:truth needs a generator with ground-truth labels")
                return stratify_ground_truth(ex, problem.train_labels)
            labels = dsm.read_labels(src)
            all_examples = dsm.extract_examples(problem.dataset)
            if len(labels) != len(all_examples):
                raise ConfigError(f"strata: {src} has {len(labels)} labels for {len(all_examples)} examples")
            keep = {(e.series_idx, e.t0) for e in ex}
            return stratify_ground_truth(ex, [lab for e, lab in zip(all_examples, labels)
                                              if (e.series_idx, e.t0) in keep])
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"strata {text!r}: {exc}") from None
    raise ConfigError(f"strata: unknown policy {text!r}")


# -- running ------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    grad_evals: int
    wall_ms: int
    outer_iter: int
    train_loss: float
    test_loss: Optional[float] = None
    sampler_variance: Optional[float] = None


@dataclass
class RunResult:
    config: RunConfig
    records: list
    theta: np.ndarray
    trajectory: object
    problem: Problem
    stratification: Optional[Stratification] = None

    @property
    def final_train_loss(self) -> float:
        return self.problem.train.value(self.theta)


class RunDiverged(DivergenceError):
    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def run(cfg: RunConfig, problem: Optional[Problem] = None, on_log=None) -> RunResult:
    """Execute one configured run and log a record every ``log_every`` gradient evaluations.

    ``on_log(record, theta)`` is called with every record and the iterate it describes.
    """
    validate(cfg)
    problem = problem or build_problem(cfg)
    _, sampler_ss, opt_ss, out_ss, measure_ss = _seeds(cfg.seed)
    unif_ss, strat_ss, hash_ss = sampler_ss.spawn(3)
    init_ss, inner_ss = opt_ss.spawn(2)
    oracle = problem.train
    oracle.n_evals = 0
    spec = parse_optimizer(cfg.optimizer)
    theta0 = problem.model.init_params(make_rng(init_ss))
    unif = UniformSampler(oracle.n_examples, cfg.batch_size, unif_ss)

    strat = None
    strat_sampler = None
    if spec.stratified:
        strat = build_stratification(spec.strata or cfg.strata, problem, int(hash_ss.generate_state(1)[0]))
        strat_sampler = StratifiedSampler(strat, cfg.strata_batch, strat_ss)

    measure = _variance_probe(cfg, oracle, unif, strat, measure_ss)
    records = []
    next_log = [0]
    start = time.perf_counter()

    def monitor(evals, outer, theta):
        if evals < next_log[0]:
            return
        _log(evals, outer, theta)
        next_log[0] = (evals // cfg.log_every + 1) * cfg.log_every

    def _log(evals, outer, theta):
        with oracle.uncounted():
            train_loss = oracle.value(theta)
            test_loss = problem.test.value(theta) if problem.test is not None else None
            var = measure(theta) if measure else None
        if not math.isfinite(train_loss):
            raise DivergenceError(f"non-finite training loss at {evals} gradient evaluations")
        wall = int((time.perf_counter() - start) * 1000) if cfg.wall_clock else 0
        records.append(RunRecord(evals, wall, outer, train_loss, test_loss, var))
        if on_log:
            on_log(records[-1], theta)

    rule = {"sgd": SGDRule, "scott": SGDRule, "adagrad": AdagradRule, "sadagrad": AdagradRule}.get(spec.kind)
    rule = rule() if rule else AdamRule(spec.beta1, spec.beta2)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            monitor(0, 0, theta0)
            if spec.stratified:
                mode = spec.mode
                if isinstance(mode, EarlyStop) and cfg.k_max is not None:
                    mode = replace(mode, k_max=cfg.k_max)
                traj = scott_run(oracle, strat_sampler, unif, cfg.alpha, mode, cfg.budget, theta0,
                                 rng=make_rng(inner_ss), rule=rule, reset_rule=cfg.reset_moments,
                                 monitor=monitor)
            else:
                traj = sgd_run(oracle, unif, cfg.alpha, cfg.budget, theta0, rule=rule, monitor=monitor)
            if records[-1].grad_evals < traj.evals:
                _log(traj.evals, len(traj.outer_iterates) or traj.steps, traj.theta)
    except DivergenceError as exc:
        raise RunDiverged(str(exc), records) from None

    theta = traj.theta
    if cfg.output == "sample" and traj.outer_iterates:
        theta = select_output(traj.outer_iterates, traj.outer_alphas, strat.n_strata, make_rng(out_ss))
    return RunResult(cfg, records, theta, traj, problem, strat)


def _variance_probe(cfg, oracle, unif, strat, seed):
    """Callable measuring the run's own gradient-sampler variance at a point, or None."""
    if cfg.variance == "none":
        return None
    if cfg.variance == "exact":
        if strat is not None:
            return lambda th: estimate_stratum_variance(strat, oracle, th, per_stratum=cfg.strata_batch).aggregate
        whole = Stratification.from_strata([np.arange(oracle.n_examples)])
        return lambda th: estimate_stratum_variance(whole, oracle, th).aggregate / cfg.batch_size
    trials = int(cfg.variance)
    s1, s2 = seed.spawn(2)
    if strat is not None:
        sampler = StratifiedSampler(strat, cfg.strata_batch, s1)
    else:
        sampler = UniformSampler(oracle.n_examples, cfg.batch_size, s2)
    return lambda th: estimate_sampler_variance(sampler, oracle, th, trials)


# -- CSV ----------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def emit_csv(records, path) -> None:
    if not records:
        raise ValueError("no records to write")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_csv(path) -> list:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0] if rows else None}")
    out = []
    for row in rows[1:]:
        out.append(RunRecord(int(row[0]), int(row[1]), int(row[2]), float(row[3]),
                             float(row[4]) if row[4] else None, float(row[5]) if row[5] else None))
    return out


# -- grid search --------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    alphas: tuple = STEP_GRID
    gammas: tuple = GAMMA_GRID
    optimizers: tuple = ()
    seeds: tuple = ()


def parse_grid(text: str) -> GridSpec:
    """``alpha``, ``gamma``, ``optimizer`` and ``seeds`` lines with comma-separated values."""
    vals = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = v1, v2, ...'")
        key, raw = (s.strip() for s in line.split("=", 1))
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if not items:
            raise ConfigError(f"line {lineno}: empty grid for {key}")
        try:
            if key == "alpha":
                vals["alphas"] = tuple(float(s) for s in items)
            elif key == "gamma":
                vals["gammas"] = tuple(float(s) for s in items)
            elif key == "seeds":
                vals["seeds"] = tuple(int(s) for s in items)
            elif key == "optimizer":
                vals["optimizers"] = tuple(items)
            else:
                raise ConfigError(f"line {lineno}: unknown grid key: {key}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
    return GridSpec(**vals)


def expand_optimizer(text: str, gammas) -> list:
    """Fill a bare ``early`` inner mode with every gamma of the grid."""
    parts = text.split(":")
    if parts[-1] == "early":
        return [(f"{text}:{g}", g) for g in gammas]
    spec = parse_optimizer(text)
    return [(text, spec.mode.gamma if isinstance(spec.mode, EarlyStop) else None)]


@dataclass
class GridResult:
    table: list = field(default_factory=list)      # one dict per (optimizer, alpha, gamma, seed)
    summary: list = field(default_factory=list)    # one dict per (optimizer, alpha, gamma): median over seeds
    best: dict = field(default_factory=dict)       # optimizer label -> summary row


def _grid_point(cfg):
    try:
        res = run(cfg)
        loss = res.final_train_loss
        test = res.problem.test.value(res.theta) if res.problem.test is not None else None
        return loss if math.isfinite(loss) else math.inf, test, not math.isfinite(loss)
    except DivergenceError:
        return math.inf, None, True


def grid_search(base: RunConfig, grid: GridSpec, n_jobs: int = 1) -> GridResult:
    """Run every (optimizer, alpha, gamma, seed) point; best = lowest median final train loss."""
    if not grid.alphas or not grid.gammas:
        raise ConfigError("grids must be non-empty")
    optimizers = grid.optimizers or (base.optimizer,)
    seeds = grid.seeds or (base.seed,)
    points = []
    for label in optimizers:
        for opt, gamma in expand_optimizer(label, grid.gammas):
            for alpha in grid.alphas:
                for seed in seeds:
                    points.append((label, opt, alpha, gamma, seed,
                                   replace(base, optimizer=opt, alpha=alpha, seed=seed)))
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(n_jobs) as pool:
            outcomes = list(pool.map(_grid_point, [p[-1] for p in points]))
    else:
        outcomes = [_grid_point(p[-1]) for p in points]

    result = GridResult()
    groups: dict = {}
    for (label, opt, alpha, gamma, seed, _), (loss, test, diverged) in zip(points, outcomes):
        row = dict(optimizer=label, config=opt, alpha=alpha, gamma=gamma, seed=seed,
                   final_train_loss=loss, final_test_loss=test, diverged=diverged)
        result.table.append(row)
        groups.setdefault((label, opt, alpha), []).append(row)
    for (label, opt, alpha), rows in groups.items():
        losses = [r["final_train_loss"] for r in rows]
        summary = dict(optimizer=label, config=opt, alpha=alpha, gamma=rows[0]["gamma"],
                       median_train_loss=float(np.median(losses)), losses=losses,
                       n_diverged=sum(r["diverged"] for r in rows))
        result.summary.append(summary)
        cur = result.best.get(label)
        if math.isfinite(summary["median_train_loss"]) and (
                cur is None or summary["median_train_loss"] < cur["median_train_loss"]):
            result.best[label] = summary
    if not result.best:
        raise DivergenceError("every grid point diverged")
    return result


def write_grid(result: GridResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ("optimizer", "config", "alpha", "gamma", "seed", "final_train_loss", "final_test_loss", "diverged")
    with (out / "results.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in result.table:
            w.writerow(["" if r[c] is None else (_fmt(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
    with (out / "best.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("optimizer", "config", "alpha", "gamma", "median_train_loss"))
        for label, s in result.best.items():
            w.writerow((label, s["config"], _fmt(s["alpha"]), "" if s["gamma"] is None else _fmt(s["gamma"]),
                        _fmt(s["median_train_loss"])))
