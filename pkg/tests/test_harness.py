import math
from dataclasses import replace

import numpy as np
import pytest

from scott.dataset import extract_examples, gen_synthetic_4pattern, write_csv, write_labels
from scott.harness import (CSV_COLUMNS, GAMMA_GRID, STEP_GRID, ConfigError, GridSpec, RunConfig, RunDiverged,
                           RunRecord, build_problem, emit_csv, expand_optimizer, grid_search, parse_config,
                           parse_grid, parse_optimizer, read_csv, run, split_examples)
from scott.optim import EarlyStop, Fixed, Geometric

BASE = """\
dataset = hetero:2:100:0.2
model = ar:1
optimizer = scott:geom
strata = mod:2
alpha = 0.01
batch_size = 2
budget = 1000
log_every = 100
"""


def cfg(**over):
    return replace(parse_config(BASE), **over)


def test_parse_optimizer_early_gamma():
    spec = parse_optimizer("scott:early:0.125")
    assert spec.kind == "scott" and spec.mode == EarlyStop(0.125)


@pytest.mark.parametrize("text,kind,mode,strata", [
    ("sgd", "sgd", None, None),
    ("adam:0.9:0.999", "adam", None, None),
    ("scott:fixed:5", "scott", Fixed(5), None),
    ("scsg:16", "scott", Geometric(), "random:16"),
    ("svrg", "scott", Geometric(), "finest"),
    ("sadam:0.9:0.999:early:0.1", "sadam", EarlyStop(0.1), None),
    ("sadam", "sadam", Geometric(), None),
    ("sadagrad:early:0.2", "sadagrad", EarlyStop(0.2), None),
])
def test_parse_optimizer_registry(text, kind, mode, strata):
    spec = parse_optimizer(text)
    assert (spec.kind, spec.mode, spec.strata) == (kind, mode, strata)


@pytest.mark.parametrize("text", ["sgdx", "scott", "scott:early", "scott:early:-1", "scsg:0", "adam:0.9"])
def test_parse_optimizer_rejects(text):
    with pytest.raises(ConfigError):
        parse_optimizer(text)


def test_config_round_trip_through_text():
    c = parse_config(BASE)
    assert parse_config(c.to_text()) == c


def test_missing_model():
    text = "\n".join(l for l in BASE.splitlines() if not l.startswith("model"))
    with pytest.raises(ConfigError, match="missing key: model"):
        parse_config(text)


def test_negative_budget():
    with pytest.raises(ConfigError, match="budget"):
        parse_config(BASE.replace("budget = 1000", "budget = -5"))


def test_unknown_key_names_line():
    with pytest.raises(ConfigError, match=r"line 9: unknown key: colour"):
        parse_config(BASE + "colour = blue\n")


def test_unparsable_value_names_key_and_line():
    with pytest.raises(ConfigError, match=r"line 5: alpha"):
        parse_config(BASE.replace("alpha = 0.01", "alpha = fast"))


@pytest.mark.parametrize("line", ["log_every = 5000", "split = 0", "split = 1.5", "scale = log",
                                  "strata = mod:x", "model = rnn:3", "dataset = weather:1"])
def test_invariant_violations(line):
    key = line.split(" = ")[0]
    text = "\n".join(l for l in BASE.splitlines() if not l.startswith(key + " ")) + "\n" + line + "\n"
    with pytest.raises(ConfigError):
        parse_config(text)


def test_stratified_optimizer_needs_strata():
    text = "\n".join(l for l in BASE.splitlines() if not l.startswith("strata"))
    with pytest.raises(ConfigError, match="strata"):
        parse_config(text)
    parse_config(text.replace("scott:geom", "svrg"))


def test_comments_and_blank_lines():
    c = parse_config("# header\n\n" + BASE.replace("alpha = 0.01", "alpha = 0.02  # tuned"))
    assert c.alpha == 0.02


def test_split_is_temporal_and_covering():
    ds, _ = gen_synthetic_4pattern(6)
    ex = extract_examples(ds)
    train, test = split_examples(ex, 0.8)
    assert sorted(train + test) == list(range(len(ex))) and not set(train) & set(test)
    for s in range(4):
        tr = [ex[k].t0 for k in train if ex[k].series_idx == s]
        te = [ex[k].t0 for k in test if ex[k].series_idx == s]
        assert max(tr) < min(te)
        assert len(te) == math.floor(0.2 * (len(tr) + len(te)))
    assert split_examples(ex, 1.0)[1] == []


def test_run_record_count_and_order():
    res = run(parse_config(BASE))
    assert len(res.records) in (10, 11)
    ev = [r.grad_evals for r in res.records]
    assert ev == sorted(set(ev)) and ev[-1] <= 1000
    assert all(r.test_loss is not None and r.sampler_variance is None for r in res.records)


def test_run_logs_exact_variance():
    res = run(cfg(variance="exact"))
    assert all(r.sampler_variance >= 0 for r in res.records)


def test_run_monte_carlo_variance_does_not_perturb_trajectory():
    a = run(cfg(variance="none"))
    b = run(cfg(variance="50"))
    np.testing.assert_array_equal(a.theta, b.theta)
    assert all(r.sampler_variance is not None for r in b.records)


def test_run_is_deterministic(tmp_path):
    for opt, extra in [("scott:early:0.125", {}), ("sgd", {}), ("sadam:0.9:0.999", {}), ("scsg:4", {})]:
        c = cfg(optimizer=opt, **extra)
        emit_csv(run(c).records, tmp_path / "a.csv")
        emit_csv(run(c).records, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_seed_changes_run():
    assert not np.array_equal(run(cfg(seed=1)).theta, run(cfg(seed=2)).theta)


def test_run_budget_honoured():
    res = run(cfg(budget=777, log_every=50))
    assert res.trajectory.evals <= 777 and res.records[-1].grad_evals == res.trajectory.evals


def test_divergence_keeps_partial_records():
    with pytest.raises(RunDiverged) as err:
        run(cfg(dataset="hetero:8:100:0.2", optimizer="sgd", alpha=5.0, log_every=2))
    assert err.value.records and err.value.records[0].grad_evals == 0


def test_output_sample_picks_an_outer_iterate():
    res = run(cfg(output="sample"))
    assert any(np.array_equal(res.theta, th) for th in res.trajectory.outer_iterates)


def test_feedforward_synthetic_run_with_truth_labels():
    c = RunConfig(dataset="synthetic:5", model="ff:8x8:nll", optimizer="sadam:0.9:0.999:early:0.125",
                  strata="labels:truth", budget=400, alpha=0.001, scale="std", split=0.8)
    res = run(c)
    assert res.stratification.n_strata == 16
    assert math.isfinite(res.final_train_loss)


def test_csv_dataset_and_label_file(tmp_path):
    ds, labels = gen_synthetic_4pattern(4, seed=1)
    write_csv(ds, tmp_path / "d.csv")
    write_labels(labels, tmp_path / "d.csv.labels")
    c = RunConfig(dataset=f"csv:{tmp_path / 'd.csv'}", model="ff:4x4:mse", optimizer="scott:geom",
                  strata=f"labels:{tmp_path / 'd.csv.labels'}", budget=300, context_len=72, pred_len=24,
                  stride=24, scale="max")
    res = run(c)
    assert res.stratification.n_strata == 16


def test_csv_dataset_needs_windows():
    with pytest.raises(ConfigError):
        RunConfig(dataset="csv:x.csv", model="ar:1", optimizer="sgd", budget=10)


def test_hier_and_random_strata():
    ds_cfg = dict(dataset="fig1:2000", model="ar:3", budget=600, context_len=24, pred_len=1)
    a = run(RunConfig(optimizer="scott:geom", strata="hier:weekday-season", **ds_cfg))
    assert a.stratification.n_strata == 7
    b = run(RunConfig(optimizer="scott:geom", strata="random:5:3", **ds_cfg))
    assert b.stratification.n_strata == 5


def test_scale_std_divides_values():
    p = build_problem(RunConfig(dataset="synthetic:3", model="ar:2", optimizer="sgd", budget=10, scale="std",
                                split=1.0))
    assert np.std(np.concatenate(p.dataset.series)) == pytest.approx(1.0)


# -- CSV ----------------------------------------------------------------------------

def test_emit_one_record(tmp_path):
    emit_csv([RunRecord(0, 0, 0, 1.5)], tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == [",".join(CSV_COLUMNS), "0,0,0,1.5,,"]


def test_emit_round_trip(tmp_path):
    recs = [RunRecord(0, 3, 0, 1 / 3, 2 / 3, None), RunRecord(17, 9, 2, math.pi * 1e-9, None, 1e300)]
    emit_csv(recs, tmp_path / "r.csv")
    assert read_csv(tmp_path / "r.csv") == recs


def test_emit_precision(tmp_path):
    emit_csv([RunRecord(1, 0, 0, 0.1234567890123456789)], tmp_path / "r.csv")
    cell = (tmp_path / "r.csv").read_text().splitlines()[1].split(",")[3]
    assert len(cell.lstrip("0.").rstrip("0")) >= 12


def test_emit_requires_records(tmp_path):
    with pytest.raises(ValueError):
        emit_csv([], tmp_path / "r.csv")


def test_emit_unwritable(tmp_path):
    with pytest.raises(OSError):
        emit_csv([RunRecord(0, 0, 0, 1.0)], tmp_path / "missing" / "r.csv")


# -- grid -----------------------------------------------------------------------------

def test_grid_defaults():
    assert STEP_GRID == (0.1, 0.05, 0.025, 0.01, 0.005, 0.0025, 0.001, 0.0005, 0.00025, 0.0001)
    assert GAMMA_GRID == (0.1, 0.125, 0.15, 0.2)


def test_grid_of_one_point():
    base = cfg(budget=300, log_every=100)
    res = grid_search(base, GridSpec(alphas=(0.01,), gammas=(0.1,)))
    assert len(res.table) == 1
    assert res.best["scott:geom"]["alpha"] == 0.01
    assert res.best["scott:geom"]["median_train_loss"] == pytest.approx(run(base).final_train_loss)


def test_grid_full_alpha_grid_runs_ten_points():
    res = grid_search(cfg(optimizer="sgd", budget=200), GridSpec())
    assert len(res.table) == 10


def test_grid_expands_gamma_for_early_stop():
    assert [g for _, g in expand_optimizer("scott:early", GAMMA_GRID)] == list(GAMMA_GRID)
    assert expand_optimizer("scott:early:0.2", GAMMA_GRID) == [("scott:early:0.2", 0.2)]
    assert expand_optimizer("sgd", GAMMA_GRID) == [("sgd", None)]
    res = grid_search(cfg(budget=200), GridSpec(alphas=(0.01, 0.001), gammas=(0.1, 0.2),
                                                optimizers=("scott:early", "sgd"), seeds=(0, 1)))
    assert len(res.table) == 2 * 2 * 2 + 2 * 2
    assert set(res.best) == {"scott:early", "sgd"}


def test_grid_all_diverged():
    with pytest.raises(Exception, match="diverged"):
        grid_search(cfg(dataset="hetero:8:100:0.2", optimizer="sgd"), GridSpec(alphas=(50.0,)))


def test_parse_grid():
    g = parse_grid("alpha = 0.1, 0.01\n# c\ngamma = 0.125\noptimizer = sgd, scott:early\nseeds = 0,1,2\n")
    assert g == GridSpec((0.1, 0.01), (0.125,), ("sgd", "scott:early"), (0, 1, 2))
    with pytest.raises(ConfigError, match="unknown grid key"):
        parse_grid("beta = 1\n")
