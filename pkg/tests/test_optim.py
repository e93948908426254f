import warnings

import numpy as np
import pytest

from scott.dataset import TimeSeriesDataset, example_arrays, extract_examples, gen_heterogeneity_toy
from scott.models import ARModel, GradientOracle
from scott.oracle import full_gradient
from scott.optim import (AdagradRule, AdamRule, DivergenceError, EarlyStop, Fixed, Geometric, SGDRule,
                         s_adagrad_run, s_adam_run, sample_inner_length, scott_run, select_output, sgd_run)
from scott.samplers import StratifiedSampler, UniformSampler, make_rng
from scott.stratify import stratify_finest, stratify_mod_timestamp, stratify_random_hash


def _parabola(a=2.0):
    # one example, context [1], target [a]: loss (theta - a)^2
    return GradientOracle(ARModel(1), np.array([[1.0]]), np.array([[a]]))


def _hetero(delta=2.0, n=20, noise=0.2, seed=0):
    ds = gen_heterogeneity_toy(delta, n, noise, seed)
    ex = extract_examples(ds)
    return GradientOracle(ARModel(1), *example_arrays(ds, ex)), ex


class Recorder(SGDRule):
    def __init__(self):
        self.vs = []

    def step(self, theta, v, alpha):
        self.vs.append(v.copy())
        return super().step(theta, v, alpha)


def test_sgd_parabola_monotone():
    oracle = _parabola(2.0)
    path = []
    sgd_run(oracle, UniformSampler(1, 1), 0.1, 50, np.zeros(1), monitor=lambda e, t, th: path.append(th[0]))
    gaps = np.abs(np.array(path) - 2.0)
    assert np.all(np.diff(gaps) < 0) and gaps[-1] < 1e-3


def test_sgd_zero_step_keeps_theta():
    oracle, _ = _hetero()
    traj = sgd_run(oracle, UniformSampler(oracle.n_examples, 3), 0.0, 90, np.array([0.7]))
    assert traj.theta[0] == 0.7 and traj.evals == 90


def test_sgd_large_step_oscillates():
    oracle, _ = _hetero(delta=8.0, n=50)
    losses = []
    sgd_run(oracle, UniformSampler(oracle.n_examples, 1, seed=1), 0.005, 400, np.zeros(1),
            monitor=lambda e, t, th: losses.append(oracle.value(th)))
    assert np.mean(np.diff(losses) > 0) >= 0.1


def test_sgd_divergence_raises():
    oracle, _ = _hetero(delta=8.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(DivergenceError) as err:
            sgd_run(oracle, UniformSampler(oracle.n_examples, 1), 10.0, 10_000, np.ones(1))
    assert err.value.trajectory is not None


def test_inner_length_distribution_b1():
    rng = make_rng(0)
    K = np.array([sample_inner_length(1, rng) for _ in range(40_000)])
    assert abs(np.mean(K == 0) - 0.5) < 0.01
    assert abs(np.mean(K == 1) - 0.25) < 0.01


def test_inner_length_mean_b16():
    rng = make_rng(1)
    assert abs(np.mean([sample_inner_length(16, rng) for _ in range(100_000)]) - 16) <= 0.8


def test_zero_inner_steps_recompute_anchor():
    oracle, ex = _hetero()
    strat = stratify_mod_timestamp(ex, 2)
    traj = scott_run(oracle, StratifiedSampler(strat), UniformSampler(oracle.n_examples, 1), 0.01, Fixed(0),
                     20, np.zeros(1))
    assert traj.inner_lengths == [0] * 10 and traj.steps == 0 and traj.evals == 20


def test_first_inner_step_uses_anchor_exactly():
    oracle, ex = _hetero()
    strat = stratify_mod_timestamp(ex, 2)
    anchors = []
    rule = Recorder()
    scott_run(oracle, StratifiedSampler(strat, seed=3), UniformSampler(oracle.n_examples, 2, seed=4), 0.01,
              Fixed(3), 200, np.array([0.3]), rule=rule, on_anchor=lambda t, th, g: anchors.append(g.copy()))
    for t, g0 in enumerate(anchors[:-1]):
        np.testing.assert_array_equal(rule.vs[3 * t], g0)


def test_finest_strata_give_exact_snapshot():
    oracle, ex = _hetero(n=8)
    errs = []
    scott_run(oracle, StratifiedSampler(stratify_finest(ex)), UniformSampler(oracle.n_examples, 1), 0.01,
              Geometric(), 3000, np.zeros(1), rng=make_rng(0),
              on_anchor=lambda t, th, g: errs.append(np.linalg.norm(g - full_gradient(oracle, th))))
    assert len(errs) > 5 and max(errs) <= 1e-12


def test_random_hash_anchor_cost():
    oracle, ex = _hetero(n=10)
    strat = stratify_random_hash(ex, 5, seed=1)
    costs = []
    prev = [0]

    def on_anchor(t, th, g):
        costs.append(oracle.n_evals - prev[0])

    def monitor(e, t, th):
        prev[0] = oracle.n_evals

    scott_run(oracle, StratifiedSampler(strat), UniformSampler(oracle.n_examples, 1), 0.01, Fixed(2),
              90, np.zeros(1), monitor=monitor, on_anchor=on_anchor)
    assert costs == [5] * len(costs) and len(costs) == 10


def test_early_stop_exits_at_first_small_step():
    oracle, ex = _hetero(n=30)
    strat = stratify_mod_timestamp(ex, 2)
    rule = Recorder()
    gamma = 0.125
    traj = scott_run(oracle, StratifiedSampler(strat, seed=1), UniformSampler(oracle.n_examples, 2, seed=2), 0.02,
                     EarlyStop(gamma, k_max=15), 3000, np.zeros(1), rule=rule)
    pos = 0
    for L in traj.inner_lengths[:-1]:
        vs = rule.vs[pos:pos + L]
        pos += L
        v0 = vs[0] @ vs[0]
        small = [k for k in range(1, L) if vs[k] @ vs[k] <= gamma * v0]
        if L < 15:
            assert small == [L - 1]
        else:
            assert small in ([], [14])
    assert any(L < 15 for L in traj.inner_lengths)


def test_early_stop_default_cap_is_ten_b():
    oracle, ex = _hetero(delta=1.0, n=5, noise=0.0)
    strat = stratify_mod_timestamp(ex, 2)
    # with a zero step every v equals the anchor, so the stop test never fires
    traj = scott_run(oracle, StratifiedSampler(strat), UniformSampler(oracle.n_examples, 1), 0.0,
                     EarlyStop(1e-30), 400, np.array([0.3]))
    assert max(traj.inner_lengths) == 20


def test_early_stop_gamma_warning():
    oracle, ex = _hetero()
    with pytest.warns(UserWarning):
        scott_run(oracle, StratifiedSampler(stratify_mod_timestamp(ex, 2)), UniformSampler(oracle.n_examples, 1),
                  0.01, EarlyStop(1.5), 50, np.zeros(1))


@pytest.mark.parametrize("mode", [Geometric(), Fixed(4), EarlyStop(0.125)], ids=repr)
@pytest.mark.parametrize("budget", [7, 50, 333, 1000])
def test_budget_never_exceeded(mode, budget):
    oracle, ex = _hetero()
    strat = stratify_mod_timestamp(ex, 2)
    traj = scott_run(oracle, StratifiedSampler(strat, 2), UniformSampler(oracle.n_examples, 3), 0.01, mode,
                     budget, np.zeros(1), rng=make_rng(0))
    assert traj.evals == oracle.n_evals <= budget
    # the run stops only when neither an anchor (4) nor an inner step (6) fits
    assert budget - traj.evals < 6


def test_budget_smaller_than_anchor():
    oracle, ex = _hetero()
    with pytest.raises(ValueError):
        scott_run(oracle, StratifiedSampler(stratify_finest(ex)), UniformSampler(oracle.n_examples, 1), 0.1,
                  Fixed(1), 5, np.zeros(1))


def test_scott_deterministic():
    oracle, ex = _hetero()
    strat = stratify_mod_timestamp(ex, 2)

    def go():
        return scott_run(oracle, StratifiedSampler(strat, seed=5), UniformSampler(oracle.n_examples, 2, seed=6),
                         0.01, Geometric(), 500, np.zeros(1), rng=make_rng(7)).theta

    np.testing.assert_array_equal(go(), go())


def test_scott_beats_sgd_on_parity_toy():
    # parity strata remove the heterogeneity noise that stalls SGD at a fixed step
    excess_sgd, excess_scott = [], []
    for seed in range(8):
        oracle, ex = _hetero(delta=2.0, n=100, noise=0.2, seed=seed)
        X, Y = oracle.X[:, 0], oracle.Y[:, 0]
        best = np.array([X @ Y / (X @ X)])
        f_star = oracle.value(best)
        t = sgd_run(oracle, UniformSampler(oracle.n_examples, 2, seed=seed), 0.02, 8000, np.zeros(1))
        excess_sgd.append(oracle.value(t.theta) - f_star)
        t = scott_run(oracle, StratifiedSampler(stratify_mod_timestamp(ex, 2), seed=seed),
                      UniformSampler(oracle.n_examples, 2, seed=seed), 0.02, Geometric(), 8000, np.zeros(1),
                      rng=make_rng(seed))
        excess_scott.append(oracle.value(t.theta) - f_star)
    assert np.median(excess_scott) < 0.5 * np.median(excess_sgd)


def test_select_output_constant_alpha_is_uniform():
    rng = make_rng(0)
    iterates = [np.array([float(k)]) for k in range(4)]
    picks = [select_output(iterates, [0.1] * 4, 3, rng)[0] for _ in range(20_000)]
    np.testing.assert_allclose(np.bincount(np.array(picks, dtype=int)) / 20_000, 0.25, atol=0.015)


def test_select_output_single_iterate():
    assert select_output([np.array([5.0])], [0.3], 2, make_rng(1))[0] == 5.0


def test_select_output_proportional_to_alpha():
    rng = make_rng(2)
    iterates = [np.array([0.0]), np.array([1.0])]
    picks = np.array([select_output(iterates, [1.0, 3.0], 4, rng)[0] for _ in range(10_000)])
    ratio = np.mean(picks == 1) / np.mean(picks == 0)
    assert abs(ratio - 3) <= 0.05 * 3


def test_select_output_empty():
    with pytest.raises(ValueError):
        select_output([], [], 1, make_rng(0))


def test_adam_zero_betas_is_sign_step():
    rule = AdamRule(0.0, 0.0, eps=1e-12)
    theta = rule.step(np.zeros(3), np.array([0.3, -7.0, 0.0]), 0.01)
    np.testing.assert_allclose(theta, [-0.01, 0.01, 0.0], atol=1e-12)


def test_adam_bias_correction_first_step():
    rule = AdamRule(0.9, 0.999, eps=0.0)
    theta = rule.step(np.zeros(1), np.array([4.0]), 0.1)
    assert theta[0] == pytest.approx(-0.1)


def test_adagrad_accumulates():
    rule = AdagradRule(eps=0.0)
    theta = rule.step(np.zeros(1), np.array([3.0]), 1.0)
    theta = rule.step(theta, np.array([4.0]), 1.0)
    assert theta[0] == pytest.approx(-1.0 - 4.0 / 5.0)


@pytest.mark.parametrize("runner", [s_adam_run, s_adagrad_run])
def test_zero_control_variate_keeps_theta(runner):
    oracle = GradientOracle(ARModel(1), np.array([[1.0], [2.0]]), np.array([[1.5], [3.0]]))
    ex = extract_examples(TimeSeriesDataset((np.zeros(3),), 1, 1))
    traj = runner(oracle, StratifiedSampler(stratify_finest(ex)), UniformSampler(2, 1), 0.1, Fixed(3), 100,
                  np.array([1.5]))
    assert traj.theta[0] == 1.5 and traj.steps > 0


def test_s_adam_moment_reset_changes_path():
    oracle, ex = _hetero()
    strat = stratify_mod_timestamp(ex, 2)

    def go(reset):
        return s_adam_run(oracle, StratifiedSampler(strat, seed=1), UniformSampler(oracle.n_examples, 2, seed=2),
                          0.01, Fixed(3), 300, np.zeros(1), reset_moments=reset).theta

    assert go(True)[0] != go(False)[0]
