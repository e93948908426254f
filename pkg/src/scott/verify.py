"""Fast self-checks of the estimators against the brute-force oracles.

Each check returns ``(name, passed, detail)``; :func:`run_suite` runs them all.
"""
from __future__ import annotations

import numpy as np

from .dataset import TimeSeriesDataset, example_arrays, extract_examples, gen_adversarial
from .models import ARModel, FeedforwardModel, GradientOracle
from .optim import Geometric, sample_inner_length, scott_run
from .oracle import (enumerate_joint, enumerate_uniform, finite_diff_grad, full_gradient,
                     theorem1_gradient, theorem1_lower_bound, theorem1_variance)
from .samplers import StratifiedSampler, UniformSampler, make_rng
from .stratify import Stratification, stratify_finest


def random_instance(rng, max_examples: int = 20, order: int = 2):
    """A random AR(order) oracle on at most ``max_examples`` examples plus a random partition."""
    n_series = int(rng.integers(1, 4))
    per = max(1, max_examples // n_series)
    series = [rng.normal(size=order + int(rng.integers(1, per + 1))) for _ in range(n_series)]
    ds = TimeSeriesDataset(tuple(series), order, 1)
    examples = extract_examples(ds)
    X, Y = example_arrays(ds, examples)
    oracle = GradientOracle(ARModel(order), X, Y)
    n = oracle.n_examples
    B = int(rng.integers(1, n + 1))
    labels = np.concatenate([np.arange(B), rng.integers(0, B, n - B)])
    rng.shuffle(labels)
    strat = Stratification.from_strata(np.flatnonzero(labels == k) for k in range(B))
    return oracle, strat, rng.normal(size=order)


def check_unbiased(n_instances=50, seed=0):
    rng = make_rng(seed)
    worst_mean = worst_var = 0.0
    for _ in range(n_instances):
        oracle, strat, theta = random_instance(rng)
        rep = enumerate_joint(strat, oracle, theta)
        worst_mean = max(worst_mean, float(np.max(np.abs(rep.mean - full_gradient(oracle, theta)))))
        per = sum(w * w * enumerate_uniform(oracle, theta, s).variance
                  for w, s in zip(strat.weights, strat.strata))
        worst_var = max(worst_var, abs(rep.variance - per))
    return [("stratified estimator unbiased", worst_mean <= 1e-12, f"max |E g - grad f| = {worst_mean:.2e}"),
            ("stratified variance identity", worst_var <= 1e-10, f"max deviation = {worst_var:.2e}")]


def check_adversarial():
    out = []
    for p in (2, 4, 6, 8):
        for delta in (0.5, 1.0):
            ds = gen_adversarial(p, delta)
            X, Y = example_arrays(ds, extract_examples(ds))
            oracle = GradientOracle(ARModel(p), X, Y)
            rep = enumerate_uniform(oracle, np.zeros(p))
            g_ok = np.array_equal(rep.mean, theorem1_gradient(p, delta))
            v_ok = abs(rep.variance - theorem1_variance(p, delta)) <= 1e-10
            lb_ok = rep.variance >= theorem1_lower_bound(p, delta)
            out.append((f"adversarial AR({p}) delta={delta}", g_ok and v_ok and lb_ok,
                        f"grad {'ok' if g_ok else 'differs'}, var {rep.variance:.6g} "
                        f"vs closed form {theorem1_variance(p, delta):.6g}, bound {'ok' if lb_ok else 'violated'}"))
    return out


def check_svrg_limit(outer=50, seed=0):
    rng = make_rng(seed)
    series = (rng.normal(size=40), rng.normal(size=30))
    ds = TimeSeriesDataset(series, 3, 1)
    ex = extract_examples(ds)
    oracle = GradientOracle(ARModel(3), *example_arrays(ds, ex))
    strat = stratify_finest(ex)
    errors = []

    def on_anchor(t, theta0, g0):
        errors.append(float(np.linalg.norm(g0 - full_gradient(oracle, theta0))))

    n = strat.n_strata
    # geometric inner loops have mean length n and cost 2 per step
    scott_run(oracle, StratifiedSampler(strat, 1, 1), UniformSampler(oracle.n_examples, 1, 2), 0.01,
              Geometric(), 10 * outer * n, np.zeros(3), rng=make_rng(3), on_anchor=on_anchor)
    worst = max(errors[:outer])
    ok = len(errors) >= outer and worst <= 1e-12
    return [("finest strata give the exact anchor", ok, f"{len(errors)} anchors, max error = {worst:.2e}")]


def check_geometric(draws=100_000, seed=0):
    rng = make_rng(seed)
    out = []
    for B in (1, 4, 16):
        m = float(np.mean([sample_inner_length(B, rng) for _ in range(draws)]))
        out.append((f"inner length mean, B={B}", abs(m - B) <= 0.05 * B, f"mean = {m:.4f}"))
    return out


def check_gradients(points=20, seed=0):
    rng = make_rng(seed)
    X = rng.normal(size=(5, 6))
    Y = rng.normal(size=(5, 2))
    out = []
    for name, model in (("ar", ARModel(3, 2)), ("ff-mse", FeedforwardModel(6, 2, (4, 3), "mse")),
                        ("ff-nll", FeedforwardModel(6, 2, (4, 3), "nll"))):
        oracle = GradientOracle(model, X, Y)
        worst = 0.0
        for _ in range(points):
            theta = rng.normal(scale=0.5, size=model.dim)
            g = oracle.grad(theta, None)
            fd = finite_diff_grad(lambda th: oracle.value(th), theta)
            worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-12)))
        out.append((f"gradient check {name}", worst <= 1e-5, f"max rel. error = {worst:.2e}"))
    return out


CHECKS = (check_unbiased, check_adversarial, check_svrg_limit, check_geometric, check_gradients)


def run_suite():
    results = []
    for check in CHECKS:
        results.extend(check())
    return results
