"""Uniform mini-batch and stratified gradient estimators, and their variances.

Variances are scalarized as the trace of the covariance matrix, i.e. the
expected squared Euclidean distance of an estimate from its mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stratify import Stratification


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator from an int or a SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


class UniformSampler:
    """I.i.d. uniform draws of ``batch_size`` example indices, with replacement.

    With ``sweep=True`` every draw returns all indices once (full gradient).
    """

    def __init__(self, n_examples: int, batch_size: int, seed=0, sweep: bool = False):
        if n_examples < 1:
            raise ValueError("cannot sample from an empty example set")
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        self.n_examples = n_examples
        self.batch_size = n_examples if sweep else batch_size
        self.sweep = sweep
        self.rng = make_rng(seed)

    def draw(self) -> np.ndarray:
        if self.sweep:
            return np.arange(self.n_examples)
        return self.rng.integers(0, self.n_examples, self.batch_size)


class StratifiedSampler:
    """Draws ``per_stratum`` indices uniformly with replacement inside each stratum.

    Every stratum owns an independent stream split from ``seed``, so a
    stratum's draws do not depend on how many other strata exist or on the
    order in which they are visited.
    """

    def __init__(self, stratification: Stratification, per_stratum: int = 1, seed=0):
        if per_stratum < 1:
            raise ValueError("per-stratum batch size must be >= 1")
        self.stratification = stratification
        self.per_stratum = per_stratum
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._rngs = [make_rng(child) for child in ss.spawn(stratification.n_strata)]
        b = per_stratum
        self.weights = np.repeat(stratification.weights / b, b)

    @property
    def cost(self) -> int:
        return self.stratification.n_strata * self.per_stratum

    def draw(self) -> np.ndarray:
        """Flat index array, stratum-major (``per_stratum`` entries per stratum)."""
        b = self.per_stratum
        out = np.empty(self.cost, dtype=np.int64)
        for k, (members, rng) in enumerate(zip(self.stratification.strata, self._rngs)):
            if members.size == 1:
                out[k * b:(k + 1) * b] = members[0]
            else:
                out[k * b:(k + 1) * b] = members[rng.integers(0, members.size, b)]
        return out


def uniform_grad(sampler: UniformSampler, oracle, theta):
    """Mini-batch mean gradient; returns ``(grad, evals)``."""
    idx = sampler.draw()
    return oracle.grad(theta, idx), idx.size


def stratified_grad(sampler: StratifiedSampler, oracle, theta):
    """``sum_i w_i * mean_{xi_i} grad f``; returns ``(grad, evals)`` with ``evals = B * b``."""
    idx = sampler.draw()
    return oracle.weighted_grad(theta, idx, sampler.weights), idx.size


@dataclass(frozen=True)
class StratumVariance:
    per_stratum: np.ndarray
    aggregate: float


def estimate_stratum_variance(stratification: Stratification, oracle, theta,
                              n_samples=None, per_stratum: int = 1, seed=0) -> StratumVariance:
    """Within-stratum single-draw gradient variances and ``sum_i w_i^2 var_i / b``.

    ``n_samples=None`` computes each stratum's variance exactly from all its
    members; otherwise ``n_samples`` draws per stratum give an unbiased estimate.
    Oracle calls made here are not counted against any budget.
    """
    if n_samples is not None and n_samples < 2:
        raise ValueError("Monte Carlo mode needs n_samples >= 2")
    rng = make_rng(seed)
    var = np.empty(stratification.n_strata)
    with oracle.uncounted():
        for k, members in enumerate(stratification.strata):
            if members.size == 1:
                var[k] = 0.0
                continue
            if n_samples is None:
                G = oracle.example_grads(theta, members)
                var[k] = np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1))
            else:
                G = oracle.example_grads(theta, members[rng.integers(0, members.size, n_samples)])
                var[k] = np.sum(G.var(axis=0, ddof=1))
    w = stratification.weights
    return StratumVariance(var, float(np.sum(w ** 2 * var) / per_stratum))


def estimate_sampler_variance(sampler, oracle, theta, n_trials: int) -> float:
    """Trace of the sample covariance of ``n_trials`` fresh estimates at fixed ``theta``."""
    if n_trials < 2:
        raise ValueError("n_trials must be >= 2")
    estimate = stratified_grad if isinstance(sampler, StratifiedSampler) else uniform_grad
    with oracle.uncounted():
        G = np.stack([estimate(sampler, oracle, theta)[0] for _ in range(n_trials)])
    return float(np.sum(G.var(axis=0, ddof=1)))
