"""Brute-force reference computations used to check the estimators and optimizers.

Everything here is deliberately slow and independent of the batched paths in
:mod:`scott.models` and :mod:`scott.samplers`: gradients are taken one example
at a time, expectations by enumerating outcomes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .stratify import Stratification


@dataclass(frozen=True)
class EnumerationReport:
    mean: np.ndarray
    variance: float
    n_outcomes: int
    total_probability: float


def _single_grads(oracle, theta, idx):
    with oracle.uncounted():
        return np.stack([oracle.grad(theta, [int(i)]) for i in idx])


def full_gradient(oracle, theta, idx=None) -> np.ndarray:
    """Mean of per-example gradients, one oracle call per example."""
    idx = range(oracle.n_examples) if idx is None else list(idx)
    if len(idx) == 0:
        raise ValueError("full gradient of an empty example set")
    return _single_grads(oracle, theta, idx).mean(axis=0)


def enumerate_uniform(oracle, theta, idx=None) -> EnumerationReport:
    """Exact mean and variance of a single uniformly drawn example gradient (M = 1)."""
    idx = range(oracle.n_examples) if idx is None else list(idx)
    G = _single_grads(oracle, theta, idx)
    mean = G.mean(axis=0)
    return EnumerationReport(mean, float(np.mean(np.sum((G - mean) ** 2, axis=1))), len(G), 1.0)


def enumerate_stratified(stratification: Stratification, oracle, theta,
                         per_stratum: int = 1) -> EnumerationReport:
    """Exact moments of the b = 1 stratified estimator, combined across independent strata."""
    if per_stratum != 1:
        raise NotImplementedError("exact enumeration supports one draw per stratum only")
    mean = np.zeros(oracle.dim)
    var = 0.0
    total = 1.0
    n_out = 1
    for w, members in zip(stratification.weights, stratification.strata):
        r = enumerate_uniform(oracle, theta, members)
        mean += w * r.mean
        var += w * w * r.variance
        n_out *= len(members)
    return EnumerationReport(mean, float(var), n_out, total)


def enumerate_joint(stratification: Stratification, oracle, theta,
                    max_outcomes: int = 200_000) -> EnumerationReport:
    """Exact moments of the b = 1 stratified estimator over every joint outcome.

    Each outcome picks one member per stratum with probability
    ``prod_i 1/|D_i|``; no independence argument is used.
    """
    sizes = [len(s) for s in stratification.strata]
    n_out = math.prod(sizes)
    if n_out > max_outcomes:
        raise ValueError(f"{n_out} joint outcomes exceeds the limit of {max_outcomes}")
    per = [_single_grads(oracle, theta, s) for s in stratification.strata]
    w = stratification.weights
    values = np.empty((n_out, oracle.dim))
    probs = np.empty(n_out)
    for k, choice in enumerate(itertools.product(*(range(n) for n in sizes))):
        values[k] = sum(w[i] * per[i][j] for i, j in enumerate(choice))
        probs[k] = math.prod(1.0 / n for n in sizes)
    mean = probs @ values
    var = float(probs @ np.sum((values - mean) ** 2, axis=1))
    return EnumerationReport(mean, var, n_out, float(math.fsum(probs)))


def theorem1_gradient(p: int, delta: float) -> np.ndarray:
    """Closed-form full gradient at zero on the adversarial AR(p) dataset, as published."""
    if p < 2:
        raise ValueError("closed form needs p >= 2")
    pb = p // 2
    g = np.zeros(p)
    g[0] = -delta ** 2 / (4 * pb)
    g[pb:] = -delta ** 2 / (4 * pb)
    return g


def theorem1_variance(p: int, delta: float, c: float = 0.0) -> float:
    """Published three-term expression for the M = 1 gradient variance at zero."""
    if p < 2:
        raise ValueError("closed form needs p >= 2")
    if c != 0:
        raise NotImplementedError("closed form is only available for c = 0")
    pb = p // 2
    q = p - pb
    d4 = delta ** 4
    r = ((2 * pb - 1) / (4 * pb)) ** 2
    return (1 / (2 * pb)) * (r * d4 + q / (16 * pb ** 2) * d4) \
        + (pb - 1) / (2 * pb) * ((q + 1) / (16 * pb ** 2) * d4) \
        + pb / (2 * pb) * (d4 / (16 * pb ** 2) + q * r * d4)


def theorem1_lower_bound(p: int, delta: float) -> float:
    pb = p // 2
    return (p - pb) / 2 * ((2 * pb - 1) / (4 * pb)) ** 2 * delta ** 4


def finite_diff_grad(lossfn, theta, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(x + h e_j) - f(x - h e_j)) / 2h``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    theta = np.array(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (lossfn(theta + e) - lossfn(theta - e)) / (2 * h)
    return g
