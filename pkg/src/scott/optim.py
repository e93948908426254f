"""SGD and the stratified control-variate optimizer family.

``scott_run`` alternates an outer loop that computes a stratified anchor
gradient ``g0`` at ``theta0`` with an inner loop of control-variate steps

    v = grad_xi(theta) - grad_xi(theta0) + g0

applied through an update rule (plain step, Adam or Adagrad). SCSG and SVRG
are the same loop run on random-hash and singleton strata respectively.

Budgets count per-example gradient evaluations; no step is started unless its
full cost fits in what remains.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .samplers import StratifiedSampler, UniformSampler, stratified_grad


class DivergenceError(RuntimeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


# -- update rules -------------------------------------------------------------

class SGDRule:
    def step(self, theta, v, alpha):
        return theta - alpha * v

    def reset(self):
        pass


class AdamRule:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.reset()

    def reset(self):
        self.m = self.s = None
        self.t = 0

    def step(self, theta, v, alpha):
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.s = np.zeros_like(theta)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * v
        self.s = self.beta2 * self.s + (1 - self.beta2) * v * v
        m_hat = self.m / (1 - self.beta1 ** self.t)
        s_hat = self.s / (1 - self.beta2 ** self.t)
        return theta - alpha * m_hat / (np.sqrt(s_hat) + self.eps)


class AdagradRule:
    def __init__(self, eps=1e-10):
        self.eps = eps
        self.reset()

    def reset(self):
        self.acc = None

    def step(self, theta, v, alpha):
        if self.acc is None:
            self.acc = np.zeros_like(theta)
        self.acc = self.acc + v * v
        return theta - alpha * v / (np.sqrt(self.acc) + self.eps)


# -- inner-loop length policies -----------------------------------------------

@dataclass(frozen=True)
class Geometric:
    """``K_t ~ Geo(B/(B+1))`` with B the number of strata."""


@dataclass(frozen=True)
class Fixed:
    k: int


@dataclass(frozen=True)
class EarlyStop:
    """Stop after the first step k >= 1 with ``|v_k|^2 <= gamma |v_0|^2``, or at ``k_max`` steps."""
    gamma: float
    k_max: Optional[int] = None


InnerMode = Union[Geometric, Fixed, EarlyStop]


def sample_inner_length(n_strata: int, rng) -> int:
    """Draw K with ``P(K = k) = p^k (1 - p)``, ``p = B/(B+1)``; ``E[K] = B``."""
    if n_strata < 1:
        raise ValueError("B must be >= 1")
    # numpy's geometric counts trials up to and including the first success
    return int(rng.geometric(1.0 / (n_strata + 1))) - 1


@dataclass
class Trajectory:
    theta: np.ndarray
    evals: int = 0
    outer_iterates: list = field(default_factory=list)
    outer_alphas: list = field(default_factory=list)
    inner_lengths: list = field(default_factory=list)
    steps: int = 0


Schedule = Union[float, Callable[[int], float]]


def _alpha(schedule: Schedule, t: int) -> float:
    return float(schedule(t)) if callable(schedule) else float(schedule)


def _check_finite(traj, theta, where):
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(f"non-finite parameters {where}", traj)


def sgd_run(oracle, sampler: UniformSampler, alpha: Schedule, budget: int, theta0,
            rule=None, monitor=None) -> Trajectory:
    """Plain stochastic steps ``theta <- rule(theta, grad_xi(theta))`` until the budget is spent.

    ``monitor(evals, outer, theta)`` is called after every step.
    """
    M = sampler.batch_size
    if budget < M:
        raise ValueError(f"budget {budget} smaller than one mini-batch ({M})")
    rule = rule or SGDRule()
    theta = np.array(theta0, dtype=np.float64)
    traj = Trajectory(theta)
    start = oracle.n_evals
    t = 0
    while traj.evals + M <= budget:
        g = oracle.grad(theta, sampler.draw())
        traj.evals = oracle.n_evals - start
        theta = rule.step(theta, g, _alpha(alpha, t))
        t += 1
        traj.steps = t
        traj.theta = theta
        _check_finite(traj, theta, f"after step {t}")
        if monitor:
            monitor(traj.evals, t, theta)
    return traj


def scott_run(oracle, strat_sampler: StratifiedSampler, unif_sampler: UniformSampler,
              alpha: Schedule, mode: InnerMode, budget: int, theta0, rng=None,
              rule=None, reset_rule: bool = False, monitor=None, on_anchor=None) -> Trajectory:
    """Run the stratified control-variate method until ``budget`` evaluations are spent.

    ``on_anchor(t, theta0, g0)`` sees every anchor; ``monitor(evals, outer, theta)``
    is called after the anchor and after each inner step. With ``reset_rule``
    the update rule's moment state is cleared at every outer loop.
    """
    rule = rule or SGDRule()
    B = strat_sampler.stratification.n_strata
    anchor_cost = strat_sampler.cost
    step_cost = 2 * unif_sampler.batch_size
    if budget < anchor_cost:
        raise ValueError(f"budget {budget} smaller than one anchor ({anchor_cost})")
    if isinstance(mode, EarlyStop):
        if not mode.gamma > 0:
            raise ValueError("early-stop gamma must be positive")
        if mode.gamma >= 1:
            warnings.warn("gamma >= 1: the inner loop will usually stop after its second step")
        k_cap = mode.k_max if mode.k_max is not None else 10 * B
    if isinstance(mode, Geometric) and rng is None:
        raise ValueError("geometric inner loop needs an rng")

    theta0 = np.array(theta0, dtype=np.float64)
    traj = Trajectory(theta0)
    start = oracle.n_evals
    t = 0
    exhausted = False
    while not exhausted and traj.evals + anchor_cost <= budget:
        a = _alpha(alpha, t)
        g0, _ = stratified_grad(strat_sampler, oracle, theta0)
        traj.evals = oracle.n_evals - start
        _check_finite(traj, g0, f"in anchor of outer loop {t}")
        traj.outer_iterates.append(theta0.copy())
        traj.outer_alphas.append(a)
        if on_anchor:
            on_anchor(t, theta0, g0)
        if monitor:
            monitor(traj.evals, t, theta0)
        if reset_rule:
            rule.reset()

        if isinstance(mode, Geometric):
            K = sample_inner_length(B, rng)
        elif isinstance(mode, Fixed):
            K = mode.k
        else:
            K = k_cap
        theta = theta0
        v0_sq = None
        k = 0
        while k < K:
            if traj.evals + step_cost > budget:
                exhausted = True
                break
            idx = unif_sampler.draw()
            v = oracle.grad(theta, idx) - oracle.grad(theta0, idx) + g0
            traj.evals = oracle.n_evals - start
            theta = rule.step(theta, v, a)
            k += 1
            traj.steps += 1
            traj.theta = theta
            _check_finite(traj, theta, f"at outer loop {t}, inner step {k}")
            if monitor:
                monitor(traj.evals, t, theta)
            if isinstance(mode, EarlyStop):
                v_sq = float(v @ v)
                if v0_sq is None:
                    v0_sq = v_sq
                elif v_sq <= mode.gamma * v0_sq:
                    break
        traj.inner_lengths.append(k)
        theta0 = theta
        traj.theta = theta
        t += 1
    return traj


def s_adam_run(oracle, strat_sampler, unif_sampler, alpha, mode, budget, theta0, rng=None,
               beta1=0.9, beta2=0.999, eps=1e-8, reset_moments=False, **kw) -> Trajectory:
    return scott_run(oracle, strat_sampler, unif_sampler, alpha, mode, budget, theta0, rng=rng,
                     rule=AdamRule(beta1, beta2, eps), reset_rule=reset_moments, **kw)


def s_adagrad_run(oracle, strat_sampler, unif_sampler, alpha, mode, budget, theta0, rng=None,
                  eps=1e-10, reset_moments=False, **kw) -> Trajectory:
    return scott_run(oracle, strat_sampler, unif_sampler, alpha, mode, budget, theta0, rng=rng,
                     rule=AdagradRule(eps), reset_rule=reset_moments, **kw)


def select_output(outer_iterates, alphas, n_strata: int, rng) -> np.ndarray:
    """Pick one outer iterate with probability proportional to ``alpha_t * B``."""
    if not outer_iterates:
        raise ValueError("no outer iterates to select from")
    p = np.asarray(alphas, dtype=np.float64) * n_strata
    k = rng.choice(len(outer_iterates), p=p / p.sum())
    return outer_iterates[int(k)]
