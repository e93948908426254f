"""Partitions of the training-example set into weighted strata."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np

from .dataset import TrainingExample


@dataclass(frozen=True)
class Stratification:
    """Disjoint, covering strata of example indices with weights ``|D_i| / |D|``."""

    strata: tuple
    weights: np.ndarray

    def __post_init__(self):
        strata = tuple(np.asarray(s, dtype=np.int64) for s in self.strata)
        if not strata:
            raise ValueError("a stratification needs at least one stratum")
        if any(s.size == 0 for s in strata):
            raise ValueError("empty stratum")
        flat = np.concatenate(strata)
        if np.unique(flat).size != flat.size:
            raise ValueError("strata overlap")
        if flat.min() < 0 or flat.max() != flat.size - 1:
            raise ValueError("strata do not cover 0..n-1")
        for s in strata:
            s.setflags(write=False)
        w = np.array([s.size for s in strata], dtype=np.float64) / flat.size
        w.setflags(write=False)
        object.__setattr__(self, "strata", strata)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_strata(cls, strata):
        return cls(tuple(strata), None)

    @property
    def n_strata(self) -> int:
        return len(self.strata)

    @property
    def n_examples(self) -> int:
        return int(sum(s.size for s in self.strata))

    def labels(self) -> np.ndarray:
        """Stratum id of every example index."""
        out = np.empty(self.n_examples, dtype=np.int64)
        for k, s in enumerate(self.strata):
            out[s] = k
        return out


def _group(keys: Sequence[Hashable], order) -> Stratification:
    groups: dict = {}
    for idx, key in enumerate(keys):
        groups.setdefault(key, []).append(idx)
    return Stratification.from_strata(groups[k] for k in order(groups))


def stratify_mod_timestamp(examples: Sequence[TrainingExample], modulus: int) -> Stratification:
    """Stratum ``t0 mod P``; residue classes with no example are dropped."""
    if modulus < 1:
        raise ValueError("modulus must be >= 1")
    if not examples:
        raise ValueError("no examples to stratify")
    return _group([ex.t0 % modulus for ex in examples], sorted)


def stratify_hierarchical(examples: Sequence[TrainingExample],
                          key_fn: Callable[[TrainingExample], tuple]) -> Stratification:
    """One stratum per distinct key tuple, ordered lexicographically."""
    if not examples:
        raise ValueError("no examples to stratify")
    return _group([tuple(key_fn(ex)) for ex in examples], sorted)


def weekday_season_key(ex: TrainingExample) -> tuple:
    """Hourly calendar key: (day of week, 90-day season)."""
    return ((ex.t0 // 24) % 7, (ex.t0 // (24 * 90)) % 4)


def stratify_random_hash(examples: Sequence[TrainingExample], n_strata: int, seed: int) -> Stratification:
    """Shuffle with ``seed``, then deal examples round-robin into ``n_strata`` strata."""
    n = len(examples)
    if not 1 <= n_strata <= n:
        raise ValueError(f"need 1 <= B <= {n} examples, got B={n_strata}")
    perm = np.random.default_rng(seed).permutation(n)
    return Stratification.from_strata(np.sort(perm[k::n_strata]) for k in range(n_strata))


def stratify_finest(examples: Sequence[TrainingExample]) -> Stratification:
    if not examples:
        raise ValueError("no examples to stratify")
    return Stratification.from_strata([i] for i in range(len(examples)))


def stratify_ground_truth(examples: Sequence[TrainingExample], labels: Sequence[int]) -> Stratification:
    """One stratum per distinct label, in order of first appearance."""
    if len(labels) != len(examples):
        raise ValueError(f"got {len(labels)} labels for {len(examples)} examples")
    if not examples:
        raise ValueError("no examples to stratify")
    return _group(list(labels), list)
