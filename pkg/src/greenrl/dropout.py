"""p-percentile sample dropout.

A batch keeps exactly the samples whose reward is at most the nearest-rank
p-percentile of the batch rewards, so training concentrates on the worst
(lowest-reward) part of the experience. Ties with the percentile value are
kept. Two granularities exist:

* :func:`drop` filters individual transitions (used when filling buffers);
* :func:`dropout_return` filters whole rollout fragments by their discounted
  return and averages the survivors (the value estimate of the filtered
  rollouts).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np


@dataclass
class SampleBatch:
    """Transitions x = (s', s, a) with reward r(x), stored column-wise.

    ``fragment`` identifies the rollout fragment a transition belongs to and
    ``step`` its time index inside that fragment.
    """

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    fragment: np.ndarray
    step: np.ndarray

    def __post_init__(self):
        n = len(self.r)
        for f in fields(self):
            if len(getattr(self, f.name)) != n:
                raise ValueError(f"column {f.name} has {len(getattr(self, f.name))} rows, expected {n}")

    def __len__(self):
        return len(self.r)

    def take(self, idx) -> "SampleBatch":
        return SampleBatch(*(getattr(self, f.name)[idx] for f in fields(self)))

    @classmethod
    def concat(cls, batches) -> "SampleBatch":
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, f.name) for b in batches]) for f in fields(cls)))


def _check_p(p):
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")


def _rewards(batch) -> np.ndarray:
    r = np.asarray(batch.r if hasattr(batch, "r") else batch, dtype=np.float64).reshape(-1)
    if r.size == 0:
        raise ValueError("cannot apply dropout to an empty batch")
    if not np.all(np.isfinite(r)):
        raise ValueError("batch rewards must be finite")
    return r


def percentile_rank(n: int, p: float) -> int:
    """1-indexed nearest rank ``ceil(p * n)``.

    The small slack absorbs binary rounding such as ``0.7 * 10 = 7.000000000000001``.
    """
    _check_p(p)
    return min(n, max(1, math.ceil(p * n - 1e-9)))


def percentile_reward(batch, p: float) -> float:
    """Nearest-rank p-percentile of the batch rewards."""
    r = _rewards(batch)
    return float(np.sort(r)[percentile_rank(r.size, p) - 1])


def drop_mask(rewards, p: float) -> np.ndarray:
    """Boolean mask of the samples retained by dropout (``r <= r_p``)."""
    r = _rewards(rewards)
    return r <= percentile_reward(r, p)


def drop(batch, p: float):
    """Retained part of ``batch``, in input order; the input is left unmodified.

    ``batch`` is a :class:`SampleBatch` (or anything with ``r`` and ``take``)
    or a plain sequence of rewards, in which case the kept rewards are returned.
    """
    keep = np.flatnonzero(drop_mask(batch, p))
    if hasattr(batch, "take"):
        return batch.take(keep)
    return np.asarray(batch, dtype=np.float64).reshape(-1)[keep]


def fragment_returns(batch: SampleBatch, gamma: float):
    """Discounted return ``sum_t gamma^t r_t`` of every fragment; returns (ids, values)."""
    ids, inverse = np.unique(batch.fragment, return_inverse=True)
    disc = np.power(gamma, np.asarray(batch.step, dtype=np.float64))
    values = np.zeros(len(ids))
    np.add.at(values, inverse, disc * np.asarray(batch.r, dtype=np.float64))
    return ids, values


def dropout_return(batch, p: float, gamma: float) -> float:
    """Mean discounted return over the fragments retained by fragment-level dropout.

    ``batch`` is a :class:`SampleBatch` or a list of per-fragment reward
    sequences (each starting at t = 0).
    """
    _check_p(p)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if isinstance(batch, SampleBatch):
        _, values = fragment_returns(batch, gamma)
    else:
        values = np.array([np.sum(np.asarray(f, dtype=np.float64) * gamma ** np.arange(len(f)))
                           for f in batch])
    if values.size == 0:
        raise ValueError("no fragments")
    return float(np.mean(values[drop_mask(values, p)]))
