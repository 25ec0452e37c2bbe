"""Monte Carlo plumbing shared by every estimator.

Simulations are split into fixed-size chunks. Chunk ``c`` of block ``k``
always draws from ``rng_stream(seed, (k, c))`` and the chunk summaries are
merged by a pairwise tree in chunk order, so an estimate depends only on
``(inputs, seed, K)`` and never on how many threads produced it.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, UndefinedEfficiencyError

CHUNK_SIZE = 2048

Sampler = Callable[[int, np.random.Generator], "tuple[np.ndarray, np.ndarray]"]


@dataclass(frozen=True)
class Estimate:
    p_hat: float
    se: float
    K: int
    var_delta: float
    method: str
    hit_count: int
    seed: Optional[int] = None
    warnings: tuple = field(default=())

    @property
    def zero_hits(self) -> bool:
        return self.hit_count == 0

    @property
    def upper_bound(self) -> float:
        """Rule-of-three 95% upper bound, meaningful when no hits occurred."""
        return 3.0 / self.K


@dataclass(frozen=True)
class EfficiencyReport:
    K_IS: float
    K_MC: float
    efficiency: float
    # p(1 - p) / Var(delta); equals ``efficiency`` up to the (1 - p) factor
    efficiency_exact: float


def rng_stream(master_seed: int, stream_id: Union[int, Sequence[int]] = 0) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(master_seed, stream_id)``."""
    if not 0 <= int(master_seed) < 2**64:
        raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {master_seed!r}")
    key = (int(stream_id),) if np.isscalar(stream_id) else tuple(int(s) for s in stream_id)
    ss = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Moments:
    """Count, mean, centred sum of squares and hit count of a chunk of deltas."""

    n: int
    mean: float
    m2: float
    hits: int

    @classmethod
    def of(cls, deltas: np.ndarray, hits: Optional[int] = None) -> "Moments":
        d = np.asarray(deltas, dtype=float).ravel()
        n = d.size
        if n == 0:
            return cls(0, 0.0, 0.0, 0)
        mean = math.fsum(d) / n
        m2 = math.fsum((d - mean) ** 2)
        if hits is None:
            hits = int(np.count_nonzero(d))
        return cls(n, mean, m2, int(hits))

    def merge(self, other: "Moments") -> "Moments":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        n = self.n + other.n
        diff = other.mean - self.mean
        mean = self.mean + diff * (other.n / n)
        m2 = self.m2 + other.m2 + diff * diff * (self.n * other.n / n)
        return Moments(n, mean, m2, self.hits + other.hits)


def tree_reduce(parts: Sequence[Moments]) -> Moments:
    parts = list(parts)
    if not parts:
        return Moments(0, 0.0, 0.0, 0)
    while len(parts) > 1:
        merged = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]


def to_estimate(mom: Moments, method: str, ddof: int = 1, seed: Optional[int] = None) -> Estimate:
    K = mom.n
    if K < 2:
        raise ConfigurationError(f"K must be at least 2, got {K}")
    notes = ()
    if mom.hits == 0:
        warnings.warn(f"{method}: no simulation hit the event; reporting p = 0", stacklevel=3)
        notes = ("zero-hits",)
        return Estimate(0.0, 0.0, K, 0.0, method, 0, seed, notes)
    var = max(mom.m2, 0.0) / (K - ddof)
    return Estimate(mom.mean, math.sqrt(var / K), K, var, method, mom.hits, seed, notes)


def accumulate(deltas, method: str = "IS", ddof: int = 1, seed: Optional[int] = None) -> Estimate:
    """Mean, sample variance and standard error of per-simulation weights."""
    d = np.asarray(deltas, dtype=float).ravel()
    if d.size < 2:
        raise ConfigurationError(f"K must be at least 2, got {d.size}")
    return to_estimate(Moments.of(d), method, ddof, seed)


def efficiency(e: Estimate) -> EfficiencyReport:
    """Simulation counts for 10% relative error under IS and naive MC."""
    if e.p_hat <= 0 or e.var_delta <= 0:
        raise UndefinedEfficiencyError(
            f"efficiency undefined for p_hat={e.p_hat!r}, var_delta={e.var_delta!r}"
        )
    p = e.p_hat
    k_is = e.var_delta / (0.1 * p) ** 2
    k_mc = 100.0 / p
    return EfficiencyReport(k_is, k_mc, k_mc / k_is, p * (1 - p) / e.var_delta)


def default_threads() -> int:
    return os.cpu_count() or 1


def simulate(
    sampler: Sampler,
    thresholds: Sequence[float],
    K: int,
    seed: int,
    *,
    block: int = 0,
    threads: Optional[int] = None,
    method: str = "IS",
    ddof: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> list[Estimate]:
    """Run ``K`` simulations and score them against every threshold.

    ``sampler(n, rng)`` returns per-simulation log-weights and the event
    statistic; simulation ``k`` contributes ``exp(logw_k) * [stat_k > b]``
    to the estimate at threshold ``b``. A threshold of ``-inf`` keeps every
    weight (the unrestricted mean, which should be 1 for a valid IS scheme).
    """
    K = int(K)
    if K < 2:
        raise ConfigurationError(f"K must be at least 2, got {K}")
    b = np.asarray(thresholds, dtype=float)
    sizes = [chunk_size] * (K // chunk_size)
    if K % chunk_size:
        sizes.append(K % chunk_size)

    def run_chunk(c: int) -> list[Moments]:
        rng = rng_stream(seed, (block, c))
        logw, stat = sampler(sizes[c], rng)
        w = np.exp(logw)
        out = []
        for bt in b:
            hit = stat > bt
            out.append(Moments.of(np.where(hit, w, 0.0), hits=int(hit.sum())))
        return out

    nthreads = threads or default_threads()
    if nthreads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            parts = list(pool.map(run_chunk, range(len(sizes))))
    else:
        parts = [run_chunk(c) for c in range(len(sizes))]

    return [
        to_estimate(tree_reduce([p[t] for p in parts]), method, ddof, seed)
        for t in range(b.size)
    ]


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise ``log(sum(exp(a)))`` with max shifting."""
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.log(np.exp(a - m).sum(axis=1)) + m[:, 0]
