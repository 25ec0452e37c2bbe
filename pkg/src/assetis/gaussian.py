"""Tail probabilities of max |Z_A| when the study scores are jointly normal.

The importance sampler draws a driving subset ``A`` and a sign ``s``
uniformly, shifts the scores so that ``E(Z_A) = s * xi`` and reweights by
the inverse of the mixture likelihood ratio over all ``2 (2^M - 1)``
(subset, sign) components.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import mc
from .errors import ConfigurationError
from .model import StudyDesign, all_subset_statistics

DEFAULT_K = 50_000


def _check_b(b: float) -> float:
    b = float(b)
    if not np.isfinite(b) or b <= 0:
        raise ConfigurationError(f"threshold b must be positive, got {b!r}")
    return b


def _null_factor(design: StudyDesign) -> Optional[np.ndarray]:
    if design.sigma is None:
        return None
    return np.linalg.cholesky(design.sigma)


def mixture_log_denominator(Z: np.ndarray, xi: float) -> np.ndarray:
    """``log sum_A [exp(xi Z_A - xi^2/2) + exp(-xi Z_A - xi^2/2)]`` per row."""
    a = xi * Z
    m = np.abs(a).max(axis=1, keepdims=True)
    s = (np.exp(a - m) + np.exp(-a - m)).sum(axis=1)
    return np.log(s) + m[:, 0] - 0.5 * xi * xi


def normal_sampler(design: StudyDesign, xi: float) -> mc.Sampler:
    """Tilted-mixture sampler returning (log delta without indicator, max |Z_A|)."""
    shifts = xi * design.tilt_shifts()
    n_pairs = 2 * shifts.shape[0]
    log_pairs = np.log(n_pairs)
    L = _null_factor(design)
    # build cached coefficient tables before any worker thread touches them
    design.coefficients

    def sample(n: int, rng: np.random.Generator):
        pick = rng.integers(0, n_pairs, size=n)
        sign = 1.0 - 2.0 * (pick & 1)
        z = rng.standard_normal((n, design.M))
        if L is not None:
            z = z @ L.T
        z += sign[:, None] * shifts[pick >> 1]
        Z = all_subset_statistics(z, design)
        return log_pairs - mixture_log_denominator(Z, xi), np.abs(Z).max(axis=1)

    return sample


def null_sampler(design: StudyDesign) -> mc.Sampler:
    L = _null_factor(design)
    design.coefficients

    def sample(n: int, rng: np.random.Generator):
        z = rng.standard_normal((n, design.M))
        if L is not None:
            z = z @ L.T
        Z = all_subset_statistics(z, design)
        return np.zeros(n), np.abs(Z).max(axis=1)

    return sample


def _is(design, b, K, seed, threads, xi):
    b = _check_b(b)
    xi = b if xi is None else float(xi)
    return mc.simulate(normal_sampler(design, xi), [b], K, seed, threads=threads)[0]


def is_pvalue_independent(
    design: StudyDesign,
    b: float,
    K: int = DEFAULT_K,
    seed: int = 0,
    threads: Optional[int] = None,
    xi: Optional[float] = None,
) -> mc.Estimate:
    """IS estimate of ``P0(max_A |Z_A| > b)`` for independent normal studies."""
    if design.sigma is not None:
        raise ConfigurationError("design has a correlation matrix; use is_pvalue_overlapping")
    return _is(design, b, K, seed, threads, xi)


def is_pvalue_overlapping(
    design: StudyDesign,
    b: float,
    K: int = DEFAULT_K,
    seed: int = 0,
    threads: Optional[int] = None,
    xi: Optional[float] = None,
) -> mc.Estimate:
    """IS estimate for studies with correlated scores (shared subjects)."""
    if design.sigma is None:
        raise ConfigurationError("overlapping-study estimator needs design.sigma")
    return _is(design, b, K, seed, threads, xi)


def is_pvalue_normal(design: StudyDesign, b: float, K: int = DEFAULT_K, seed: int = 0,
                     threads: Optional[int] = None) -> mc.Estimate:
    return _is(design, b, K, seed, threads, None)


def plan_windows(grid: Sequence[float], half_width: float = 0.75) -> list[tuple[float, list[int]]]:
    """Group an ascending grid into windows sharing one tilt anchor.

    Each window spans at most ``2 * half_width``; its anchor is the midpoint
    of its first and last grid points, so a single point anchors at itself.
    """
    g = np.asarray(grid, dtype=float)
    if g.size == 0:
        raise ConfigurationError("threshold grid is empty")
    if np.any(np.diff(g) <= 0):
        raise ConfigurationError("threshold grid must be strictly ascending")
    if half_width < 0:
        raise ConfigurationError("half_width must be nonnegative")
    windows = []
    i = 0
    while i < g.size:
        j = i
        while j + 1 < g.size and g[j + 1] - g[i] <= 2 * half_width + 1e-12:
            j += 1
        windows.append((0.5 * (g[i] + g[j]), list(range(i, j + 1))))
        i = j + 1
    return windows


def is_pvalue_range(
    design: StudyDesign,
    b_grid: Sequence[float],
    K: int = DEFAULT_K,
    seed: int = 0,
    threads: Optional[int] = None,
    half_width: float = 0.75,
) -> list[mc.Estimate]:
    """Score a threshold grid from one tilted batch per window of the grid."""
    for b in b_grid:
        _check_b(b)
    out: list = [None] * len(b_grid)
    for w, (anchor, idx) in enumerate(plan_windows(b_grid, half_width)):
        ests = mc.simulate(normal_sampler(design, anchor), [b_grid[i] for i in idx], K, seed,
                           block=w, threads=threads)
        for i, e in zip(idx, ests):
            out[i] = e
    return out


def is_pvalue_process(
    sigma,
    b: float,
    K: int = DEFAULT_K,
    seed: int = 0,
    threads: Optional[int] = None,
    xi: Optional[float] = None,
) -> mc.Estimate:
    """One-sided ``P0(max_t z_t > b)`` for a discrete Gaussian process.

    ``sigma`` is the correlation matrix of the process; it may be singular
    but must be positive semidefinite.
    """
    b = _check_b(b)
    xi = b if xi is None else float(xi)
    S = np.array(sigma, dtype=float, ndmin=2)
    T = S.shape[0]
    if S.shape != (T, T) or not np.allclose(S, S.T, atol=1e-12):
        raise ConfigurationError("process correlation must be a symmetric square matrix")
    if not np.allclose(np.diag(S), 1.0, atol=1e-12):
        raise ConfigurationError("process correlation must have unit diagonal")
    lam, V = np.linalg.eigh(S)
    if lam[0] < -1e-10 * max(1.0, lam[-1]):
        raise ConfigurationError(f"process correlation is not positive semidefinite (eigenvalue {lam[0]:.3e})")
    root = V * np.sqrt(np.clip(lam, 0, None))
    shifts = xi * S
    log_T = np.log(T)

    def sample(n, rng):
        tau = rng.integers(0, T, size=n)
        z = rng.standard_normal((n, T)) @ root.T + shifts[tau]
        a = xi * z
        m = a.max(axis=1)
        lse = np.log(np.exp(a - m[:, None]).sum(axis=1)) + m - 0.5 * xi * xi
        return log_T - lse, z.max(axis=1)

    return mc.simulate(sample, [b], K, seed, threads=threads)[0]


def mc_pvalue_normal(
    design: StudyDesign,
    b: float,
    K: int,
    seed: int = 0,
    threads: Optional[int] = None,
) -> mc.Estimate:
    """Naive Monte Carlo under the null with binomial standard error."""
    b = float(b)
    if b < 0:
        raise ConfigurationError(f"threshold b must be nonnegative, got {b!r}")
    return mc.simulate(null_sampler(design), [b], K, seed, threads=threads, method="MC", ddof=0)[0]
