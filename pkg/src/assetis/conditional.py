"""Tail probabilities of max |Z_A| conditional on an expression matrix.

Given standardized expression ``Y`` every subset statistic is linear in the
centred genotypes, ``Z_A = sum_i omega_iA (g_i - 2f)``, so its null law is a
sum of independent three-point variables. The importance sampler tilts the
genotype law of one subset and side at a time through the exact cumulant
generating function of that sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import mc
from .errors import (
    ConfigurationError,
    DegenerateSubsetError,
    PreconditionError,
    UnattainableThresholdError,
)
from .gaussian import DEFAULT_K, plan_windows
from .model import ExpressionMatrix, GenotypeModel, conditional_weight_matrix, enumerate_subsets

MAX_NEWTON_ITER = 200


def _log_terms(omega: np.ndarray, geno: GenotypeModel, xi: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject log tilted masses (unnormalized) and centred values, shape (N, 3)."""
    x = omega[:, None] * geno.centered_support
    return xi * x + np.log(geno.probs), x


def cgf(omega, geno: GenotypeModel, xi: float) -> tuple[float, float, float]:
    """CGF of ``sum_i omega_i (g_i - 2f)`` under HWE and its first two derivatives."""
    omega = np.asarray(omega, dtype=float)
    if np.any(np.isnan(omega)):
        raise PreconditionError("genotype weights contain NaN")
    a, x = _log_terms(omega, geno, float(xi))
    m = a.max(axis=1, keepdims=True)
    e = np.exp(a - m)
    tot = e.sum(axis=1, keepdims=True)
    q = e / tot
    mean = (q * x).sum(axis=1)
    var = (q * (x - mean[:, None]) ** 2).sum(axis=1)
    phi = (np.log(tot[:, 0]) + m[:, 0]).sum()
    return float(phi), float(mean.sum()), float(var.sum())


def attainable_range(omega, geno: GenotypeModel) -> tuple[float, float]:
    """Infimum and supremum of the statistic over the genotype support."""
    x = np.asarray(omega, dtype=float)[:, None] * geno.centered_support
    return float(x.min(axis=1).sum()), float(x.max(axis=1).sum())


def _solve_positive(omega, geno, target, tol):
    def d(xi):
        _, d1, d2 = cgf(omega, geno, xi)
        return d1 - target, d2

    v0 = cgf(omega, geno, 0.0)[2]
    x = target / v0
    lo, hi = 0.0, max(x, 1e-8)
    g_hi, _ = d(hi)
    while g_hi < 0:
        lo, hi = hi, 2 * hi
        g_hi, _ = d(hi)
        if hi > 1e300:
            raise ArithmeticError("failed to bracket tilt")
    x = min(max(x, lo), hi)
    for _ in range(MAX_NEWTON_ITER):
        g, slope = d(x)
        if abs(g) <= tol:
            return x
        if g < 0:
            lo = x
        else:
            hi = x
        step = x - g / slope if slope > 0 else np.nan
        x = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(x)):
            return x
    return x


def solve_tilt(omega, geno: GenotypeModel, target: float, mask: Optional[int] = None) -> float:
    """Tilt ``xi`` with ``phi'(xi) = target`` by bracketed Newton iteration."""
    omega = np.asarray(omega, dtype=float)
    target = float(target)
    if not np.any(omega):
        raise DegenerateSubsetError(0 if mask is None else mask)
    lo, hi = attainable_range(omega, geno)
    margin = 1e-9 * abs(target)
    if target >= hi - margin:
        raise UnattainableThresholdError(mask, target, hi)
    if target <= lo + margin:
        raise UnattainableThresholdError(mask, target, lo)
    if target == 0:
        return 0.0
    tol = 1e-10 * max(1.0, abs(target))
    if target > 0:
        return _solve_positive(omega, geno, target, tol)
    return -_solve_positive(-omega, geno, -target, tol)


@dataclass(frozen=True)
class TiltSolution:
    """Tilts solving ``phi'(xi) = +b`` and ``-b`` for one subset.

    A side whose target lies outside the attainable range has ``None`` for
    its tilt and CGF value and is left out of the proposal mixture.
    """

    mask: int
    xi_plus: Optional[float]
    xi_minus: Optional[float]
    phi_plus: Optional[float]
    phi_minus: Optional[float]
    attainable_max: float
    attainable_min: float


def tilt_solution(omega, geno: GenotypeModel, b: float, mask: int) -> TiltSolution:
    lo, hi = attainable_range(omega, geno)
    sides = []
    for target in (b, -b):
        try:
            xi = solve_tilt(omega, geno, target, mask)
        except (UnattainableThresholdError, DegenerateSubsetError):
            sides.append((None, None))
        else:
            sides.append((xi, cgf(omega, geno, xi)[0]))
    (xp, pp), (xm, pm) = sides
    return TiltSolution(int(mask), xp, xm, pp, pm, hi, lo)


def sample_tilted_genotypes(omega, geno: GenotypeModel, xi: float, rng: np.random.Generator,
                            size: Optional[int] = None) -> np.ndarray:
    """Independent genotypes with ``P(g_i = k)`` proportional to ``exp(xi w_i (k - 2f)) P0(k)``."""
    c0, c1 = _tilted_cdf(np.asarray(omega, dtype=float), geno, float(xi))
    shape = c0.shape if size is None else (size,) + c0.shape
    u = rng.random(shape)
    return (u > c0).astype(np.int8) + (u > c1)


def _tilted_cdf(omega, geno, xi):
    a, _ = _log_terms(omega, geno, xi)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    cdf = np.cumsum(e, axis=1)
    cdf /= cdf[:, 2:3]
    return cdf[:, 0], cdf[:, 1]


class ConditionalProblem:
    """Genotype weights for every subset of ``Y`` plus a per-anchor tilt cache."""

    def __init__(self, Y: ExpressionMatrix, geno: GenotypeModel, correlated: bool = True,
                 ridge: float = 0.0):
        Y.check_standardized()
        self.Y = Y
        self.geno = geno
        self.correlated = bool(correlated)
        self.ridge = float(ridge)
        self.masks = enumerate_subsets(Y.C)
        self.weights = conditional_weight_matrix(Y, geno, self.correlated, self.ridge)
        self._tilts: dict = {}

    def statistics(self, g: np.ndarray) -> np.ndarray:
        """All subset statistics for genotype rows ``g`` (shape (..., N))."""
        return (np.asarray(g, dtype=float) - 2 * self.geno.maf) @ self.weights.T

    def global_max(self) -> float:
        return max(attainable_range(w, self.geno)[1] for w in self.weights)

    def tilts(self, b: float) -> list[TiltSolution]:
        key = float(b)
        if key not in self._tilts:
            self._tilts[key] = [
                tilt_solution(w, self.geno, key, int(m)) for w, m in zip(self.weights, self.masks)
            ]
        return self._tilts[key]

    def admissible_pairs(self, b: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rows, tilts and CGF values of every (subset, side) that can reach ``b``."""
        rows, xis, phis = [], [], []
        for row, t in enumerate(self.tilts(b)):
            for xi, phi in ((t.xi_plus, t.phi_plus), (t.xi_minus, t.phi_minus)):
                if xi is not None:
                    rows.append(row)
                    xis.append(xi)
                    phis.append(phi)
        if not rows:
            raise UnattainableThresholdError(None, float(b), self.global_max())
        return np.array(rows), np.array(xis), np.array(phis)

    def sampler(self, b: float) -> mc.Sampler:
        rows, xis, phis = self.admissible_pairs(b)
        D = rows.size
        log_D = np.log(D)
        cdfs = [_tilted_cdf(self.weights[r], self.geno, x) for r, x in zip(rows, xis)]
        c0 = np.stack([c[0] for c in cdfs])
        c1 = np.stack([c[1] for c in cdfs])
        N = self.Y.N

        def sample(n, rng):
            pick = rng.integers(0, D, size=n)
            u = rng.random((n, N))
            g = (u > c0[pick]).astype(float) + (u > c1[pick])
            Z = self.statistics(g)
            a = Z[:, rows] * xis - phis
            return log_D - mc.logsumexp_rows(a), np.abs(Z).max(axis=1)

        return sample

    def null_sampler(self, genotypes: Optional[np.ndarray] = None) -> mc.Sampler:
        cum = np.cumsum(self.geno.probs)
        N = self.Y.N
        obs = None if genotypes is None else np.asarray(genotypes, dtype=float)
        if obs is not None and obs.shape != (N,):
            raise ConfigurationError(f"genotype vector must have length {N}")

        def sample(n, rng):
            if obs is None:
                u = rng.random((n, N))
                g = (u > cum[0]).astype(float) + (u > cum[1])
            else:
                g = rng.permuted(np.broadcast_to(obs, (n, N)), axis=1)
            return np.zeros(n), np.abs(self.statistics(g)).max(axis=1)

        return sample


def _problem(Y, geno, correlated, ridge):
    if isinstance(Y, ConditionalProblem):
        return Y
    return ConditionalProblem(Y, geno, correlated, ridge)


def is_pvalue_conditional(
    Y,
    geno: Optional[GenotypeModel],
    b: float,
    K: int = DEFAULT_K,
    seed: int = 0,
    correlated: bool = True,
    threads: Optional[int] = None,
    ridge: float = 0.0,
) -> mc.Estimate:
    """IS estimate of ``P0(max_A |Z_A| > b | Y)`` with genotype randomness only.

    ``Y`` may also be a prepared :class:`ConditionalProblem` to reuse its
    weights and tilt cache.
    """
    prob = _problem(Y, geno, correlated, ridge)
    b = float(b)
    if b <= 0:
        raise ConfigurationError(f"threshold b must be positive, got {b!r}")
    return mc.simulate(prob.sampler(b), [b], K, seed, threads=threads)[0]


def range_pvalues_conditional(
    Y,
    geno: Optional[GenotypeModel],
    b_grid: Sequence[float],
    K: int = DEFAULT_K,
    seed: int = 0,
    correlated: bool = True,
    threads: Optional[int] = None,
    ridge: float = 0.0,
    half_width: float = 0.75,
) -> list[mc.Estimate]:
    """Estimates over a threshold grid, one tilted batch per grid window."""
    prob = _problem(Y, geno, correlated, ridge)
    if any(b <= 0 for b in b_grid):
        raise ConfigurationError("thresholds must be positive")
    out: list = [None] * len(b_grid)
    for w, (anchor, idx) in enumerate(plan_windows(b_grid, half_width)):
        ests = mc.simulate(prob.sampler(anchor), [b_grid[i] for i in idx], K, seed,
                           block=w, threads=threads)
        for i, e in zip(idx, ests):
            out[i] = e
    return out


def mc_pvalue_conditional(
    Y,
    geno: Optional[GenotypeModel],
    b: float,
    K: int,
    seed: int = 0,
    correlated: bool = True,
    threads: Optional[int] = None,
    ridge: float = 0.0,
    genotypes: Optional[np.ndarray] = None,
) -> mc.Estimate:
    """Naive conditional Monte Carlo.

    Genotypes are drawn from HWE; when an observed ``genotypes`` vector is
    given it is permuted across subjects instead.
    """
    prob = _problem(Y, geno, correlated, ridge)
    return mc.simulate(prob.null_sampler(genotypes), [float(b)], K, seed, threads=threads,
                       method="MC", ddof=0)[0]
