import itertools

import numpy as np
import pytest
from scipy import special

from assetis.model import ExpressionMatrix, GenotypeModel


def exact_conditional_pvalue(Y: ExpressionMatrix, geno: GenotypeModel, b: float, correlated=True):
    """P0(max_A |Z_A| > b | Y) by summing HWE probabilities over all 3^N genotype vectors.

    Subset statistics are rebuilt from per-cell scores, not from the
    package's genotype weights.
    """
    N, C = Y.values.shape
    G = np.array(list(itertools.product(range(3), repeat=N)), dtype=float)
    prob = np.prod(geno.probs[G.astype(int)], axis=1)
    z = (G - 2 * geno.maf) @ Y.values / (np.sqrt(N) * geno.sigma_g)
    S = Y.values.T @ Y.values / N
    zmax = np.zeros(len(G))
    for mask in range(1, 2**C):
        idx = [j for j in range(C) if mask >> j & 1]
        one = np.ones(len(idx))
        if correlated:
            w = np.linalg.solve(S[np.ix_(idx, idx)], one)
            Z = z[:, idx] @ w / np.sqrt(one @ w)
        else:
            Z = z[:, idx].sum(axis=1) / np.sqrt(len(idx))
        zmax = np.maximum(zmax, np.abs(Z))
    return float(prob[zmax > b].sum()), zmax, prob


def two_study_tail(b: float, n_points: int = 400) -> float:
    """P(max(|z1|, |z2|, |z1+z2|/sqrt2) > b) for iid standard normals.

    Inner integral over z2 in closed form, outer over z1 by Gauss-Legendre
    on pieces split at the kinks of the integration limits.
    """
    x, w = np.polynomial.legendre.leggauss(n_points)
    s = b * np.sqrt(2)
    knots = sorted({-b, b - s, s - b, b})
    inside = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        z1 = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        top = np.minimum(b, s - z1)
        bot = np.maximum(-b, -s - z1)
        inner = np.clip(special.ndtr(top) - special.ndtr(bot), 0, None)
        dens = np.exp(-0.5 * z1 * z1) / np.sqrt(2 * np.pi)
        inside += 0.5 * (hi - lo) * np.sum(w * dens * inner)
    return 1.0 - inside


def orthonormal_expression(N: int, C: int, seed: int = 0) -> ExpressionMatrix:
    """Columns with mean 0, mean square 1 and exactly zero sample correlation."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((N, C))
    A -= A.mean(axis=0)
    Q, _ = np.linalg.qr(A)
    return ExpressionMatrix(Q * np.sqrt(N), standardized=True)


@pytest.fixture
def small_expression():
    rng = np.random.default_rng(11)
    return ExpressionMatrix.from_raw(rng.standard_normal((6, 2)))


def oracle_threshold(zmax, prob, lo=1e-4, hi=1e-2, aim=1e-3):
    """Midpoint between adjacent attainable maxima whose exact tail mass is nearest ``aim``."""
    v = np.unique(np.round(zmax, 12))[::-1]
    best = None
    for upper, lower in zip(v[:-1], v[1:]):
        b = 0.5 * (upper + lower)
        p = float(prob[zmax > b].sum())
        if lo <= p <= hi and (best is None or abs(np.log(p / aim)) < abs(np.log(best[1] / aim))):
            best = (b, p)
    return best
