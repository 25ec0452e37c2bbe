"""Domain types and subset-level statistics for the ASSET maximum.

Subsets are plain integer bitmasks: bit ``j`` set means study (or cell type)
``j`` belongs to the subset. Masks are always enumerated in ascending order,
so the statistic for mask ``A`` lives at column ``A - 1`` of any all-subset
array produced here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .errors import (
    ConfigurationError,
    DataError,
    PreconditionError,
    SingularSubmatrixError,
)

MAX_STUDIES = 25
# smallest admissible eigenvalue of a subset correlation block
MIN_SUBSET_EIGENVALUE = 1e-8
MAX_SUBSET_CONDITION = 1e12
MIN_DESIGN_EIGENVALUE = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def enumerate_subsets(M: int) -> np.ndarray:
    """All nonempty subset masks of ``M`` studies in ascending order."""
    if not isinstance(M, (int, np.integer)) or not 1 <= M <= MAX_STUDIES:
        raise ConfigurationError(
            f"number of studies must be an integer in [1, {MAX_STUDIES}], got {M!r}"
        )
    return np.arange(1, 2 ** int(M), dtype=np.int64)


def mask_members(mask: int, M: int) -> np.ndarray:
    """Indices of the studies contained in ``mask``."""
    mask = int(mask)
    if mask < 1 or mask >= 2**M:
        raise ConfigurationError(f"subset mask {mask} out of range for M={M}")
    return np.array([j for j in range(M) if mask >> j & 1], dtype=np.intp)


def membership_matrix(M: int) -> np.ndarray:
    """Boolean (2^M - 1, M) matrix; row ``A - 1`` flags the members of ``A``."""
    masks = enumerate_subsets(M)
    return (masks[:, None] >> np.arange(M)) & 1 == 1


def subset_sums(x: np.ndarray) -> np.ndarray:
    """Sums of ``x`` over every subset of its last axis, empty set included.

    Built by doubling: the block of masks with top bit ``j`` is the block
    below it plus ``x[..., j]``. Output has ``2^M`` entries on the last axis,
    entry ``A`` holding the sum over the members of ``A``.
    """
    x = np.asarray(x, dtype=float)
    M = x.shape[-1]
    out = np.zeros(x.shape[:-1] + (2**M,))
    for j in range(M):
        lo = 1 << j
        np.add(out[..., :lo], x[..., j : j + 1], out=out[..., lo : 2 * lo])
    return out


def _check_block(block: np.ndarray, mask: int) -> None:
    eig = np.linalg.eigvalsh(block)
    if eig[0] < MIN_SUBSET_EIGENVALUE:
        raise SingularSubmatrixError(mask, f"smallest eigenvalue {eig[0]:.3e}")
    if eig[-1] / eig[0] > MAX_SUBSET_CONDITION:
        raise SingularSubmatrixError(mask, f"condition number {eig[-1] / eig[0]:.3e}")


def gls_coefficients(
    sigma: np.ndarray, loading: np.ndarray, mask: int, ridge: float = 0.0
) -> tuple[np.ndarray, float]:
    """Unit-variance GLS combination of the scores in ``mask``.

    Returns the coefficient vector ``c`` over the members of ``mask`` such
    that ``Z_A = c @ z_A`` with ``c = S^-1 L / sqrt(L' S^-1 L)``, together
    with the noncentrality scale ``sqrt(L' S^-1 L)``.
    """
    M = sigma.shape[0]
    idx = mask_members(mask, M)
    block = sigma[np.ix_(idx, idx)]
    if ridge:
        block = block + ridge * np.eye(len(idx))
    _check_block(block, mask)
    load = np.asarray(loading, dtype=float)[idx]
    solved = linalg.cho_solve(linalg.cho_factor(block, lower=True), load)
    scale = float(np.sqrt(load @ solved))
    return solved / scale, scale


@dataclass(frozen=True)
class StudyDesign:
    """Null law of the per-study scores ``(z_1, ..., z_M)``.

    ``case_fraction`` switches to case-control effective sample sizes
    ``n * phi * (1 - phi)``; ``sigma`` is the score correlation matrix of
    overlapping studies (identity when absent).
    """

    n: np.ndarray
    case_fraction: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        n = _frozen(self.n)
        if n.ndim != 1 or n.size < 1:
            raise ConfigurationError("n must be a nonempty vector of sample sizes")
        if n.size > MAX_STUDIES:
            raise ConfigurationError(
                f"number of studies must be an integer in [1, {MAX_STUDIES}], got {n.size}"
            )
        if not np.all(np.isfinite(n)) or np.any(n <= 0):
            raise ConfigurationError("all sample sizes n must be positive")
        object.__setattr__(self, "n", n)
        M = n.size
        if self.case_fraction is not None:
            cf = _frozen(self.case_fraction)
            if cf.shape != (M,):
                raise ConfigurationError(f"case_fraction must have length {M}")
            if np.any(cf <= 0) or np.any(cf >= 1):
                raise ConfigurationError("case_fraction entries must lie in (0, 1)")
            object.__setattr__(self, "case_fraction", cf)
        if self.sigma is not None:
            s = _frozen(self.sigma)
            if s.shape != (M, M):
                raise ConfigurationError(f"sigma must be {M}x{M}, got {s.shape}")
            if not np.allclose(s, s.T, atol=1e-12, rtol=0):
                raise ConfigurationError("sigma must be symmetric")
            if not np.allclose(np.diag(s), 1.0, atol=1e-12, rtol=0):
                raise ConfigurationError("sigma must have unit diagonal")
            lam = np.linalg.eigvalsh(s)[0]
            if lam <= MIN_DESIGN_EIGENVALUE:
                raise SingularSubmatrixError(
                    2**M - 1, f"sigma smallest eigenvalue {lam:.3e}"
                )
            object.__setattr__(self, "sigma", s)

    @property
    def M(self) -> int:
        return self.n.size

    @property
    def overlapping(self) -> bool:
        return self.sigma is not None

    @cached_property
    def effective_n(self) -> np.ndarray:
        if self.case_fraction is None:
            return self.n
        return _frozen(self.n * self.case_fraction * (1 - self.case_fraction))

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma if self.sigma is not None else np.eye(self.M)

    @cached_property
    def coefficients(self) -> np.ndarray:
        """(2^M - 1, M) matrix ``C`` with ``Z = C @ z`` for every subset."""
        M = self.M
        masks = enumerate_subsets(M)
        C = np.zeros((masks.size, M))
        if self.sigma is None:
            member = membership_matrix(M)
            sqn = np.sqrt(self.effective_n)
            C[member] = np.broadcast_to(sqn, member.shape)[member]
            C /= np.sqrt(subset_sums(self.effective_n)[1:])[:, None]
        else:
            load = np.sqrt(self.effective_n)
            for row, mask in enumerate(masks):
                c, _ = gls_coefficients(self.sigma, load, int(mask))
                C[row, mask_members(mask, M)] = c
        C.setflags(write=False)
        return C

    @cached_property
    def noncentral_scales(self) -> np.ndarray:
        """``sqrt(N_A' Sigma_A^-1 N_A)`` per subset (``sqrt(sum n)`` if independent)."""
        if self.sigma is None:
            return _frozen(np.sqrt(subset_sums(self.effective_n)[1:]))
        # C @ N = N' S^-1 N / sqrt(N' S^-1 N)
        return _frozen(self.coefficients @ np.sqrt(self.effective_n))

    def tilt_shifts(self) -> np.ndarray:
        """(2^M - 1, M) score means under a unit tilt on each subset.

        Row ``A - 1`` is ``Cov(z, Z_A)``; scaling it by ``b`` gives the
        exponentially tilted law under which ``E(Z_A) = b``.
        """
        return self.coefficients @ self.covariance


@dataclass(frozen=True)
class GenotypeModel:
    """Hardy-Weinberg genotype law at minor allele frequency ``maf``."""

    maf: float

    def __post_init__(self):
        f = float(self.maf)
        if not np.isfinite(f) or f <= 0 or f >= 1:
            raise ConfigurationError(f"maf must lie in (0, 1), got {self.maf!r}")
        if f > 0.5:
            warnings.warn(
                f"maf {f} > 0.5 folded to {1 - f} (statistic is symmetric "
                "under allele relabelling)",
                stacklevel=3,
            )
            f = 1.0 - f
        object.__setattr__(self, "maf", f)

    @property
    def probs(self) -> np.ndarray:
        f = self.maf
        return np.array([(1 - f) ** 2, 2 * f * (1 - f), f * f])

    @property
    def sigma_g(self) -> float:
        return float(np.sqrt(2 * self.maf * (1 - self.maf)))

    @property
    def centered_support(self) -> np.ndarray:
        return np.arange(3.0) - 2 * self.maf


def standardize(values) -> np.ndarray:
    """Center each column and scale it to unit mean square (1/N convention)."""
    y = np.array(values, dtype=float)
    if y.ndim != 2:
        raise DataError("expression values must form a 2-D matrix")
    if not np.all(np.isfinite(y)):
        raise DataError("expression matrix contains missing or non-finite values")
    y = y - y.mean(axis=0)
    sd = np.sqrt(np.mean(y * y, axis=0))
    if np.any(sd <= 1e-12 * (1 + np.abs(values).max(axis=0))):
        bad = int(np.argmin(sd))
        raise DataError(f"expression column {bad} is constant")
    return y / sd


@dataclass(frozen=True)
class ExpressionMatrix:
    values: np.ndarray
    cell_labels: tuple = ()
    standardized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 1:
            raise DataError(f"expression matrix must be N x C with N >= 2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("expression matrix contains missing or non-finite values")
        labels = tuple(self.cell_labels) or tuple(f"c{j + 1}" for j in range(v.shape[1]))
        if len(labels) != v.shape[1]:
            raise DataError(f"{len(labels)} labels for {v.shape[1]} columns")
        if v.shape[1] > MAX_STUDIES:
            raise ConfigurationError(f"at most {MAX_STUDIES} cell types supported")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "cell_labels", labels)

    @classmethod
    def from_raw(cls, values, cell_labels: Sequence[str] = ()) -> "ExpressionMatrix":
        return cls(standardize(values), tuple(cell_labels), standardized=True)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def C(self) -> int:
        return self.values.shape[1]

    def check_standardized(self) -> None:
        y = self.values
        if not self.standardized:
            raise PreconditionError("expression matrix has not been standardized")
        if np.abs(y.mean(axis=0)).max() >= 1e-10 or np.abs((y * y).mean(axis=0) - 1).max() >= 1e-8:
            raise PreconditionError("expression columns are not mean 0 / mean square 1")

    @cached_property
    def correlation(self) -> np.ndarray:
        """Sample correlation ``(1/N) Y'Y`` of the standardized columns."""
        y = self.values
        return _frozen(y.T @ y / y.shape[0])


@dataclass(frozen=True)
class SubsetStatistics:
    mask: int
    meta_weights: np.ndarray
    noncentral_scale: float
    omega: Optional[np.ndarray] = field(default=None, repr=False)


def subset_statistic_independent(z, design: StudyDesign, mask: int) -> float:
    """Fixed-effect meta statistic of ``mask`` with weights ``n_m / sum n``."""
    z = np.asarray(z, dtype=float)
    idx = mask_members(mask, design.M)
    n = design.effective_n[idx]
    return float(np.sqrt(n / n.sum()) @ z[idx])


def all_subset_statistics_independent(z, design: StudyDesign) -> np.ndarray:
    """``Z_A`` for every mask at once via incremental subset sums.

    ``z`` may carry leading batch axes; the result replaces the last axis
    with one column per mask.
    """
    n = design.effective_n
    num = subset_sums(np.asarray(z, dtype=float) * np.sqrt(n))[..., 1:]
    return num / np.sqrt(subset_sums(n)[1:])


def subset_statistic_overlapping(z, design: StudyDesign, mask: int) -> float:
    """GLS statistic ``N_A' S_A^-1 z_A / sqrt(N_A' S_A^-1 N_A)``."""
    z = np.asarray(z, dtype=float)
    c = design.coefficients[int(mask) - 1]
    return float(c @ z)


def all_subset_statistics(z, design: StudyDesign) -> np.ndarray:
    if design.sigma is None:
        return all_subset_statistics_independent(z, design)
    return np.asarray(z, dtype=float) @ design.coefficients.T


def _expression_coefficients(
    Y: ExpressionMatrix, mask: int, correlated: bool, ridge: float
) -> tuple[np.ndarray, float]:
    idx = mask_members(mask, Y.C)
    if correlated:
        return gls_coefficients(Y.correlation, np.ones(Y.C), mask, ridge)
    k = idx.size
    return np.full(k, 1 / np.sqrt(k)), float(np.sqrt(k))


def conditional_weights(
    Y: ExpressionMatrix,
    geno: GenotypeModel,
    mask: int,
    correlated: bool = True,
    ridge: float = 0.0,
) -> SubsetStatistics:
    """Per-subject genotype weights ``omega`` with ``Z_A = sum omega_i (g_i - 2f)``."""
    Y.check_standardized()
    c, scale = _expression_coefficients(Y, mask, correlated, ridge)
    idx = mask_members(mask, Y.C)
    omega = Y.values[:, idx] @ c / (np.sqrt(Y.N) * geno.sigma_g)
    omega.setflags(write=False)
    return SubsetStatistics(int(mask), _frozen(c), scale, omega)


def conditional_weight_matrix(
    Y: ExpressionMatrix,
    geno: GenotypeModel,
    correlated: bool = True,
    ridge: float = 0.0,
) -> np.ndarray:
    """(2^C - 1, N) matrix of ``omega`` for every subset."""
    Y.check_standardized()
    C = Y.C
    coef = np.zeros((2**C - 1, C))
    for row, mask in enumerate(enumerate_subsets(C)):
        c, _ = _expression_coefficients(Y, int(mask), correlated, ridge)
        coef[row, mask_members(mask, C)] = c
    W = coef @ Y.values.T / (np.sqrt(Y.N) * geno.sigma_g)
    W.setflags(write=False)
    return W


def subset_coefficients(
    source: Union[StudyDesign, ExpressionMatrix], ridge: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Padded coefficient matrix over masks and the score covariance it acts on.

    For an expression matrix this is the GLS composition of per-cell scores
    under the sample correlation of ``Y``.
    """
    if isinstance(source, StudyDesign):
        return source.coefficients, source.covariance
    C = source.C
    coef = np.zeros((2**C - 1, C))
    for row, mask in enumerate(enumerate_subsets(C)):
        c, _ = gls_coefficients(source.correlation, np.ones(C), int(mask), ridge)
        coef[row, mask_members(mask, C)] = c
    return coef, source.correlation


def subset_correlation(
    source: Union[StudyDesign, ExpressionMatrix], mask1: int, mask2: int, ridge: float = 0.0
) -> float:
    """Null correlation between the statistics of two subsets."""
    if isinstance(source, StudyDesign):
        M = source.M
        cov = source.covariance
        if source.sigma is None:
            c1 = np.zeros(M)
            c2 = np.zeros(M)
            for c, mask in ((c1, mask1), (c2, mask2)):
                idx = mask_members(mask, M)
                n = source.effective_n[idx]
                c[idx] = np.sqrt(n / n.sum())
        else:
            c1 = source.coefficients[int(mask1) - 1]
            c2 = source.coefficients[int(mask2) - 1]
    else:
        M = source.C
        cov = source.correlation
        c1 = np.zeros(M)
        c2 = np.zeros(M)
        for c, mask in ((c1, mask1), (c2, mask2)):
            c[mask_members(mask, M)] = gls_coefficients(cov, np.ones(M), int(mask), ridge)[0]
    if int(mask1) == int(mask2):
        return 1.0
    r = (c1 @ cov @ c2) / np.sqrt((c1 @ cov @ c1) * (c2 @ cov @ c2))
    return float(np.clip(r, -1.0, 1.0))
