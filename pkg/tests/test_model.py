import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assetis.errors import ConfigurationError, DataError, PreconditionError, SingularSubmatrixError
from assetis.model import (
    ExpressionMatrix,
    GenotypeModel,
    StudyDesign,
    all_subset_statistics,
    all_subset_statistics_independent,
    conditional_weight_matrix,
    conditional_weights,
    enumerate_subsets,
    mask_members,
    standardize,
    subset_correlation,
    subset_statistic_independent,
    subset_statistic_overlapping,
)

from conftest import orthonormal_expression


@pytest.mark.parametrize("M,count", [(1, 1), (3, 7), (7, 127)])
def test_enumerate_subsets_counts(M, count):
    masks = enumerate_subsets(M)
    assert len(masks) == count
    assert list(masks) == sorted(set(masks))
    assert masks[0] == 1 and masks[-1] == 2**M - 1


@pytest.mark.parametrize("M", [0, 26, -1])
def test_enumerate_subsets_cap(M):
    with pytest.raises(ConfigurationError, match="25"):
        enumerate_subsets(M)


def test_mask_members():
    assert list(mask_members(0b101, 3)) == [0, 2]


def test_independent_statistic_examples():
    d = StudyDesign([100, 100])
    assert subset_statistic_independent([2, 0], d, 0b11) == pytest.approx(2 / np.sqrt(2), abs=1e-12)
    d1 = StudyDesign([50])
    assert subset_statistic_independent([1.7], d1, 1) == pytest.approx(1.7, abs=1e-15)
    d3 = StudyDesign([1, 1, 2])
    expected = np.sqrt(1 / 3) + np.sqrt(2 / 3)
    assert subset_statistic_independent([1, 1, 1], d3, 0b101) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(1.39385, abs=1e-5)


def test_case_control_uses_effective_n():
    d = StudyDesign([100, 400], case_fraction=[0.5, 0.1])
    neff = np.array([25.0, 36.0])
    z = np.array([1.0, -0.5])
    expected = np.sqrt(neff / neff.sum()) @ z
    assert subset_statistic_independent(z, d, 0b11) == pytest.approx(expected, abs=1e-14)


def test_overlapping_two_study_example():
    d = StudyDesign([1, 1], sigma=[[1, 0.5], [0.5, 1]])
    Z = subset_statistic_overlapping([1, 1], d, 0b11)
    # N' S^-1 z = N' S^-1 N = 4/3
    assert Z == pytest.approx((4 / 3) / np.sqrt(4 / 3), abs=1e-12)
    assert Z == pytest.approx(1.1547, abs=1e-4)


def test_overlapping_singleton_ignores_sigma():
    d = StudyDesign([10, 20, 30], sigma=[[1, 0.4, 0.2], [0.4, 1, 0.1], [0.2, 0.1, 1]])
    z = np.array([0.3, -1.2, 2.0])
    for j in range(3):
        assert subset_statistic_overlapping(z, d, 1 << j) == pytest.approx(z[j], abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(M=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_overlapping_identity_matches_independent(M, seed):
    rng = np.random.default_rng(seed)
    n = rng.uniform(10, 1000, M)
    z = rng.standard_normal((5, M))
    a = all_subset_statistics(z, StudyDesign(n))
    b = all_subset_statistics(z, StudyDesign(n, sigma=np.eye(M)))
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(M=st.integers(1, 7), seed=st.integers(0, 2**32 - 1))
def test_incremental_matches_naive(M, seed):
    rng = np.random.default_rng(seed)
    d = StudyDesign(rng.uniform(1, 500, M))
    z = rng.standard_normal(M)
    fast = all_subset_statistics_independent(z, d)
    slow = [subset_statistic_independent(z, d, A) for A in enumerate_subsets(M)]
    np.testing.assert_allclose(fast, slow, atol=1e-12, rtol=0)


def test_independent_null_variance_is_one():
    rng = np.random.default_rng(3)
    d = StudyDesign(rng.uniform(100, 2000, 5))
    Z = all_subset_statistics(rng.standard_normal((100_000, 5)), d)
    var = Z.var(axis=0)
    assert np.all(np.abs(var - 1) < 0.02)


def test_overlapping_null_variance_is_one():
    rng = np.random.default_rng(4)
    S = np.array([[1, 0.3, 0.1], [0.3, 1, 0.5], [0.1, 0.5, 1]])
    d = StudyDesign([100, 300, 500], sigma=S)
    z = rng.standard_normal((100_000, 3)) @ np.linalg.cholesky(S).T
    var = all_subset_statistics(z, d).var(axis=0)
    assert np.all(np.abs(var - 1) < 0.02)


def test_design_validation():
    with pytest.raises(ConfigurationError):
        StudyDesign([10, -1])
    with pytest.raises(ConfigurationError):
        StudyDesign([10, 10], case_fraction=[0.5, 1.0])
    with pytest.raises(ConfigurationError):
        StudyDesign([10, 10], sigma=[[1, 0.2], [0.3, 1]])
    with pytest.raises(ConfigurationError):
        StudyDesign([10, 10], sigma=[[2, 0.2], [0.2, 1]])
    with pytest.raises(SingularSubmatrixError):
        StudyDesign([10, 10], sigma=[[1, 1], [1, 1]])


def test_near_singular_block_names_mask():
    S = np.eye(3)
    S[0, 1] = S[1, 0] = 1 - 1e-9
    d = StudyDesign([1, 1, 1], sigma=S)
    with pytest.raises(SingularSubmatrixError, match="0b11"):
        d.coefficients


def test_genotype_model():
    g = GenotypeModel(0.2)
    assert g.probs.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(g.probs, [0.64, 0.32, 0.04])
    assert g.sigma_g == pytest.approx(np.sqrt(0.32))
    with pytest.warns(UserWarning, match="folded"):
        g2 = GenotypeModel(0.7)
    assert g2.maf == pytest.approx(0.3)
    for bad in (0.0, 1.0, -0.1, float("nan")):
        with pytest.raises(ConfigurationError):
            GenotypeModel(bad)


def test_standardize_uses_one_over_n():
    rng = np.random.default_rng(0)
    Y = ExpressionMatrix.from_raw(rng.gamma(2.0, size=(37, 4)) * 10 + 3)
    assert np.abs(Y.values.mean(axis=0)).max() < 1e-10
    assert np.abs((Y.values**2).mean(axis=0) - 1).max() < 1e-8
    Y.check_standardized()
    with pytest.raises(DataError):
        standardize(np.ones((5, 2)))
    with pytest.raises(DataError):
        ExpressionMatrix.from_raw([[1.0, np.nan], [2.0, 3.0], [0.0, 1.0]])


def test_unstandardized_expression_rejected():
    Y = ExpressionMatrix(np.random.default_rng(0).standard_normal((10, 2)))
    with pytest.raises(PreconditionError):
        conditional_weights(Y, GenotypeModel(0.3), 0b11)


def test_conditional_weights_single_cell():
    rng = np.random.default_rng(1)
    Y = ExpressionMatrix.from_raw(rng.standard_normal((20, 1)))
    g = GenotypeModel(0.3)
    st_ = conditional_weights(Y, g, 1, correlated=True)
    np.testing.assert_allclose(st_.omega, Y.values[:, 0] / (np.sqrt(20) * g.sigma_g), atol=1e-14)


def test_correlated_weights_reduce_to_independent_under_identity():
    Y = orthonormal_expression(50, 3, seed=2)
    g = GenotypeModel(0.15)
    np.testing.assert_allclose(
        conditional_weight_matrix(Y, g, correlated=True),
        conditional_weight_matrix(Y, g, correlated=False),
        atol=1e-12,
    )


def test_conditional_weights_exhaustive_variance():
    # N=3, two orthonormal standardized columns, f=0.5: enumerate all 27 genotype vectors
    Y = orthonormal_expression(3, 2, seed=5)
    g = GenotypeModel(0.5)
    om = conditional_weights(Y, g, 0b11).omega
    G = np.array(list(itertools.product(range(3), repeat=3)), dtype=float)
    p = np.prod(g.probs[G.astype(int)], axis=1)
    Z = (G - 1.0) @ om
    assert p @ Z == pytest.approx(0.0, abs=1e-14)
    assert p @ Z**2 == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(N=st.integers(8, 60), C=st.integers(1, 4), f=st.floats(0.01, 0.5), seed=st.integers(0, 10**6))
def test_conditional_linear_identity(N, C, f, seed):
    rng = np.random.default_rng(seed)
    Y = ExpressionMatrix.from_raw(rng.standard_normal((N, C)) + rng.standard_normal((N, 1)))
    geno = GenotypeModel(f)
    W = conditional_weight_matrix(Y, geno, correlated=True)
    g = rng.integers(0, 3, size=N).astype(float)
    z = (g - 2 * f) @ Y.values / (np.sqrt(N) * geno.sigma_g)
    S = Y.correlation
    for row, mask in enumerate(enumerate_subsets(C)):
        idx = mask_members(mask, C)
        one = np.ones(idx.size)
        w = np.linalg.solve(S[np.ix_(idx, idx)], one)
        gls = z[idx] @ w / np.sqrt(one @ w)
        assert W[row] @ (g - 2 * f) == pytest.approx(gls, abs=1e-10)
        assert np.sum(W[row] ** 2) * 2 * f * (1 - f) == pytest.approx(1.0, abs=1e-8)


def test_subset_correlation_examples():
    d = StudyDesign([1, 1])
    assert subset_correlation(d, 0b11, 0b11) == pytest.approx(1.0, abs=1e-12)
    assert subset_correlation(d, 0b01, 0b10) == pytest.approx(0.0, abs=1e-15)
    r = subset_correlation(d, 0b01, 0b11)
    assert r == pytest.approx(np.sqrt(0.5), abs=1e-12)
    z = np.random.default_rng(8).standard_normal((1_000_000, 2))
    Z = all_subset_statistics(z, d)
    assert np.corrcoef(Z[:, 0], Z[:, 2])[0, 1] == pytest.approx(r, abs=3e-3)


def test_subset_correlation_symmetric_general():
    S = np.array([[1, 0.3, 0.1], [0.3, 1, 0.5], [0.1, 0.5, 1]])
    d = StudyDesign([100, 300, 500], sigma=S)
    for a, b in itertools.combinations(range(1, 8), 2):
        assert subset_correlation(d, a, b) == pytest.approx(subset_correlation(d, b, a), abs=1e-14)
    Y = ExpressionMatrix.from_raw(np.random.default_rng(1).standard_normal((40, 3)))
    assert subset_correlation(Y, 0b101, 0b101) == 1.0
    assert -1 <= subset_correlation(Y, 0b001, 0b110) <= 1


def test_types_are_immutable():
    d = StudyDesign([1, 2])
    with pytest.raises(ValueError):
        d.n[0] = 5
    with pytest.raises(Exception):
        d.n = np.array([1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert d.coefficients.flags.writeable is False
