import numpy as np
import pytest
from scipy import special

from assetis.dlm import dlm_pvalue, dlm_pvalue_conditional, neighbor_system
from assetis.errors import ConfigurationError, DegenerateNeighborError
from assetis.model import StudyDesign

from conftest import orthonormal_expression

B_GRID = [3.63, 4.48, 5.33, 6.18, 7.03, 7.88, 8.73, 9.58]
# two significant figures, as published for the equal-n benchmark
BENCH_M7 = [1.3e-02, 4.6e-04, 7.7e-06, 5.9e-08, 2.1e-10, 3.7e-13, 3.0e-16, 1.2e-19]
BENCH_M10 = [4.1e-02, 1.8e-03, 3.5e-05, 3.1e-07, 1.2e-09, 2.3e-12, 2.0e-15, 8.4e-19]


@pytest.mark.parametrize("M,expected", [(7, BENCH_M7), (10, BENCH_M10)])
def test_benchmark_column(M, expected):
    d = StudyDesign([1000] * M)
    for b, p in zip(B_GRID, expected):
        assert dlm_pvalue(d, b) == pytest.approx(p, rel=0.05)


@pytest.mark.parametrize("b", [0.5, 1.959964, 3.0, 5.0, 9.0])
def test_single_study_is_exact(b):
    assert dlm_pvalue(StudyDesign([12]), b) == pytest.approx(2 * special.ndtr(-b), rel=0, abs=1e-10)
    assert dlm_pvalue(StudyDesign([12]), b) == pytest.approx(2 * special.ndtr(-b), rel=1e-8)


def test_monotone_and_below_bonferroni():
    d = StudyDesign([100, 250, 400, 800, 50])
    grid = np.linspace(2.0, 9.0, 15)
    p = np.array([dlm_pvalue(d, b) for b in grid])
    assert np.all(np.diff(p) <= 0)
    assert np.all(p <= 31 * 2 * special.ndtr(-grid))


@pytest.mark.parametrize("b", [3.0, 5.0, 7.5, 10.0])
def test_refinement_stable(b):
    d = StudyDesign([1] * 6)
    coarse = dlm_pvalue(d, b, rtol=1e-6)
    fine = dlm_pvalue(d, b, rtol=5e-7)
    assert abs(fine - coarse) <= 1e-3 * fine


def test_error_bound_reported():
    p, err = dlm_pvalue(StudyDesign([1, 1, 1]), 4.0, return_error=True)
    assert 0 < err < 1e-6 * p


def test_identity_expression_matches_equal_n_design():
    Y = orthonormal_expression(200, 7, seed=3)
    d = StudyDesign([1] * 7)
    for b in (3.0, 5.25):
        assert dlm_pvalue_conditional(Y, b) == pytest.approx(dlm_pvalue(d, b), rel=0, abs=1e-6)
        assert dlm_pvalue_conditional(Y, b) == pytest.approx(dlm_pvalue(d, b), rel=1e-8)


def test_single_cell_expression():
    Y = orthonormal_expression(30, 1)
    assert dlm_pvalue_conditional(Y, 3.3) == pytest.approx(2 * special.ndtr(-3.3), rel=1e-9)


def test_neighbor_system_shapes():
    s = neighbor_system(StudyDesign([1, 1, 1]))
    assert s.neighbors.shape == (7, 3)
    # singleton {0}: removing study 0 empties it
    assert s.neighbors[0, 0] == 0 and s.correlations(0).size == 2
    np.testing.assert_allclose(s.correlations(0), np.sqrt(0.5))
    assert s.correlations(6).size == 3


def test_degenerate_neighbor():
    # a negligible study makes Z_{0} and Z_{0,1} indistinguishable
    with pytest.raises(DegenerateNeighborError, match="0b1"):
        dlm_pvalue(StudyDesign([1.0, 1e-13]), 3.0)


def test_rejects_bad_threshold():
    with pytest.raises(ConfigurationError):
        dlm_pvalue(StudyDesign([1]), 0.0)
