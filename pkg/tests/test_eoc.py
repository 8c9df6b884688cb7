import math

import pytest
from numpy.testing import assert_allclose

from backend.core.activations import make_activation
from backend.core.exceptions import DomainError
from backend.core.models import EocStatus, ReluLikeParams
from backend.services.eoc_service import eoc_solver

# (sigma_b, tabulated sigma_w, tabulated q)
SWISH_TABLE = [
    (0.1, 1.845, 0.14),
    (0.2, 1.718, 0.44),
    (0.3, 1.616, 0.61),
    (0.4, 1.537, 1.01),
    (0.5, 1.485, 2.13),
]
# q at the fold of the minimal branch on the same grid
SWISH_FOLD_Q = [0.1395, 0.3418, 0.6390, 1.0873, 1.8005]


def _verified(point, engine, phi):
    assert point.found
    if point.diagnostics['criterion'] == 'chi1':
        assert abs(point.chi1 - 1.0) < 1e-7
    else:
        assert abs(point.alpha - 1.0) < 1e-7
        assert point.chi1 < 1.0
    assert abs(engine.variance_map(point.q, point.params, phi) - point.q) <= 1e-9 * (1.0 + point.q)


class TestReluLike:
    def test_relu_is_exact(self, relu):
        point = eoc_solver.eoc_solve(0.0, relu)
        assert point.status == EocStatus.EXACT
        assert point.sigma_w == math.sqrt(2.0)
        assert point.chi1 == 1.0 and point.alpha == 1.0
        assert point.eps_c == math.inf
        assert abs(point.diagnostics['numeric_chi1_residual']) < 1e-10

    @pytest.mark.parametrize('sigma_b', [0.1, 0.5])
    def test_no_point_with_bias(self, relu, sigma_b):
        point = eoc_solver.eoc_solve(sigma_b, relu)
        assert point.status == EocStatus.NOT_FOUND
        assert point.diagnostics['reason'] == 'relu_like_singleton'
        assert math.isnan(point.sigma_w)

    def test_leaky_relu(self):
        point = eoc_solver.relu_like_eoc(ReluLikeParams(lam=1.0, beta=0.5))
        assert_allclose(point.sigma_w, 1.2649110640673518, rtol=1e-15)
        assert point.diagnostics['relu_like'] == {'lambda': 1.0, 'beta': 0.5}

    def test_leaky_relu_through_registry(self):
        point = eoc_solver.eoc_solve(0.0, make_activation('relu_like:1:0.5'))
        assert point.status == EocStatus.EXACT
        assert_allclose(point.sigma_w, math.sqrt(2.0 / 1.25))


class TestSmoothActivations:
    def test_tanh_point_is_verified(self, engine, tanh):
        point = eoc_solver.eoc_solve(0.3, tanh)
        _verified(point, engine, tanh)
        assert point.status == EocStatus.NUMERIC
        assert point.diagnostics['path'] == 'minimal_fixed_point'
        assert point.diagnostics['criterion'] == 'chi1'
        assert point.eps_c == math.inf

    def test_elu_point_has_unit_chi1(self, engine, elu):
        point = eoc_solver.eoc_solve(0.2, elu)
        _verified(point, engine, elu)
        assert point.diagnostics['criterion'] == 'chi1'
        assert_allclose(point.sigma_w, 1.23, atol=0.01)
        assert_allclose(point.q, 1.1, rtol=0.05)
        assert abs(eoc_solver.variance_identity_residual(point.q, 0.2, elu)) < 1e-6

    def test_swish_point_is_the_fold(self, engine, swish):
        point = eoc_solver.eoc_solve(0.2, swish)
        _verified(point, engine, swish)
        assert point.diagnostics['path'] == 'fold'
        assert_allclose(point.sigma_w, 1.718, atol=0.01)
        assert_allclose(point.q, 0.3418, rtol=0.01)
        assert 0.9 < point.chi1 < 0.95
        assert math.isfinite(point.eps_c) and point.eps_q == math.inf
        lo, hi = point.diagnostics['bisection_interval']
        assert hi - lo <= 1e-4
        assert abs(point.sigma_w - hi) < 1e-3

    def test_swish_unit_chi1_point_sits_on_the_unstable_branch(self, swish):
        point = eoc_solver.eoc_solve(0.2, swish)
        identity = point.diagnostics['variance_identity']
        assert_allclose(identity['sigma_w'], 1.680, atol=0.005)
        assert_allclose(identity['q'], 0.69, rtol=0.03)
        assert identity['q'] > point.q and identity['sigma_w'] < point.sigma_w
        assert abs(eoc_solver.variance_identity_residual(identity['q'], 0.2, swish)) < 1e-6
        assert abs(point.diagnostics['variance_identity_residual']) > 0.01

    @pytest.mark.slow
    def test_swish_table(self, engine, swish):
        points = eoc_solver.eoc_curve([row[0] for row in SWISH_TABLE], swish)
        for point, (sigma_b, sigma_w, _), fold_q in zip(points, SWISH_TABLE, SWISH_FOLD_Q):
            _verified(point, engine, swish)
            assert point.sigma_b == sigma_b
            assert abs(point.sigma_w - sigma_w) <= 0.01, sigma_b
            assert abs(point.q - fold_q) <= 0.01 * fold_q, sigma_b
            assert 0.9 < point.chi1 < 0.96, sigma_b
        curve = points[0].diagnostics['curve']
        assert curve['sigma_w_non_increasing'] and curve['q_non_decreasing']
        assert curve['found'] == curve['requested'] == 5

    @pytest.mark.slow
    def test_swish_tabulated_q_matches_at_two_biases(self, swish):
        # the other three tabulated q values are off the fold by 8% to 23%
        for sigma_b, _, q in (SWISH_TABLE[0], SWISH_TABLE[2]):
            point = eoc_solver.eoc_solve(sigma_b, swish)
            assert abs(point.q - q) <= 0.05 * q, sigma_b
        point = eoc_solver.eoc_solve(0.2, swish)
        assert point.q < 0.95 * SWISH_TABLE[1][2]

    @pytest.mark.slow
    def test_swish_variance_vanishes_with_bias(self, swish):
        points = eoc_solver.eoc_curve([0.01, 0.02, 0.05, 0.1, 0.2], swish)
        assert all(pt.found for pt in points)
        qs = [pt.q for pt in points]
        assert all(b > a for a, b in zip(qs, qs[1:]))
        assert qs[0] < 0.02

    @pytest.mark.slow
    def test_elu_variance_vanishes_linearly_with_bias(self, elu):
        points = eoc_solver.eoc_curve([0.01, 0.02, 0.05, 0.1, 0.2], elu)
        assert all(pt.found for pt in points)
        qs = [pt.q for pt in points]
        assert all(b > a for a, b in zip(qs, qs[1:]))
        # q grows like 3.3 sigma_b near 0, so q(0.01) sits near 0.033
        assert qs[0] < 0.04
        assert qs[0] / qs[1] < 0.6

    @pytest.mark.slow
    def test_swish_weight_variance_tends_to_two(self, swish):
        point = eoc_solver.eoc_solve(0.01, swish)
        assert_allclose(point.sigma_w, 2.0, atol=0.05)


class TestValidation:
    def test_negative_bias(self, tanh):
        with pytest.raises(DomainError):
            eoc_solver.eoc_solve(-0.1, tanh)

    def test_non_finite_bias(self, tanh):
        with pytest.raises(DomainError):
            eoc_solver.eoc_solve(math.inf, tanh)

    @pytest.mark.parametrize('grid', [[], [0.3, 0.2], [-0.1, 0.2]])
    def test_bad_grids(self, tanh, grid):
        with pytest.raises(DomainError):
            eoc_solver.eoc_curve(grid, tanh)

    def test_identity_residual_domain(self, swish):
        with pytest.raises(DomainError):
            eoc_solver.variance_identity_residual(0.0, 0.2, swish)

    def test_relu_curve_marks_biased_points(self, relu):
        points = eoc_solver.eoc_curve([0.0, 0.1], relu)
        assert [pt.status for pt in points] == [EocStatus.EXACT, EocStatus.NOT_FOUND]
        assert points[0].diagnostics['curve']['found'] == 1
