import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from backend.core.activations import make_activation
from backend.core.exceptions import DomainError
from backend.core.models import FixedPointStatus, KernelState, MeanFieldParams, PropagationMode
from backend.services.closedform_service import relu_corr
from tests.conftest import RELU_EOC, TANH_ORDERED


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-12)


class TestVarianceMap:
    @pytest.mark.parametrize('x', [0.0, 0.3, 1.0, 4.0])
    def test_relu_eoc_is_identity(self, engine, relu, x):
        assert_allclose(engine.variance_map(x, RELU_EOC, relu), x, atol=1e-13)

    def test_negative_argument(self, engine, tanh):
        with pytest.raises(DomainError):
            engine.variance_map(-0.1, TANH_ORDERED, tanh)

    @pytest.mark.parametrize('name', ['tanh', 'swish', 'arctan'])
    def test_z_and_stein_forms_agree(self, engine, name):
        phi = make_activation(name)
        p = MeanFieldParams(sigma_b2=0.04, sigma_w2=2.5)
        for x in (0.05, 0.7, 3.0, 10.0):
            z_form = engine.variance_map_derivative(x, p, phi, form='z')
            stein = engine.variance_map_derivative(x, p, phi, form='stein')
            assert_allclose(z_form, stein, rtol=1e-9)

    def test_stein_form_needs_second_derivative(self, engine, relu):
        with pytest.raises(DomainError):
            engine.variance_map_derivative(1.0, RELU_EOC, relu, form='stein')

    @pytest.mark.parametrize('name', ['relu', 'tanh', 'swish', 'elu', 'hard_tanh'])
    def test_derivative_matches_finite_difference(self, engine, name):
        phi = make_activation(name)
        p = MeanFieldParams(sigma_b2=0.1, sigma_w2=1.5)
        rng = np.random.default_rng(7)
        for x in rng.uniform(0.1, 5.0, 25):
            h = 1e-5 * x
            numeric = (engine.variance_map(x + h, p, phi) - engine.variance_map(x - h, p, phi)) / (2 * h)
            assert _rel(engine.variance_map_derivative(x, p, phi), numeric) < 1e-4

    def test_variance_curve_rows(self, engine, elu):
        p = MeanFieldParams.from_sigmas(0.2, 1.23)
        rows = engine.variance_curve(p, elu, [0.0, 0.5, 1.0])
        assert [r[0] for r in rows] == [0.0, 0.5, 1.0]
        assert math.isnan(rows[0][2])
        assert_allclose(rows[0][1], 0.04, rtol=1e-12)
        assert all(r[2] > 0 for r in rows[1:])


class TestFixedPoint:
    def test_every_point_is_fixed_on_relu_eoc(self, engine, relu):
        result = engine.variance_fixed_point(RELU_EOC, relu, 0.7)
        assert result.status == FixedPointStatus.CONVERGED
        assert result.iters == 1
        assert_allclose(result.q, 0.7, rtol=1e-12)

    def test_relu_with_bias(self, engine, relu):
        result = engine.minimal_fixed_point(MeanFieldParams(sigma_b2=1.0, sigma_w2=1.0), relu)
        assert result.converged
        assert_allclose(result.q, 2.0, rtol=1e-9)

    def test_divergence(self, engine, relu):
        result = engine.minimal_fixed_point(MeanFieldParams(sigma_b2=1.0, sigma_w2=4.0), relu)
        assert result.status == FixedPointStatus.DIVERGED

    def test_iteration_budget(self, engine, tanh):
        result = engine.variance_fixed_point(MeanFieldParams(sigma_b2=0.0, sigma_w2=1.0), tanh, 1.0, max_iters=5)
        assert result.status == FixedPointStatus.MAX_ITERS
        assert result.iters == 5

    def test_tanh_fixed_point_satisfies_map(self, engine, tanh):
        result = engine.minimal_fixed_point(TANH_ORDERED, tanh)
        assert result.converged
        assert abs(engine.variance_map(result.q, TANH_ORDERED, tanh) - result.q) < 1e-10

    def test_negative_start(self, engine, tanh):
        with pytest.raises(DomainError):
            engine.variance_fixed_point(TANH_ORDERED, tanh, -1.0)


class TestCorrelationMap:
    def test_fixed_variance_gives_unit_correlation_at_one(self, engine, tanh):
        q = engine.minimal_fixed_point(TANH_ORDERED, tanh).q
        assert_allclose(engine.correlation_map(1.0, q, TANH_ORDERED, tanh), 1.0, atol=1e-10)

    def test_relu_values(self, engine, relu):
        assert_allclose(engine.correlation_map(0.0, 1.0, RELU_EOC, relu), 1.0 / math.pi, atol=1e-10)
        assert_allclose(engine.correlation_map_derivative(0.0, 1.0, RELU_EOC, relu), 0.5, atol=1e-10)

    @pytest.mark.parametrize('name', ['relu', 'tanh', 'swish', 'elu'])
    def test_derivative_matches_finite_difference(self, engine, name):
        phi = make_activation(name)
        p = MeanFieldParams(sigma_b2=0.05, sigma_w2=1.8)
        rng = np.random.default_rng(11)
        for x, q in zip(rng.uniform(0.05, 0.9, 25), rng.uniform(0.2, 3.0, 25)):
            h = 1e-5
            numeric = (engine.correlation_map(x + h, q, p, phi) - engine.correlation_map(x - h, q, p, phi)) / (2 * h)
            assert _rel(engine.correlation_map_derivative(x, q, p, phi), numeric) < 1e-4

    @pytest.mark.parametrize('name', ['tanh', 'swish'])
    def test_second_derivative_matches_finite_difference(self, engine, name):
        phi = make_activation(name)
        p = MeanFieldParams(sigma_b2=0.05, sigma_w2=1.8)
        rng = np.random.default_rng(13)
        for x, q in zip(rng.uniform(0.05, 0.9, 25), rng.uniform(0.2, 3.0, 25)):
            value, path = engine.correlation_map_second_with_path(x, q, p, phi)
            assert path == 'expectation'
            h = 1e-5
            numeric = (engine.correlation_map_derivative(x + h, q, p, phi)
                       - engine.correlation_map_derivative(x - h, q, p, phi)) / (2 * h)
            assert abs(value - numeric) < 1e-4 * max(abs(numeric), 1e-2)

    def test_relu_second_derivative_uses_finite_differences(self, engine, relu):
        value, path = engine.correlation_map_second_with_path(0.6, 1.0, RELU_EOC, relu)
        assert path == 'finite_difference'
        assert_allclose(value, 1.0 / (math.pi * math.sqrt(1 - 0.36)), rtol=1e-6)

    def test_second_derivative_domain(self, engine, tanh):
        with pytest.raises(DomainError):
            engine.correlation_map_second(1.0, 1.0, TANH_ORDERED, tanh)
        with pytest.raises(DomainError):
            engine.correlation_map(0.5, 0.0, TANH_ORDERED, tanh)

    def test_gap_matches_direct_subtraction(self, engine, tanh):
        q = engine.minimal_fixed_point(TANH_ORDERED, tanh).q
        for gap in (0.3, 0.05):
            direct = 1.0 - engine.correlation_map(1.0 - gap, q, TANH_ORDERED, tanh)
            assert_allclose(engine.correlation_gap(gap, q, TANH_ORDERED, tanh), direct, rtol=1e-8)

    def test_relu_gap_closed_form(self, engine, relu):
        assert_allclose(engine.correlation_gap(0.4, 1.0, RELU_EOC, relu), 1.0 - relu_corr(0.6), rtol=1e-13)


class TestRates:
    @pytest.mark.parametrize('q', [0.0, 0.3, 1.0, 5.0])
    def test_relu_chi1_on_eoc(self, engine, relu, q):
        assert_allclose(engine.chi1(q, RELU_EOC, relu), 1.0, atol=1e-10)

    def test_relu_alpha_on_eoc(self, engine, relu):
        assert_allclose(engine.alpha(1.0, RELU_EOC, relu), 1.0, atol=1e-10)

    def test_tanh_ordered_phase(self, engine, tanh):
        q = engine.minimal_fixed_point(TANH_ORDERED, tanh).q
        scales = engine.depth_scales(q, TANH_ORDERED, tanh)
        assert scales.chi1 < 1
        assert scales.alpha < 1
        assert_allclose(scales.eps_c, -1.0 / math.log(scales.chi1))

    def test_alpha_matches_variance_slope(self, engine, swish):
        p = MeanFieldParams(sigma_b2=0.04, sigma_w2=3.0)
        assert_allclose(engine.alpha(0.8, p, swish), engine.variance_map_derivative(0.8, p, swish), rtol=1e-9)

    def test_depth_scale_matches_correlation_decay(self, engine, tanh):
        q = engine.minimal_fixed_point(TANH_ORDERED, tanh).q
        scales = engine.depth_scales(q, TANH_ORDERED, tanh)
        trajectory = engine.iterate_kernel(KernelState(layer=1, q_a=q, q_b=q, c_ab=0.1), 40, TANH_ORDERED, tanh,
                                           PropagationMode.HOMOGENEOUS)
        layers = np.array([s.layer for s in trajectory if 10 <= s.layer <= 40])
        gaps = np.array([s.gap for s in trajectory if 10 <= s.layer <= 40])
        slope = np.polyfit(layers, np.log(gaps), 1)[0]
        assert_allclose(slope, -1.0 / scales.eps_c, rtol=0.05)


class TestKernelRecursion:
    def test_relu_layerwise_keeps_variance(self, engine, relu):
        trajectory = engine.iterate_kernel(KernelState(layer=1, q_a=1.0, q_b=1.0, c_ab=0.1), 50, RELU_EOC, relu)
        assert len(trajectory) == 50
        assert all(abs(s.q_a - 1.0) < 1e-9 and abs(s.q_b - 1.0) < 1e-9 for s in trajectory)

    def test_relu_homogeneous_correlation_increases(self, engine, relu):
        trajectory = engine.iterate_kernel(KernelState(layer=1, q_a=1.0, q_b=1.0, c_ab=0.1), 200, RELU_EOC, relu,
                                           PropagationMode.HOMOGENEOUS)
        c = [s.c_ab for s in trajectory]
        assert all(b > a for a, b in zip(c, c[1:]))
        assert c[-1] < 1.0
        assert_allclose(trajectory[1].c_ab, relu_corr(0.1), rtol=1e-12)

    def test_layerwise_and_homogeneous_agree_at_fixed_point(self, engine, tanh):
        q = engine.minimal_fixed_point(TANH_ORDERED, tanh).q
        start = KernelState(layer=1, q_a=q, q_b=q, c_ab=0.3)
        layerwise = engine.iterate_kernel(start, 10, TANH_ORDERED, tanh, PropagationMode.LAYERWISE)
        homogeneous = engine.iterate_kernel(start, 10, TANH_ORDERED, tanh, PropagationMode.HOMOGENEOUS)
        assert_allclose([s.c_ab for s in layerwise], [s.c_ab for s in homogeneous], atol=1e-9)

    def test_unequal_variances(self, engine, swish):
        p = MeanFieldParams(sigma_b2=0.04, sigma_w2=2.9)
        trajectory = engine.iterate_kernel(KernelState(layer=1, q_a=0.5, q_b=2.0, c_ab=0.4), 5, p, swish)
        second = trajectory[1]
        assert_allclose(second.q_a, engine.variance_map(0.5, p, swish), rtol=1e-12)
        assert_allclose(second.q_b, engine.variance_map(2.0, p, swish), rtol=1e-12)
        cross = engine.quad.expect2(swish.value, swish.value, 0.5, 2.0, 0.4)
        expected = (p.sigma_b2 + p.sigma_w2 * cross) / math.sqrt(second.q_a * second.q_b)
        assert_allclose(second.c_ab, expected, atol=1e-10)

    def test_divergence_truncates(self, engine, relu):
        p = MeanFieldParams(sigma_b2=0.0, sigma_w2=4.0)
        trajectory = engine.iterate_kernel(KernelState(layer=1, q_a=1.0, q_b=1.0, c_ab=0.5), 100, p, relu)
        assert trajectory.truncated
        assert len(trajectory) < 100
        assert all(s.q_a <= 1e12 for s in trajectory)

    def test_homogeneous_needs_fixed_point(self, engine, relu):
        p = MeanFieldParams(sigma_b2=0.0, sigma_w2=4.0)
        with pytest.raises(DomainError):
            engine.iterate_kernel(KernelState(layer=1, q_a=1.0, q_b=1.0, c_ab=0.5), 10, p, relu,
                                  PropagationMode.HOMOGENEOUS)

    def test_depth_must_be_positive(self, engine, relu):
        with pytest.raises(DomainError):
            engine.iterate_kernel(KernelState(layer=1, q_a=1.0, q_b=1.0, c_ab=0.5), 0, RELU_EOC, relu)


class TestContraction:
    def test_relu_constants(self, engine, relu):
        assert_allclose(engine.m_phi_sup(relu, grid=20), 0.5, rtol=1e-9)
        assert engine.c_phi_sup(relu, 0.5, grid=10) <= 1.0 + 1e-12

    def test_elu_m_phi_uses_second_derivative(self, engine, elu):
        # E|phi'^2 + phi'' phi| at x = 2; the Z-form gives 0.5207
        assert_allclose(engine.m_phi_sup(elu, x_max=2.0, grid=2), 0.57827739, rtol=1e-3)

    def test_tanh_certificate(self, engine, tanh):
        certificate = engine.contraction_certificate(MeanFieldParams(sigma_b2=0.1, sigma_w2=0.5), tanh, grid=10)
        assert certificate['activation'] == 'tanh'
        assert certificate['m_phi'] > 0
        assert certificate['variance_certified'] == (0.5 < 1.0 / certificate['m_phi'])

    def test_bad_grid(self, engine, tanh):
        with pytest.raises(DomainError):
            engine.m_phi_sup(tanh, grid=1)
