import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from backend.core.activations import make_activation
from backend.core.exceptions import ConfigurationError, DomainError, NumericError
from backend.core.models import KernelState, MeanFieldParams, SimConfig
from backend.services.eoc_service import eoc_solver
from backend.services.simulation_service import (FieldGrid, NetworkSimulator, input_pair, input_scale,
                                                 network_simulator, normalize_inputs)
from tests.conftest import RELU_EOC, TANH_ORDERED


def _config(activation='relu', params=RELU_EOC, widths=(50, 50, 50), input_dim=2, replications=4, seed=7):
    return SimConfig(widths=widths, input_dim=input_dim, params=params,
                     activation=make_activation(activation), replications=replications, seed=seed)


class TestInputs:
    def test_normalize_inputs(self):
        scaled = normalize_inputs([[3.0, 4.0], [0.0, 2.0]], RELU_EOC, 1.0)
        assert_allclose(scaled, [[0.6, 0.8], [0.0, 1.0]])

    def test_normalize_zero_input(self):
        with pytest.raises(DomainError):
            normalize_inputs([[0.0, 0.0]], RELU_EOC, 1.0)
        # sigma_b^2 already equals q1: nothing to scale
        assert_array_equal(normalize_inputs([[0.0, 0.0]], TANH_ORDERED, 1.0), [[0.0, 0.0]])

    def test_input_scale_below_bias(self):
        with pytest.raises(DomainError):
            input_scale(TANH_ORDERED, 2, 0.5)

    @pytest.mark.parametrize('params, q1, c1', [(RELU_EOC, 1.0, 0.2), (TANH_ORDERED, 2.0, 0.2),
                                                (MeanFieldParams(0.04, 2.9), 0.44, -0.3)])
    def test_input_pair_hits_first_layer_kernel(self, params, q1, c1):
        a, b = input_pair(params, 3, q1, c1)
        q_a = params.sigma_b2 + params.sigma_w2 * a @ a / 3
        q_b = params.sigma_b2 + params.sigma_w2 * b @ b / 3
        k = params.sigma_b2 + params.sigma_w2 * a @ b / 3
        assert_allclose([q_a, q_b, k / q1], [q1, q1, c1], atol=1e-12)

    def test_unreachable_pair(self):
        # with sigma_b^2 = 1 and q1 = 2 the correlation cannot drop below 0
        with pytest.raises(DomainError):
            input_pair(TANH_ORDERED, 2, 2.0, -0.5)
        with pytest.raises(DomainError):
            input_pair(RELU_EOC, 1, 1.0, 0.2)


class TestSimulate:
    def test_bad_configs(self):
        with pytest.raises(ConfigurationError):
            _config(widths=())
        with pytest.raises(ConfigurationError):
            _config(replications=0)
        with pytest.raises(ConfigurationError):
            _config(seed=-1)

    def test_input_dimension_checked(self):
        with pytest.raises(DomainError):
            network_simulator.simulate(_config(), [[1.0, 0.0, 0.0]])

    def test_determinism_across_workers(self):
        cfg = _config(replications=8)
        inputs = input_pair(RELU_EOC, 2, 1.0, 0.2)
        serial = NetworkSimulator(workers=1).simulate(cfg, inputs)
        threaded = NetworkSimulator(workers=4).simulate(cfg, inputs)
        assert len(serial.outputs) == len(threaded.outputs) == 8
        for left, right in zip(serial.outputs, threaded.outputs):
            assert_array_equal(left, right)
        assert serial.layers == threaded.layers

    def test_seed_changes_the_draw(self):
        inputs = input_pair(RELU_EOC, 2, 1.0, 0.2)
        first = network_simulator.simulate(_config(seed=1, replications=1), inputs)
        second = network_simulator.simulate(_config(seed=2, replications=1), inputs)
        assert not np.array_equal(first.outputs[0], second.outputs[0])

    def test_zero_input_without_bias(self):
        result = network_simulator.simulate(_config(), [[0.0, 0.0], [0.0, 0.0]])
        for moments in result.layers:
            assert moments.q_a == moments.q_b == 0.0
            assert moments.c_ab == 0.0
        assert all(np.all(out == 0.0) for out in result.outputs)

    def test_single_replication_uses_neuron_spread(self):
        result = network_simulator.simulate(_config(replications=1), input_pair(RELU_EOC, 2, 1.0, 0.5))
        first = result.layers[0]
        assert first.q_a_se > 0 and first.q_b_se > 0
        assert math.isnan(first.c_ab_se)

    def test_all_replications_aborted(self):
        cfg = _config(params=MeanFieldParams(sigma_b2=0.0, sigma_w2=1e300), widths=(10, 10, 10, 10))
        with pytest.raises(NumericError) as info:
            network_simulator.simulate(cfg, [[1.0, 1.0]])
        assert info.value.exit_code == 3

    def test_layer_preactivations(self):
        cfg = _config(widths=(5, 6, 7))
        inputs = np.ones((4, 2))
        layers = network_simulator.layer_preactivations(cfg, inputs)
        assert [y.shape for y in layers] == [(5, 4), (6, 4), (7, 4)]
        last = network_simulator.layer_preactivations(cfg, inputs, keep='last')
        assert len(last) == 1
        assert_array_equal(last[0], layers[-1])

    def test_first_layer_matches_mean_field(self, engine, relu):
        cfg = _config(widths=(2000,), replications=20)
        result = network_simulator.simulate(cfg, input_pair(RELU_EOC, 2, 1.0, 0.2))
        first = result.layers[0]
        assert abs(first.q_a - 1.0) < 4 * first.q_a_se
        assert abs(first.c_ab - 0.2) < 4 * first.c_ab_se


def _agreement(engine, activation, params, q1, c1):
    phi = make_activation(activation)
    cfg = SimConfig(widths=(500,) * 10, input_dim=2, params=params, activation=phi, replications=50, seed=2024)
    result = network_simulator.simulate(cfg, input_pair(params, 2, q1, c1))
    predicted = engine.iterate_kernel(KernelState(layer=1, q_a=q1, q_b=q1, c_ab=c1), 10, params, phi)
    assert not result.aborted
    for moments, state in zip(result.layers, predicted):
        assert moments.layer == state.layer
        assert abs(moments.q_a - state.q_a) < 4 * moments.q_a_se, moments
        assert abs(moments.q_b - state.q_b) < 4 * moments.q_b_se, moments
        assert abs(moments.c_ab - state.c_ab) < 4 * moments.c_ab_se + 1e-12, moments


@pytest.mark.slow
def test_relu_eoc_matches_mean_field(engine):
    _agreement(engine, 'relu', RELU_EOC, 1.0, 0.2)


@pytest.mark.slow
def test_tanh_ordered_matches_mean_field(engine):
    _agreement(engine, 'tanh', TANH_ORDERED, 2.0, 0.2)


@pytest.mark.slow
def test_swish_eoc_matches_mean_field(engine, swish):
    point = eoc_solver.eoc_solve(0.2, swish)
    _agreement(engine, 'swish', point.params, point.q, 0.2)


class TestFields:
    GRID = FieldGrid.square(-1.0, 1.0, 21)

    def test_grid(self):
        assert self.GRID.points.shape == (441, 2)
        assert self.GRID.radii[10, 10] == 0.0
        with pytest.raises(DomainError):
            FieldGrid.square(1.0, -1.0, 10)

    def test_field_needs_two_dimensional_inputs(self):
        with pytest.raises(DomainError):
            network_simulator.output_field(_config(input_dim=3), self.GRID)

    def test_field_shapes(self):
        cfg = _config(widths=(30, 20))
        fields = network_simulator.output_fields(cfg, self.GRID)
        assert fields.shape == (20, 21, 21)
        assert_array_equal(network_simulator.output_field(cfg, self.GRID), fields[0])

    def test_radial_profile(self):
        field = self.GRID.radii ** 2
        rows = network_simulator.radial_profile(field, self.GRID, bins=5)
        assert len(rows) == 5
        radii = [r[0] for r in rows]
        means = [r[1] for r in rows]
        assert all(b > a for a, b in zip(radii, radii[1:]))
        assert all(b > a for a, b in zip(means, means[1:]))

    def test_radial_ratio_of_a_radial_field_is_small(self):
        assert network_simulator.radial_ratio(self.GRID.radii, self.GRID) < 0.1

    def test_radial_ratio_of_a_constant_field(self):
        assert network_simulator.radial_ratio(np.ones((21, 21)), self.GRID) is None

    def test_tanh_ordered_fields_are_almost_constant(self):
        cfg = SimConfig(widths=(100,) * 10, input_dim=2, params=TANH_ORDERED, activation=make_activation('tanh'))
        grid = FieldGrid.square(-1.0, 1.0, 50)
        summary = network_simulator.field_summary(network_simulator.output_fields(cfg, grid), grid)
        assert summary['neurons'] == 100
        assert summary['median_relative_range'] < 0.2
        assert summary['almost_constant']

    def test_relu_fields_vary_more_than_tanh(self):
        grid = FieldGrid.square(-1.0, 1.0, 50)
        summaries = {}
        for name, params in (('relu', RELU_EOC), ('tanh', TANH_ORDERED)):
            cfg = SimConfig(widths=(100,) * 10, input_dim=2, params=params, activation=make_activation(name))
            summaries[name] = network_simulator.field_summary(network_simulator.output_fields(cfg, grid), grid)
        assert summaries['relu']['median_field_std'] > summaries['tanh']['median_field_std']
        assert not summaries['relu']['almost_constant']

    def test_shallow_relu_fields_are_not_radial(self):
        cfg = SimConfig(widths=(500, 500), input_dim=2, params=RELU_EOC, activation=make_activation('relu'))
        ratio = network_simulator.radial_ratio(network_simulator.output_fields(cfg, self.GRID), self.GRID)
        assert ratio > 0.5

    @pytest.mark.slow
    def test_deep_relu_fields_become_radial(self):
        # infinite-width value on this grid is about 0.31 at depth 50
        cfg = SimConfig(widths=(500,) * 50, input_dim=2, params=RELU_EOC, activation=make_activation('relu'))
        ratio = network_simulator.radial_ratio(network_simulator.output_fields(cfg, self.GRID), self.GRID)
        assert ratio < 0.5

    @pytest.mark.slow
    def test_relu_radial_ratio_falls_with_depth(self):
        ratios = []
        for depth in (2, 10, 20, 50):
            cfg = SimConfig(widths=(500,) * depth, input_dim=2, params=RELU_EOC, activation=make_activation('relu'))
            ratios.append(network_simulator.radial_ratio(network_simulator.output_fields(cfg, self.GRID), self.GRID))
        assert all(b < a for a, b in zip(ratios, ratios[1:]))
        assert ratios[0] > 2.0 * ratios[-1]
