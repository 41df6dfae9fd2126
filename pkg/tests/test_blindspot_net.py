import dataclasses

import numpy as np
import pytest

from models import NetworkConfig
from services.blindspot_net import (assert_blind_spot, build_network, expected_shapes, forward,
                                    network_from_params, parameter_count, receptive_field_info,
                                    rf_half)
from services.errors import ConfigError, DimensionError, ParameterError
from services.eval_bench import dirac_probe
from services.tensor_engine import Tensor


def small(depth, **changes):
    return NetworkConfig(depth=depth, forward_channels=3, branch_channels=2, head_widths=(4,), **changes)


class TestReceptiveField:
    def test_rf_half(self):
        assert [rf_half(d) for d in range(5)] == [0, 1, 2, 3, 4]
        assert rf_half(3, kernel_size=5) == 6

    def test_rf_half_rejects_even_kernel(self):
        with pytest.raises(ParameterError):
            rf_half(2, kernel_size=4)

    @pytest.mark.parametrize('depth', range(1, 11))
    def test_side_is_four_depth_plus_three(self, depth):
        assert receptive_field_info(NetworkConfig(depth=depth)).side == 4 * depth + 3

    def test_depth_ten_branch_dilations(self):
        info = receptive_field_info(NetworkConfig(depth=10))
        assert info.dilations == tuple(range(1, 12))
        assert info.side == 43


class TestBuild:
    def test_layer_layout(self):
        net = build_network(small(4))
        names = [spec.name for spec in net.layers]
        assert names[:6] == ['forward.1', 'forward.2', 'skip.2', 'forward.3', 'forward.4', 'branch.0']
        assert [s.dilation for s in net.branches()] == [1, 2, 3, 4, 5]
        assert all(s.blind_spot for s in net.branches())
        assert net.layer('head.1').out_channels == 2

    def test_color_head_width(self):
        net = build_network(small(2, color=True))
        assert net.layer('head.1').out_channels == 9
        assert net.layer('branch.0').in_channels == 3

    def test_residual_period_zero_has_no_skips(self):
        net = build_network(small(4, residual_period=0))
        assert not any(spec.name.startswith('skip.') for spec in net.layers)

    def test_same_channels_need_no_projection(self):
        net = build_network(NetworkConfig(depth=2, forward_channels=1, branch_channels=2, head_widths=(4,)))
        assert not net.has_layer('skip.2')

    def test_parameter_count_matches_shapes(self):
        config = small(3)
        net = build_network(config)
        assert parameter_count(net) == sum(int(np.prod(s)) for s in expected_shapes(config).values())

    def test_build_is_deterministic(self):
        a = build_network(small(2), seed=5)
        b = build_network(small(2), seed=5)
        for name in a.parameter_names():
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_biases_start_at_zero(self):
        net = build_network(small(2))
        assert all(not np.any(net.params[f'{s.name}.bias'].data) for s in net.layers)

    def test_network_from_params_rejects_missing(self):
        config = small(2)
        arrays = {name: p.data for name, p in build_network(config).params.items()}
        arrays.pop('head.0.bias')
        with pytest.raises(DimensionError):
            network_from_params(config, arrays)

    @pytest.mark.parametrize('field, value', [('depth', 0), ('kernel_size', 4), ('residual_period', -1)])
    def test_invalid_config_names_field(self, field, value):
        config = dataclasses.replace(small(2), **{field: value})
        with pytest.raises(ConfigError) as info:
            build_network(config)
        assert info.value.field == field


class TestForward:
    def test_gray_output_channels(self, rng):
        pred = forward(build_network(small(2)), rng.uniform(size=(2, 1, 10, 12)))
        assert pred.mean.shape == (2, 1, 10, 12)
        assert pred.cov_params.shape == (2, 1, 10, 12)

    def test_color_output_channels(self, rng):
        pred = forward(build_network(small(2, color=True)), rng.uniform(size=(1, 3, 8, 8)))
        assert pred.mean.shape == (1, 3, 8, 8)
        assert pred.cov_params.shape == (1, 6, 8, 8)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            forward(build_network(small(2)), rng.uniform(size=(1, 3, 8, 8)))

    @pytest.mark.parametrize('depth', [1, 2, 3])
    @pytest.mark.parametrize('seed', range(4))
    def test_single_pixel_perturbation_leaves_own_output_unchanged(self, depth, seed):
        rng = np.random.default_rng(seed)
        net = build_network(small(depth), seed=seed)
        image = rng.uniform(size=(1, 1, 12, 12))
        base = forward(net, Tensor(image))
        y, x = rng.integers(0, 12, size=2)
        image[0, 0, y, x] += rng.uniform(0.5, 2.0)
        moved = forward(net, Tensor(image))
        assert moved.mean.data[0, 0, y, x] == base.mean.data[0, 0, y, x]
        assert moved.cov_params.data[0, 0, y, x] == base.cov_params.data[0, 0, y, x]
        # los vecinos si cambian
        assert not np.array_equal(moved.mean.data, base.mean.data)


class TestBlindSpotAssertion:
    @pytest.mark.parametrize('depth', range(1, 11))
    def test_holds_for_all_depths(self, depth):
        config = NetworkConfig(depth=depth, forward_channels=2, branch_channels=2, head_widths=(2,))
        for seed in range(10):
            report = assert_blind_spot(build_network(config, seed=seed), seed=seed)
            assert report.success, report.message

    def test_color_network(self):
        report = assert_blind_spot(build_network(small(2, color=True), seed=1))
        assert report.success
        assert len(report.positions) == 9

    def test_fails_without_mask(self):
        net = build_network(small(2), seed=0).replace_layer('branch.0', blind_spot=False)
        report = assert_blind_spot(net)
        assert not report.success
        assert len(report.offending) == 9
        assert 'violado' in report.message

    def test_probe_image_too_small(self):
        with pytest.raises(ParameterError):
            assert_blind_spot(build_network(small(1)), size=2)

    @pytest.mark.parametrize('branch', [1, 2, 3])
    def test_fails_when_branch_dilation_reaches_the_center(self, branch):
        # con dilatación rf_half(i) el tap extremo cae sobre el borde del campo receptivo de la rama
        net = build_network(small(3), seed=2).replace_layer(f'branch.{branch}', dilation=rf_half(branch))
        report = assert_blind_spot(net)
        assert not report.success
        assert report.offending

    def test_lowering_every_branch_reports_instead_of_raising(self):
        net = build_network(small(3), seed=0)
        for spec in net.branches():
            net = net.replace_layer(spec.name, dilation=spec.dilation - 1)
        assert net.layer('branch.0').dilation == 0
        report = assert_blind_spot(net)
        assert not report.success
        assert len(report.offending) == len(report.positions)
        assert 'branch.0' in report.message

    def test_zero_dilation_on_first_branch_only(self):
        net = build_network(small(2), seed=0).replace_layer('branch.0', dilation=0)
        report = assert_blind_spot(net)
        assert not report.success


class TestStructuralProperties:
    def test_zero_head_outputs_its_bias(self, rng):
        config = small(2)
        arrays = {name: p.data.copy() for name, p in build_network(config, seed=3).params.items()}
        arrays['head.1.weight'][...] = 0.0
        arrays['head.1.bias'][...] = [0.375, -1.5]
        pred = forward(network_from_params(config, arrays), rng.uniform(size=(2, 1, 9, 11)))
        assert np.all(pred.mean.data == np.float32(0.375))
        assert np.all(pred.cov_params.data == np.float32(-1.5))

    @pytest.mark.parametrize('dy, dx', [(3, 2), (1, 5)])
    def test_translation_equivariance_away_from_borders(self, dy, dx):
        config = small(2)
        net = build_network(config, seed=1)
        r = receptive_field_info(config).side // 2
        size = 32
        image = np.random.default_rng(dy * 10 + dx).uniform(size=(1, 1, size, size))
        shifted = np.roll(image, (dy, dx), axis=(2, 3))
        base = forward(net, image).mean.data[0, 0]
        moved = forward(net, shifted).mean.data[0, 0]
        np.testing.assert_allclose(moved[dy + r:size - r, dx + r:size - r],
                                   base[r:size - r - dy, r:size - r - dx], atol=1e-5, rtol=0)

    def test_residual_period_zero_keeps_footprint_and_blind_spot(self):
        config = small(3, residual_period=0)
        footprint = dirac_probe(config, seeds=2)
        assert footprint.box == (15, 15)
        assert footprint.center_value == 0.0
        for seed in range(3):
            report = assert_blind_spot(build_network(config, seed=seed), seed=seed)
            assert report.success, report.message
