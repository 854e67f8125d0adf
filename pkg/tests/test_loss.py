import math

import numpy as np
import pytest
from scipy import stats

from fqr.loss import (Kernel, SmoothedLossSpec, check_loss, default_bandwidth,
                      numeric_smoothed_check, smoothed_check, smoothed_grad_scalar,
                      smoothed_hess_scalar)

KERNELS = [Kernel.GAUSSIAN, Kernel.UNIFORM, Kernel.EPANECHNIKOV]


def test_check_loss_values():
    np.testing.assert_allclose(check_loss([-2.0, 0.0, 3.0], 0.3), [1.4, 0.0, 0.9])


def test_gaussian_value_at_zero():
    spec = SmoothedLossSpec(0.37, 0.1)
    assert smoothed_check(spec, 0.0) == pytest.approx(0.05 * math.sqrt(2 / math.pi), abs=1e-15)
    assert smoothed_check(spec, 0.0) == pytest.approx(0.0398942, abs=1e-7)


def test_median_loss_is_even():
    spec = SmoothedLossSpec(0.5, 0.3)
    u = np.linspace(-2, 2, 41)
    np.testing.assert_allclose(smoothed_check(spec, u), smoothed_check(spec, -u), atol=1e-15)


def test_small_bandwidth_limit():
    spec = SmoothedLossSpec(0.3, 0.01)
    assert smoothed_check(spec, 5.0) == pytest.approx(1.5, abs=1e-6)
    assert numeric_smoothed_check(spec, 5.0) == pytest.approx(1.5, abs=1e-6)


@pytest.mark.parametrize("tau,expected", [(0.5, 0.0), (0.25, 0.25)])
def test_gradient_at_zero(tau, expected):
    assert smoothed_grad_scalar(SmoothedLossSpec(tau, 0.7), 0.0) == pytest.approx(expected, abs=1e-15)


def test_gradient_standard_normal_cdf():
    val = smoothed_grad_scalar(SmoothedLossSpec(0.5, 1.0), 1.0)
    assert val == pytest.approx(stats.norm.cdf(1.0) - 0.5, abs=1e-15)
    assert val == pytest.approx(0.3413447, abs=1e-7)


def test_hessian_values():
    assert smoothed_hess_scalar(SmoothedLossSpec(0.5, 1.0), 0.0) == pytest.approx(0.3989423, abs=1e-7)
    assert smoothed_hess_scalar(SmoothedLossSpec(0.5, 0.5), 0.5) == pytest.approx(0.4839414, abs=1e-7)


@pytest.mark.parametrize("kernel", KERNELS)
def test_hessian_symmetric(kernel):
    spec = SmoothedLossSpec(0.2, 0.4, kernel)
    u = np.linspace(-1, 1, 21)
    np.testing.assert_array_equal(smoothed_hess_scalar(spec, u), smoothed_hess_scalar(spec, -u))


@pytest.mark.parametrize("kernel", KERNELS)
def test_derivatives_match_finite_differences(kernel, rng):
    step = 1e-6
    for _ in range(200):
        spec = SmoothedLossSpec(rng.uniform(0.05, 0.95), rng.uniform(0.05, 2.0), kernel)
        u = rng.uniform(-3, 3)
        if kernel is not Kernel.GAUSSIAN and abs(abs(u) - spec.bandwidth_h) < 1e-4:
            continue  # kink of the compact kernels' second derivative
        fd = (smoothed_check(spec, u + step) - smoothed_check(spec, u - step)) / (2 * step)
        # smoothed_check takes y - fitted, the gradient helper fitted - y
        assert fd == pytest.approx(-smoothed_grad_scalar(spec, -u), abs=1e-6)
        fd2 = (smoothed_grad_scalar(spec, u + step) - smoothed_grad_scalar(spec, u - step)) / (2 * step)
        assert fd2 == pytest.approx(smoothed_hess_scalar(spec, u), abs=1e-6, rel=1e-4)
        assert smoothed_hess_scalar(spec, u) >= 0.0


@pytest.mark.parametrize("kernel", KERNELS)
def test_closed_form_matches_numeric_convolution(kernel):
    for tau, h, u in [(0.5, 0.1, 0.0), (0.3, 0.5, 1.2), (0.8, 0.05, -0.3), (0.1, 1.0, 2.0),
                      (0.6, 0.2, 0.15)]:
        spec = SmoothedLossSpec(tau, h, kernel)
        assert smoothed_check(spec, u) == pytest.approx(numeric_smoothed_check(spec, u), abs=1e-7)


def test_convexity_on_grid():
    spec = SmoothedLossSpec(0.2, 0.3)
    u = np.linspace(-3, 3, 2001)
    v = smoothed_check(spec, u)
    assert np.all(v[:-2] - 2 * v[1:-1] + v[2:] >= -1e-13)
    assert np.all(smoothed_hess_scalar(spec, u) >= 0.0)


def test_default_bandwidth_values():
    assert default_bandwidth(50, 3, 3, 500) == pytest.approx((56 / 500) ** 0.4)
    assert default_bandwidth(50, 3, 3, 1000) == pytest.approx((56 / 1000) ** 0.4)
    # the quoted 0.4164 and 0.3156 are truncations of 0.41657 and 0.31570
    assert default_bandwidth(50, 3, 3, 500) == pytest.approx(0.4164, abs=5e-4)
    assert default_bandwidth(50, 3, 3, 1000) == pytest.approx(0.3156, abs=5e-4)
    assert default_bandwidth(10, 3, 2, 15) == 1.0


def test_spec_validation():
    with pytest.raises(ValueError):
        SmoothedLossSpec(1.0, 0.1)
    with pytest.raises(ValueError):
        SmoothedLossSpec(0.5, 0.0)
    with pytest.raises(ValueError):
        default_bandwidth(10, 3, 2, 0)
