import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spos.errors import InvalidArgumentError
from spos.kernel import KernelConfig, kernel_gradient, kernel_value, median_bandwidth, pairwise_terms

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_kernel_examples():
    assert kernel_value(np.zeros(3), 0.7) == 1.0
    eta = 0.8
    delta = np.array([math.sqrt(2) * eta, 0.0])
    assert kernel_value(delta, eta) == pytest.approx(math.exp(-1), rel=1e-14)
    assert kernel_value([1.0, 1.0], 1.0) == pytest.approx(0.36787944117144233, rel=1e-14)


def test_gradient_examples():
    np.testing.assert_array_equal(kernel_gradient(np.zeros(2), 1.3), np.zeros(2))
    assert kernel_gradient(1.0, 1.0)[0] == pytest.approx(-0.6065306597126334, rel=1e-14)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_non_positive_bandwidth(bad):
    with pytest.raises(InvalidArgumentError):
        kernel_value([1.0], bad)
    with pytest.raises(InvalidArgumentError):
        kernel_gradient([1.0], bad)
    with pytest.raises(InvalidArgumentError):
        KernelConfig(bad)


def test_gradient_matches_finite_difference():
    rng = np.random.default_rng(11)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        delta = rng.normal(size=d)
        eta = float(rng.uniform(0.3, 2.0))
        eps = 1e-6
        fd = np.array(
            [(kernel_value(delta + eps * e, eta) - kernel_value(delta - eps * e, eta)) / (2 * eps) for e in np.eye(d)]
        )
        np.testing.assert_allclose(kernel_gradient(delta, eta), fd, atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 4), elements=finite), st.floats(0.05, 5))
def test_symmetry_bounds_and_gradient_identity(delta, eta):
    k = kernel_value(delta, eta)
    assert k == kernel_value(-delta, eta)
    assert 0 < k <= 1 or (k == 0.0 and np.dot(delta, delta) / eta**2 > 1400)
    np.testing.assert_allclose(kernel_gradient(delta, eta) + delta / eta**2 * k, 0.0, atol=1e-12)


def test_lipschitz_spot_check():
    rng = np.random.default_rng(3)
    eta = 0.9
    bound = math.exp(-0.5) / eta
    for _ in range(1000):
        a, b = rng.normal(scale=2, size=2)
        assert abs(kernel_value(a, eta) - kernel_value(b, eta)) <= bound * abs(a - b) + 1e-15


def test_median_bandwidth_examples():
    assert median_bandwidth(np.array([[0.0], [2.0]])) ** 2 == pytest.approx(4 / (2 * math.log(2)), rel=1e-14)
    assert median_bandwidth(np.ones((5, 3))) == 1.0
    assert median_bandwidth(np.zeros((1, 2))) == 1.0
    with pytest.raises(InvalidArgumentError):
        median_bandwidth(np.zeros((0, 2)))


def test_median_bandwidth_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=(4, 2))
        dists = sorted(float(np.linalg.norm(x[i] - x[j])) for i, j in itertools.combinations(range(4), 2))
        med = (dists[2] + dists[3]) / 2
        assert median_bandwidth(x) == pytest.approx(math.sqrt(med**2 / (2 * math.log(4))), rel=1e-13)


def test_config_resolution():
    x = np.array([[0.0], [2.0]])
    assert KernelConfig().mode == "median_heuristic"
    assert KernelConfig(0.5).mode == "fixed"
    assert KernelConfig(0.5).resolve(x) == 0.5
    assert KernelConfig().resolve(x) == median_bandwidth(x)


def test_pairwise_terms_match_scalar_kernel():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(7, 3))
    eta = 0.6
    kmat, rep = pairwise_terms(x, x, eta)
    for i in range(7):
        expected = np.zeros(3)
        for j in range(7):
            assert kmat[i, j] == pytest.approx(kernel_value(x[i] - x[j], eta), rel=1e-13)
            # gradient wrt the first argument of kappa(x_j, x_i), a repulsive push on x_i
            expected += kernel_gradient(x[j] - x[i], eta)
        np.testing.assert_allclose(rep[i], expected, rtol=1e-12, atol=1e-14)


def test_pairwise_terms_partition_independent():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(10, 2))
    kmat, rep = pairwise_terms(x, x, 0.8)
    k1, r1 = pairwise_terms(x[:4], x, 0.8)
    k2, r2 = pairwise_terms(x[4:], x, 0.8)
    np.testing.assert_array_equal(np.vstack([k1, k2]), kmat)
    np.testing.assert_array_equal(np.vstack([r1, r2]), rep)
