import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triangulation.exceptions import DomainError, NoValidModelError
from triangulation.kernel import (
    KernelConfig,
    discrimination_factor,
    gamma_partials,
    gaussian_kernel,
    is_degenerate,
    naive_triangulate,
    theorem1_diagnostics,
    triangulate,
    weights,
)

finite_beta = st.floats(-3, 3, allow_nan=False)


def test_kernel_values():
    # 1 / (0.1 sqrt(pi)) and that times e^-4
    assert gaussian_kernel(0.0, 0.1) == pytest.approx(5.6418958354775628, rel=1e-14)
    assert gaussian_kernel(0.2, 0.1) == pytest.approx(0.10333492677046034, rel=1e-12)


@given(finite_beta, st.floats(0.01, 2))
def test_kernel_even(x, a):
    assert gaussian_kernel(-x, a) == gaussian_kernel(x, a)


def test_kernel_rejects_bad_a():
    with pytest.raises(DomainError):
        gaussian_kernel(0.0, 0.0)
    with pytest.raises(DomainError):
        KernelConfig(a=-1)
    with pytest.raises(DomainError):
        KernelConfig(lam=-0.1)


def test_weights_scenario_example():
    w = weights([0.0, 0.36, 0.71], KernelConfig(a=0.1, lam=0.0))
    e2, e3 = math.exp(-12.96), math.exp(-50.41)
    s = 1 + e2 + e3
    np.testing.assert_allclose(w, [1 / s, e2 / s, e3 / s], rtol=1e-12)
    assert w[1] == pytest.approx(2.3526e-6, rel=1e-4)
    assert w[2] == pytest.approx(1.2834e-22, rel=1e-4)


@given(st.floats(-2, 2), st.integers(1, 6))
def test_equal_betas_equal_weights(b, K):
    np.testing.assert_allclose(weights([b] * K, KernelConfig(a=0.5, lam=0.0)), 1 / K, rtol=1e-12)


@given(st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=6), st.floats(0.05, 1))
def test_lambda_equal_to_mass_halves_weights(betas, a):
    w0 = weights(betas, KernelConfig(a=a, lam=0.0))
    mass = float(np.sum(gaussian_kernel(np.array(betas), a)))
    np.testing.assert_allclose(weights(betas, KernelConfig(a=a, lam=mass)), w0 / 2, rtol=1e-12)


@given(st.lists(finite_beta, min_size=1, max_size=6), st.floats(0.01, 1), st.floats(0, 1))
def test_weights_sum(betas, a, lam):
    w = weights(betas, KernelConfig(a=a, lam=lam))
    assert np.all(w >= 0)
    assert w.sum() <= 1 + 1e-14
    mass = float(np.sum(gaussian_kernel(np.array(betas), a)))
    if lam > 1e-12 * mass:
        assert w.sum() < 1
    else:
        assert w.sum() == pytest.approx(1.0, rel=1e-12)


def test_weights_survive_kernel_underflow():
    # raw kernel underflows to 0 for every model; log-space weights stay finite
    w = weights([30.0, 31.0], KernelConfig(a=0.1, lam=0.0))
    assert np.all(np.isfinite(w)) and w.sum() == pytest.approx(1.0)
    assert w[0] == pytest.approx(1.0)


def test_lambda_unresolved():
    with pytest.raises(DomainError):
        weights([0.0], KernelConfig())
    assert KernelConfig().resolved(200).lam == 1 / 200


def test_triangulate_examples():
    assert triangulate([0.0], [3.7], KernelConfig(lam=0.0)) == 3.7
    e = math.exp(-4)
    assert triangulate([0, 0.2], [1, 2], KernelConfig(a=0.1, lam=0.0)) == pytest.approx((1 + 2 * e) / (1 + e), rel=1e-14)
    assert (1 + 2 * e) / (1 + e) == pytest.approx(1.0179862, abs=1e-7)


@given(st.floats(-10, 10), st.floats(0, 5))
def test_symmetric_bias_cancels(theta, b):
    got = triangulate([0, 0.2, 0.2], [theta, theta + b, theta - b], KernelConfig(a=0.1, lam=0.0))
    assert got == pytest.approx(theta, abs=1e-12 * (1 + abs(theta) + b))


def test_length_mismatch():
    with pytest.raises(DomainError):
        triangulate([0, 1], [1], KernelConfig(lam=0))
    with pytest.raises(DomainError):
        triangulate([], [], KernelConfig(lam=0))


def test_naive():
    assert naive_triangulate([0, 5], [3, 9], tol=1e-9) == 3
    assert naive_triangulate([0, 0], [2, 4], tol=0) == 3
    with pytest.raises(NoValidModelError):
        naive_triangulate([1, 1], [1, 2], tol=1e-9)


def test_degenerate_flag():
    assert is_degenerate([1.5, 2.0, -1.2], KernelConfig(a=0.1, lam=1 / 5000))
    assert not is_degenerate([0.0, 2.0], KernelConfig(a=0.1, lam=1 / 5000))


def _fd(betas, psis, cfg, h=1e-6):
    x = np.concatenate([betas, psis]).astype(float)
    K = len(betas)
    out = np.empty(2 * K)
    for j in range(2 * K):
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        out[j] = (triangulate(up[:K], up[K:], cfg) - triangulate(dn[:K], dn[K:], cfg)) / (2 * h)
    return out


def test_gamma_matches_finite_differences():
    cfg = KernelConfig(a=0.1, lam=0.01)
    g = gamma_partials([0.1, 0.3], [1.0, 2.0], cfg)
    fd = _fd(np.array([0.1, 0.3]), np.array([1.0, 2.0]), cfg)
    np.testing.assert_allclose(g, fd, rtol=1e-6)
    np.testing.assert_allclose(g, [-0.08873, -0.02011, 0.99487, 0.000334], rtol=1e-3)


@given(st.lists(st.floats(-0.6, 0.6), min_size=1, max_size=5), st.floats(0.1, 1), st.floats(0, 0.1))
@settings(max_examples=50)
def test_gamma_structure(betas, a, lam):
    betas = np.array(betas)
    psis = np.linspace(-1, 2, betas.size)
    cfg = KernelConfig(a=a, lam=lam)
    g = gamma_partials(betas, psis, cfg)
    K = betas.size
    np.testing.assert_array_equal(g[K:], weights(betas, cfg))
    zero = np.array(betas) == 0
    assert np.all(g[:K][zero] == 0)


def test_discrimination_factor_constant():
    assert discrimination_factor(0.2, 0.1, 2) == pytest.approx(1 + math.exp(4) / 2, rel=1e-14)
    assert discrimination_factor(0.2, 0.1, 2) == pytest.approx(28.3, rel=5e-3)
    assert discrimination_factor(0.02, 0.01, 2) == pytest.approx(discrimination_factor(0.2, 0.1, 2), rel=1e-12)


def test_robustness_bound_example():
    d = theorem1_diagnostics([0, 0.3], [5.0, 6.0], theta=5.0, correct_indices=[0])
    # tight case: equality up to rounding, checked exactly in the acceptance suite
    assert d.attained <= d.bound * (1 + 1e-12)
    # single incorrect model: bound is attained and D_a hits its lower bound
    assert d.attained == pytest.approx(d.bound, rel=1e-12)
    assert d.lower_bound_Da == pytest.approx(d.D_a, rel=1e-12)
    with pytest.raises(DomainError):
        theorem1_diagnostics([0, 0.3], [1, 2], 1, correct_indices=[])
