import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from henon_spde.errors import (
    AlignmentError,
    DomainError,
    FactorizationError,
    UnsupportedBranchError,
)
from henon_spde.fbm import (
    HurstParameter,
    StepFunction,
    TimeGrid,
    c_h,
    covariance,
    covariance_matrix,
    fbm_cholesky_factor,
    fbm_paths_cholesky,
    fbm_paths_volterra,
    h_gram,
    inner_product_h,
    k_star_apply,
    k_star_norm_sq,
    sample_fbm_cholesky,
    step_weights,
    volterra_kernel,
    volterra_kernel_dt,
    volterra_weights,
    wiener_integral_step,
)

import oracles

hurst_regular = st.floats(min_value=0.52, max_value=0.97)


def test_c_h_frozen_value():
    assert c_h(0.75) == pytest.approx(oracles.C_H_075, abs=5e-8)


@given(hurst_regular)
def test_c_h_matches_oracle(H):
    assert c_h(H) == pytest.approx(oracles.c_h(H), rel=1e-12)


@pytest.mark.parametrize("h", [0.0, 1.0, -0.2, 1.5])
def test_hurst_domain(h):
    with pytest.raises(DomainError):
        HurstParameter(h)


@pytest.mark.parametrize("H", [0.55, 0.75, 0.9])
@pytest.mark.parametrize("t, s", [(1.0, 0.3), (2.0, 0.01), (0.5, 0.49), (3.0, 2.0)])
def test_volterra_kernel_matches_quadrature(H, t, s):
    assert volterra_kernel(t, s, H) == pytest.approx(oracles.volterra_kernel(t, s, H), rel=1e-9)


@pytest.mark.parametrize("H", [0.6, 0.8])
def test_kernel_square_integral_is_variance(H):
    assert oracles.kernel_square_integral(1.5, H) == pytest.approx(1.5 ** (2 * H), rel=1e-7)
    val, _ = integrate.quad(lambda s: volterra_kernel(1.0, s, H) ** 2, 0, 1, limit=200)
    assert val == pytest.approx(1.0, rel=1e-7)


def test_kernel_derivative_matches_finite_difference():
    H, t, s, d = 0.7, 1.0, 0.4, 1e-6
    fd = (volterra_kernel(t + d, s, H) - volterra_kernel(t - d, s, H)) / (2 * d)
    assert volterra_kernel_dt(t, s, H) == pytest.approx(fd, rel=1e-6)


def test_kernel_rejects_irregular_branch_and_bad_points():
    with pytest.raises(UnsupportedBranchError):
        volterra_kernel(1.0, 0.5, 0.4)
    with pytest.raises(DomainError):
        volterra_kernel(1.0, 1.0, 0.7)
    with pytest.raises(DomainError):
        volterra_kernel(1.0, 0.0, 0.7)


@settings(max_examples=30)
@given(hurst_regular, st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_covariance_symmetric_and_variance(H, s, t):
    assert covariance(s, t, H) == pytest.approx(covariance(t, s, H))
    assert covariance(t, t, H) == pytest.approx(t ** (2 * H), rel=1e-12)
    assert covariance(s, t, H) == pytest.approx(oracles.fbm_covariance(s, t, H), rel=1e-12,
                                                abs=1e-14)


def test_time_grid_validation_and_lookup():
    g = TimeGrid.uniform(2.0, 8)
    assert g.horizon == 2.0 and len(g) == 9 and g.is_uniform()
    assert g.index_of(0.75) == 3
    with pytest.raises(AlignmentError):
        g.index_of(0.3)
    assert g.truncate(1.0).horizon == 1.0
    with pytest.raises(DomainError):
        TimeGrid(np.array([0.0, 1.0, 1.0]))
    with pytest.raises(DomainError):
        TimeGrid(np.array([0.1, 1.0]))
    assert not TimeGrid.graded(1.0, 8, 2.0).is_uniform()


def test_step_function_is_right_closed():
    phi = StepFunction([0.0, 1.0, 2.0], [3.0, -1.0])
    assert phi(0.0) == 0.0
    assert phi(1.0) == 3.0
    assert phi(1.5) == -1.0
    assert phi(2.0) == -1.0
    assert phi(2.1) == 0.0
    with pytest.raises(DomainError):
        StepFunction([0.0, 1.0], [1.0, 2.0])


@pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
def test_gram_matches_brute_force(H):
    edges = np.array([0.0, 0.3, 0.55, 1.0, 1.4])
    G = h_gram(edges, edges, H)
    for i in range(4):
        for j in range(4):
            ref = oracles.rectangle_inner_product(edges[i], edges[i + 1], edges[j], edges[j + 1], H)
            assert G[i, j] == pytest.approx(ref, rel=1e-8, abs=1e-12)


def test_indicator_norm_is_variance():
    for H in (0.6, 0.8):
        phi = StepFunction.indicator(0.0, 1.7)
        assert inner_product_h(phi, phi, H) == pytest.approx(1.7 ** (2 * H), rel=1e-13)


@pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
def test_k_star_of_indicator_is_kernel(H):
    # K*_T 1_[0,T](s) = K(T, s)
    phi = StepFunction.indicator(0.0, 1.0)
    s = np.array([0.05, 0.3, 0.7, 0.95])
    got = k_star_apply(phi, s, H, horizon=1.0)
    ref = [oracles.volterra_kernel(1.0, x, H) for x in s]
    np.testing.assert_allclose(got, ref, rtol=1e-8)


def test_k_star_singular_point_and_outside():
    phi = StepFunction.indicator(0.0, 1.0)
    out = k_star_apply(phi, TimeGrid.uniform(1.0, 4), 0.7)
    assert math.isnan(out[0]) and out[-1] == 0.0


@pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
def test_isometry_on_step_functions(H):
    rng = np.random.default_rng(3)
    breaks = np.concatenate(([0.0], np.sort(rng.uniform(0, 1, 3)), [1.0]))
    phi = StepFunction(breaks, rng.standard_normal(4))
    exact = oracles.step_inner_product(breaks, phi.coefficients, H)
    assert inner_product_h(phi, phi, H) == pytest.approx(exact, rel=1e-8)
    assert k_star_norm_sq(phi, 1.0, H, n_cells=64) == pytest.approx(exact, rel=5e-3)


def test_cholesky_factor_reproduces_covariance():
    g = TimeGrid.uniform(1.0, 32)
    L = fbm_cholesky_factor(g, 0.7)
    np.testing.assert_allclose(L @ L.T, covariance_matrix(g, 0.7), atol=1e-12)


def test_cholesky_failure_names_minor():
    # two nearly coincident nodes make the covariance numerically singular
    g = TimeGrid(np.array([0.0, 0.5, 0.5 + 1e-15, 1.0]))
    with pytest.raises(FactorizationError) as info:
        fbm_cholesky_factor(g, 0.9)
    assert info.value.minor == 2


def test_paths_are_reproducible_and_start_at_zero():
    g = TimeGrid.uniform(1.0, 16)
    a = fbm_paths_cholesky(g, 0.8, 5, 11)
    b = fbm_paths_cholesky(g, 0.8, 5, 11)
    assert np.array_equal(a, b) and np.all(a[:, 0] == 0)
    assert not np.array_equal(a, fbm_paths_cholesky(g, 0.8, 5, 12))
    path = sample_fbm_cholesky(g, 0.8, 11)
    assert path.values[0] == 0.0 and path.seed == 11


def test_volterra_weights_give_exact_node_variance():
    g = TimeGrid.uniform(1.0, 16)
    W = volterra_weights(g, 0.75)
    var = (W**2).sum(axis=1) * (1.0 / 16)
    np.testing.assert_allclose(var[1:], g.nodes[1:] ** 1.5, rtol=1e-6)


def test_volterra_sampler_needs_uniform_grid_and_regular_branch():
    with pytest.raises(DomainError):
        volterra_weights(TimeGrid.graded(1.0, 8, 2.0), 0.7)
    with pytest.raises(UnsupportedBranchError):
        fbm_paths_volterra(TimeGrid.uniform(1.0, 8), 0.3, 10, 0)


def test_wiener_integral_weights():
    g = TimeGrid.uniform(1.0, 4)
    phi = StepFunction([0.25, 0.75, 1.0], [2.0, -1.0])
    w = step_weights(phi, g)
    np.testing.assert_allclose(w, [0, -2, 0, 3, -1])
    path = sample_fbm_cholesky(g, 0.7, 0)
    v = path.values
    assert wiener_integral_step(phi, path) == pytest.approx(2 * (v[3] - v[1]) - (v[4] - v[3]))
    with pytest.raises(AlignmentError):
        step_weights(StepFunction([0.1, 0.5], [1.0]), g)
