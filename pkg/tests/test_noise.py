import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from henon_spde.errors import AlignmentError, DomainError, UnsupportedBranchError
from henon_spde.fbm import TimeGrid
from henon_spde.heat import Grid, lq_norms
from henon_spde.noise import (
    NoisePath,
    SpectralBasis,
    TheoremHypothesisWarning,
    component_seed,
    convolve_paths,
    k_functional,
    k_profile,
    mode_convolution_paths,
    mode_terminal_variance,
    sample_mode_convolution,
    sample_noise_path,
    sample_noise_terminal,
    synthesize,
)

import oracles


def test_basis_counts_and_eigenvalues():
    b = SpectralBasis(2, math.pi, 3)
    assert b.n_components == 7**2
    lam = b.eigenvalues()
    assert lam[0] == 0 and np.all(lam[1:] > 0)
    assert len(b.modes) == 49 and len(np.unique(b.modes, axis=0)) == 49
    with pytest.raises(DomainError):
        SpectralBasis(4, 1.0, 2)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_synthesis_is_orthonormal(N):
    # Parseval: the grid L^2 norm equals the coefficient norm
    b = SpectralBasis(N, 2.0, 3)
    g = Grid(N, 2.0, 16)
    c = np.random.default_rng(N).standard_normal((3, b.n_components))
    fields = synthesize(b, c, g)
    np.testing.assert_allclose(lq_norms(fields, g, 2.0), np.linalg.norm(c, axis=1), rtol=1e-12)


def test_synthesis_single_mode_matches_formula():
    b = SpectralBasis(1, 1.5, 2)
    g = Grid(1, 1.5, 16)
    c = np.zeros(b.n_components)
    idx = 3  # cosine of the second half mode (m = 2)
    c[idx] = 1.0
    x = g.axis()
    ref = math.sqrt(2.0 / 3.0) * np.cos(np.pi * 2 * x / 1.5)
    np.testing.assert_allclose(synthesize(b, c, g)[0], ref, atol=1e-13)


def test_synthesis_needs_resolution_and_same_box():
    with pytest.raises(AlignmentError):
        synthesize(SpectralBasis(1, 1.0, 8), np.zeros(17), Grid(1, 1.0, 16))
    with pytest.raises(AlignmentError):
        synthesize(SpectralBasis(1, 1.0, 2), np.zeros(5), Grid(1, 2.0, 16))


def test_component_seeds_are_distinct_and_stable():
    a = component_seed(1, 1, (2, -3)).generate_state(2)
    assert np.array_equal(a, component_seed(1, 1, (2, -3)).generate_state(2))
    assert not np.array_equal(a, component_seed(1, 2, (2, -3)).generate_state(2))
    assert not np.array_equal(a, component_seed(1, 1, (-3, 2)).generate_state(2))


def test_convolution_of_zero_rate_is_the_path():
    g = TimeGrid.uniform(1.0, 8)
    b = np.random.default_rng(0).standard_normal((3, 9))
    b[:, 0] = 0
    np.testing.assert_allclose(convolve_paths(b, g, 0.0), b)


@given(st.floats(0.01, 50.0), st.floats(0.01, 1.0))
def test_convolution_is_exact_for_linear_paths(lam, slope):
    # for b(t) = a t the exact convolution is a (1 - e^{-lam t}) / lam
    g = TimeGrid.uniform(1.0, 10)
    b = slope * g.nodes
    ref = slope * -np.expm1(-lam * g.nodes) / lam
    np.testing.assert_allclose(convolve_paths(b, g, lam), ref, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("H", [0.6, 0.8])
@pytest.mark.parametrize("lam", [0.0, 1.0, 10.0, 100.0])
def test_terminal_variance_matches_gram_oracle(H, lam):
    assert mode_terminal_variance(lam, 1.0, H) == pytest.approx(
        oracles.mode_variance(lam, 1.0, H, n=4000), rel=1e-4)


def test_gram_oracle_converges_to_terminal_variance():
    exact = mode_terminal_variance(300.0, 1.0, 0.6)
    errs = [abs(oracles.mode_variance(300.0, 1.0, 0.6, n) / exact - 1) for n in (1000, 2000, 4000)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 5e-4


def test_mode_variance_of_sampler():
    g = TimeGrid.uniform(1.0, 256)
    z = mode_convolution_paths(5.0, g, 0.7, 4000, 0)[:, -1]
    assert np.var(z) == pytest.approx(mode_terminal_variance(5.0, 1.0, 0.7), rel=0.08)


def test_mode_convolution_guards():
    g = TimeGrid.uniform(1.0, 4)
    with pytest.raises(UnsupportedBranchError):
        sample_mode_convolution(1.0, g, 0.5, 0)
    with pytest.raises(DomainError):
        sample_mode_convolution(-1.0, g, 0.7, 0)
    m = sample_mode_convolution(2.0, g, 0.7, 3)
    assert m.convolved[0] == 0 and m.fbm.seed == 3


def test_nested_truncations_share_components():
    g = TimeGrid.uniform(0.5, 4)
    small = sample_noise_path(SpectralBasis(2, 1.0, 2), g, 0.8, 5)
    large = sample_noise_path(SpectralBasis(2, 1.0, 4), g, 0.8, 5)
    lookup = {(tuple(m), k): i for i, (m, k) in enumerate(zip(
        large.basis.component_modes(), large.basis.component_kinds()))}
    for i, (m, k) in enumerate(zip(small.basis.component_modes(), small.basis.component_kinds())):
        assert np.array_equal(small.coefficients[:, i], large.coefficients[:, lookup[(tuple(m), k)]])


def test_noise_path_reproducible_and_seed_sensitive():
    g = TimeGrid.uniform(0.5, 4)
    b = SpectralBasis(2, 1.0, 2)
    a = sample_noise_path(b, g, 0.8, 5).coefficients
    assert np.array_equal(a, sample_noise_path(b, g, 0.8, 5).coefficients)
    assert not np.array_equal(a, sample_noise_path(b, g, 0.8, 6).coefficients)


def test_theorem_flag_and_irregular_branch():
    g = TimeGrid.uniform(0.5, 4)
    with pytest.warns(TheoremHypothesisWarning):
        p = sample_noise_path(SpectralBasis(3, 1.0, 1), g, 0.7, 0)
    assert p.outside_theorem and p.manifest()["noise.outside_theorem"]
    with warnings.catch_warnings():
        warnings.simplefilter("error", TheoremHypothesisWarning)
        assert not sample_noise_path(SpectralBasis(3, 1.0, 1), g, 0.8, 0).outside_theorem
    with pytest.raises(UnsupportedBranchError):
        sample_noise_path(SpectralBasis(2, 1.0, 1), g, 0.5, 0)


def test_terminal_sampler_uses_same_streams():
    b = SpectralBasis(2, 1.0, 3)
    a = sample_noise_terminal(b, 1.0, 0.8, 2)
    assert a.coefficients.shape == (2, b.n_components)
    assert np.all(a.coefficients[0] == 0)
    assert np.array_equal(a.coefficients, sample_noise_terminal(b, 1.0, 0.8, 2).coefficients)


def test_k_functional_and_profile():
    b = SpectralBasis(2, 2.0, 3)
    g = Grid(2, 2.0, 16)
    times = TimeGrid.uniform(0.2, 8)
    path = sample_noise_path(b, times, 0.8, 1)
    z = path.on_grid(g)
    kf = k_functional(path, 4.0, 9.6, 0.2, grid=g)
    prof = k_profile(z, 4.0, 9.6, 0.2)
    assert np.all(np.diff(prof) >= 0)
    assert prof[-1] == pytest.approx(kf.total)
    assert kf.total == pytest.approx(kf.sup_q + kf.sup_weighted_r)
    # scaling the noise scales K
    assert k_functional(path.scaled(2.0), 4.0, 9.6, 0.2, grid=g).total == pytest.approx(2 * kf.total)
    with pytest.raises(DomainError):
        k_functional(path, 4.0, 9.6, 0.2)
    with pytest.raises(DomainError):
        k_functional(z, 1.0, 9.6, 0.2)


def test_l2_norms_match_synthesized_fields():
    b = SpectralBasis(3, 1.0, 3)
    g = Grid(3, 1.0, 16)
    path = sample_noise_path(b, TimeGrid.uniform(0.3, 3), 0.8, 0)
    np.testing.assert_allclose(path.l2_norms(), lq_norms(path.on_grid(g).values, g, 2.0),
                               rtol=1e-12)
    assert isinstance(path, NoisePath)
