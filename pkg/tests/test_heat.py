import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from henon_spde.errors import AlignmentError, DomainError, PreconditionError
from henon_spde.heat import (
    Field,
    Grid,
    SingularWeight,
    check_q12,
    gaussian_kernel,
    hardy_henon_nonlinearity,
    heat_semigroup,
    lq_norm,
    s_gamma_apply,
    smoothing_exponent,
    smoothing_exponent_probe,
)

import oracles


def random_field(grid, seed):
    rng = np.random.default_rng(seed)
    return Field(grid, rng.standard_normal(grid.shape))


@pytest.mark.parametrize("N, M", [(1, 64), (2, 32), (3, 16)])
def test_semigroup_property(N, M):
    g = Grid(N, 5.0, M)
    f = random_field(g, N)
    a = heat_semigroup(heat_semigroup(f, 0.3), 0.45)
    b = heat_semigroup(f, 0.75)
    assert np.max(np.abs(a.values - b.values)) <= 1e-12


@pytest.mark.parametrize("N", [1, 2, 3])
def test_constants_are_preserved(N):
    g = Grid(N, 3.0, 16)
    f = Field.constant(g, 2.5)
    assert np.max(np.abs(heat_semigroup(f, 1.7).values - 2.5)) <= 1e-12


@pytest.mark.parametrize("N, s, t", [(1, 0.5, 0.7), (2, 0.4, 0.3), (3, 1.0, 0.5)])
def test_gaussian_evolution_oracle(N, s, t):
    # e^{t Delta} G_s = G_{s+t} on a box wide enough that the tails vanish
    g = Grid(N, 12.0, 64 if N < 3 else 32)
    G = Field(g, oracles.gaussian(g.coordinates(), s, N))
    out = heat_semigroup(G, t).values
    ref = oracles.gaussian(g.coordinates(), s + t, N)
    assert np.max(np.abs(out - ref)) / np.max(ref) <= 1e-6


@pytest.mark.parametrize("N, q", [(1, 2.0), (2, 3.0), (3, 1.5), (2, 4.0)])
def test_gaussian_lq_norm_closed_form(N, q):
    g = Grid(N, 10.0, 128 if N < 3 else 64)
    s = 0.5
    assert lq_norm(gaussian_kernel(g, s), q) == pytest.approx(oracles.gaussian_lq_norm(s, N, q),
                                                              rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0), st.sampled_from([1.5, 2.0, 4.0, 8.0]))
def test_semigroup_contracts_lq(seed, t, q):
    g = Grid(2, 4.0, 16)
    f = random_field(g, seed)
    assert lq_norm(heat_semigroup(f, t), q) <= lq_norm(f, q) * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_semigroup_preserves_mean(seed, t):
    g = Grid(3, 2.0, 8)
    f = random_field(g, seed)
    assert heat_semigroup(f, t).mean() == pytest.approx(f.mean(), abs=1e-13)


def test_grid_validation():
    with pytest.raises(DomainError):
        Grid(4, 1.0, 16)
    with pytest.raises(DomainError):
        Grid(2, 1.0, 24)
    with pytest.raises(DomainError):
        Grid(3, 1.0, 256)  # over the point budget
    with pytest.raises(DomainError):
        Grid(2, -1.0, 16)
    g = Grid(2, 4.0, 16)
    assert g.rescaled(2).half_width == 2.0
    assert g.axis()[0] == -4.0 and g.spacing == 0.5


def test_weight_is_regularized_at_origin():
    g = Grid(2, 1.0, 16)
    w = SingularWeight.build(g, 1.0)
    assert np.max(w.values) == pytest.approx(1.0 / (0.5 * g.spacing))
    with pytest.raises(DomainError):
        SingularWeight.build(g, 0.0)
    assert np.all(SingularWeight.build(g, 0.0, validation=True).values == 1.0)


def test_nonlinearity_is_odd_and_weighted():
    g = Grid(1, 2.0, 16)
    f = random_field(g, 0)
    w = SingularWeight.build(g, 0.5)
    a = hardy_henon_nonlinearity(f, w, 2.5).values
    b = hardy_henon_nonlinearity(-f, w, 2.5).values
    np.testing.assert_allclose(a, -b)
    np.testing.assert_allclose(a, w.values * np.abs(f.values) ** 1.5 * f.values)
    with pytest.raises(AlignmentError):
        hardy_henon_nonlinearity(f, SingularWeight.build(Grid(1, 3.0, 16), 0.5), 2.0)


def test_s_gamma_needs_positive_time():
    g = Grid(2, 2.0, 16)
    with pytest.raises(DomainError):
        s_gamma_apply(random_field(g, 0), SingularWeight.build(g, 1.0), 0.0)


@pytest.mark.parametrize("N, gamma, q1, q2", [(3, 1.0, 4.8, 4.0), (2, 0.5, 2.0, 4.0),
                                               (3, 1.0, 4.8, 9.6)])
def test_admissible_tuples(N, gamma, q1, q2):
    check_q12(N, gamma, q1, q2)


@pytest.mark.parametrize("N, gamma, q1, q2", [(2, 1.5, 1.5, 4.0), (2, 0.0, 4.0, 2.0),
                                               (3, 1.0, 1.0, 2.0), (2, 0.1, 8.0, 2.0)])
def test_inadmissible_tuples(N, gamma, q1, q2):
    with pytest.raises(PreconditionError):
        check_q12(N, gamma, q1, q2)


def test_smoothing_exponent_formula():
    assert smoothing_exponent(3, 1.0, 4.8, 4.0) == pytest.approx(0.4375)
    assert smoothing_exponent(3, 1.0, 4.8, 9.6) == pytest.approx(0.65625)


def test_probe_window_is_enforced():
    g = Grid(2, 4.0, 32)
    with pytest.raises(PreconditionError):
        smoothing_exponent_probe(0.5, 4.0, 4.0, g, t_range=(1e-6, 0.1))


def test_probe_recovers_pure_gamma_slope():
    g = Grid(2, 10.0, 64)
    res = smoothing_exponent_probe(0.5, 4.0, 4.0, g, probe_count=20, seed=1)
    assert res.relative_error <= 0.1
    assert res.C0 > 0 and math.isfinite(res.C0)
