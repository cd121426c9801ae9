"""Cylindrical fBm on a periodic trigonometric basis and the stochastic convolution.

Each real basis function of the box [-L, L)^N is driven by its own fBm
b_m(t).  The heat semigroup is diagonal on this basis, so the stochastic
convolution Z(t) = int_0^t e^{(t-s)Delta} dB(s) reduces to scalar
convolutions z_m(t) = int_0^t exp(-lambda_m (t-s)) db_m(s).
"""

from dataclasses import dataclass, field, replace
import itertools
import math
import warnings

import numpy as np
import scipy.fft as sfft
from scipy import integrate

from .errors import AlignmentError, DomainError, UnsupportedBranchError
from .fbm import FbmPath, TimeGrid, as_hurst, fbm_cholesky_factor
from .heat import Trajectory, fft_workers, lq_norms

_SEED_OFFSET = 2**31
CONST, COS, SIN = 0, 1, 2


class TheoremHypothesisWarning(UserWarning):
    """Parameters are computable but outside the local well-posedness hypotheses."""


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Orthonormal trigonometric basis of [-L, L)^N truncated at |m|_inf <= m_max.

    Components are ordered as: the constant mode, then a cosine and a sine
    for every wavevector in the positive half-space (first nonzero entry > 0).
    """

    dimension: int
    half_width: float
    m_max: int
    half_modes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise DomainError("dimension must be 1, 2 or 3")
        if self.m_max < 0 or not self.half_width > 0:
            raise DomainError("need m_max >= 0 and L > 0")
        rng = range(-self.m_max, self.m_max + 1)
        half = []
        for m in itertools.product(rng, repeat=self.dimension):
            nz = next((c for c in m if c != 0), 0)
            if nz > 0:
                half.append(m)
        arr = np.array(half, dtype=np.int64).reshape(-1, self.dimension)
        object.__setattr__(self, "half_modes", arr)

    @property
    def volume(self):
        return (2.0 * self.half_width) ** self.dimension

    @property
    def modes(self):
        """All wavevectors with |m|_inf <= m_max (closed under negation)."""
        zero = np.zeros((1, self.dimension), dtype=np.int64)
        return np.concatenate([zero, self.half_modes, -self.half_modes])

    @property
    def n_components(self):
        return 1 + 2 * len(self.half_modes)

    def component_modes(self):
        zero = np.zeros((1, self.dimension), dtype=np.int64)
        return np.concatenate([zero, np.repeat(self.half_modes, 2, axis=0)])

    def component_kinds(self):
        kinds = np.empty(self.n_components, dtype=np.int64)
        kinds[0] = CONST
        kinds[1::2] = COS
        kinds[2::2] = SIN
        return kinds

    def eigenvalues(self):
        """lambda_m = |pi m / L|^2 per component."""
        m = self.component_modes()
        return (np.pi / self.half_width) ** 2 * np.sum(m.astype(float) ** 2, axis=1)


def component_seed(seed, kind, mode):
    """Independent stream for one basis component, stable across truncations."""
    entropy = [int(seed), int(kind)] + [int(c) + _SEED_OFFSET for c in mode]
    return np.random.SeedSequence(entropy)


def convolve_paths(b, times, lam):
    """z = int exp(-lam (t - s)) db(s) for paths b (..., n_times).

    Exponential product integration against the piecewise-linear interpolant
    of b:  z_{j+1} = e^{-lam dt} z_j + (b_{j+1} - b_j) (1 - e^{-lam dt}) / (lam dt).
    This is the integration-by-parts form b - lam int e^{-lam(t-s)} b ds with the
    time integral done exactly on each cell.
    """
    b = np.asarray(b, dtype=float)
    lam = np.asarray(lam, dtype=float)
    dt = np.diff(times.nodes)
    z = np.zeros_like(b)
    for j, d in enumerate(dt):
        x = lam * d
        decay = np.exp(-x)
        phi1 = np.where(x > 0, -np.expm1(-x) / np.where(x > 0, x, 1.0), 1.0)
        z[..., j + 1] = decay * z[..., j] + (b[..., j + 1] - b[..., j]) * phi1
    return z


@dataclass(frozen=True, eq=False)
class ModeNoise:
    eigenvalue: float
    fbm: FbmPath
    convolved: np.ndarray


def sample_mode_convolution(lam, grid, h, seed):
    """z(t) = int_0^t exp(-lam (t - s)) db(s) for a single fBm b."""
    from .fbm import sample_fbm_cholesky

    h = as_hurst(h)
    if not h.regular:
        raise UnsupportedBranchError("mode convolution by parts needs H > 1/2")
    if lam < 0:
        raise DomainError("eigenvalue must be nonnegative")
    if len(grid) < 2:
        raise DomainError("empty time grid")
    path = sample_fbm_cholesky(grid, h, seed)
    return ModeNoise(float(lam), path, convolve_paths(path.values, grid, lam))


def mode_convolution_paths(lam, grid, h, n_paths, seed):
    """Array (n_paths, n_times) of independent z paths for one eigenvalue."""
    from .fbm import fbm_paths_cholesky

    h = as_hurst(h)
    if not h.regular:
        raise UnsupportedBranchError("mode convolution by parts needs H > 1/2")
    b = fbm_paths_cholesky(grid, h, n_paths, seed)
    return convolve_paths(b, grid, lam)


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Spectral coefficients z_m(t_j) of the truncated stochastic convolution."""

    basis: SpectralBasis
    times: TimeGrid
    coefficients: np.ndarray  # (n_times, n_components)
    hurst: float
    seed: int
    outside_theorem: bool = False

    def l2_norms(self):
        """Exact L^2(box) norm of Z(t_j) by Parseval."""
        return np.sqrt(np.sum(self.coefficients**2, axis=1))

    def scaled(self, c):
        return replace(self, coefficients=self.coefficients * c)

    def on_grid(self, grid, check_real=True):
        """Synthesize Z(t_j) as fields on ``grid``."""
        return Trajectory(self.times, grid, synthesize(self.basis, self.coefficients, grid,
                                                        check_real=check_real))

    def manifest(self):
        return {
            "noise.dimension": self.basis.dimension,
            "noise.half_width": self.basis.half_width,
            "noise.m_max": self.basis.m_max,
            "noise.components": self.basis.n_components,
            "noise.hurst": self.hurst,
            "noise.seed": self.seed,
            "noise.time_nodes": len(self.times),
            "noise.horizon": self.times.horizon,
            "noise.outside_theorem": self.outside_theorem,
        }


def synthesize(basis, coefficients, grid, check_real=True, chunk=16):
    """Real-space fields from real-basis coefficients via an inverse FFT.

    Component (a cos + b sin)(pi m.x / L) becomes the conjugate pair
    (a - ib)/2 at m and (a + ib)/2 at -m.
    """
    if grid.dimension != basis.dimension or not math.isclose(grid.half_width, basis.half_width):
        raise AlignmentError("grid and spectral basis describe different boxes")
    M = grid.points
    if 2 * basis.m_max >= M:
        raise AlignmentError(f"m_max = {basis.m_max} is not resolved by {M} points per axis")
    coefficients = np.atleast_2d(coefficients)
    n_t = coefficients.shape[0]
    V = basis.volume
    hm = basis.half_modes
    # x = -L + h i gives exp(i pi m.x / L) = (-1)^{sum m} exp(2 pi i m.i / M)
    sign_h = np.where(hm.sum(axis=1) % 2 == 0, 1.0, -1.0)
    idx_pos = np.ravel_multi_index(tuple((hm % M).T), grid.shape) if hm.size else np.empty(0, int)
    idx_neg = np.ravel_multi_index(tuple((-hm % M).T), grid.shape) if hm.size else np.empty(0, int)
    out = np.empty((n_t,) + grid.shape)
    amp = math.sqrt(2.0 / V) / 2.0
    for start in range(0, n_t, chunk):
        c = coefficients[start:start + chunk]
        k = c.shape[0]
        spec = np.zeros((k, M**grid.dimension), dtype=complex)
        spec[:, 0] = c[:, 0] / math.sqrt(V)
        if hm.size:
            a = c[:, 1::2]
            b = c[:, 2::2]
            val = amp * (a - 1j * b) * sign_h
            spec[:, idx_pos] += val
            spec[:, idx_neg] += np.conj(val)
        spec = spec.reshape((k,) + grid.shape)
        field = sfft.ifftn(spec, axes=grid.axes, workers=fft_workers()) * M**grid.dimension
        if check_real:
            scale = max(np.max(np.abs(field.real)), 1e-300)
            resid = np.max(np.abs(field.imag))
            if resid > 1e-10 * scale:
                raise AlignmentError(f"synthesized field not real: residue {resid:.3e}")
        out[start:start + k] = field.real
    return out


def theorem_hurst_bound(dimension):
    return max(0.5, dimension / 4.0)


def sample_noise_path(basis, grid, h, seed, chunk=2048):
    """Sample the truncated stochastic convolution on the time grid.

    Each component has its own generator seeded from (seed, kind, mode), so
    the components shared by two truncation levels are bitwise identical.
    """
    h = as_hurst(h)
    if not h.regular:
        raise UnsupportedBranchError("cylindrical noise sampling needs H > 1/2")
    outside = h.h <= theorem_hurst_bound(basis.dimension)
    if outside:
        warnings.warn(
            f"H = {h.h} <= max(1/2, N/4) = {theorem_hurst_bound(basis.dimension)}: "
            "outside theorem hypotheses",
            TheoremHypothesisWarning,
            stacklevel=2,
        )
    L = fbm_cholesky_factor(grid, h)
    n_pos = L.shape[0]
    kinds = basis.component_kinds()
    modes = basis.component_modes()
    lam = basis.eigenvalues()
    n_c = basis.n_components
    coeffs = np.zeros((len(grid), n_c))
    for start in range(0, n_c, chunk):
        stop = min(start + chunk, n_c)
        xi = np.empty((n_pos, stop - start))
        for col, c in enumerate(range(start, stop)):
            rng = np.random.default_rng(component_seed(seed, kinds[c], modes[c]))
            xi[:, col] = rng.standard_normal(n_pos)
        b = np.zeros((stop - start, len(grid)))
        b[:, 1:] = (L @ xi).T
        coeffs[:, start:stop] = convolve_paths(b, grid, lam[start:stop]).T
    return NoisePath(basis, grid, coeffs, h.h, seed, outside)


def mode_terminal_variance(lam, horizon, h):
    """Exact Var z_lam(T) for z_lam(T) = int_0^T exp(-lam (T - s)) db(s).

    Folding the double integral of |s - r|^{2H-2} along the diagonal gives
    H (2H - 1) int_0^T y^{2H-2} e^{-lam y} (1 - e^{-2 lam (T - y)}) / lam dy,
    evaluated with an algebraic end-point weight; it equals T^{2H} at lam = 0.
    """
    h = as_hurst(h)
    if not h.regular:
        raise UnsupportedBranchError("terminal variance formula needs H > 1/2")
    H, T = h.h, float(horizon)
    lam = float(lam)
    if lam < 0:
        raise DomainError("eigenvalue must be nonnegative")
    if lam == 0:
        return T ** (2 * H)

    def f(y):
        return math.exp(-lam * y) * -math.expm1(-2.0 * lam * (T - y)) / lam

    # e^{-lam y} is below 1e-22 past y = 50 / lam
    cut = min(T, 50.0 / lam)
    val, _ = integrate.quad(f, 0.0, cut, weight="alg", wvar=(2 * H - 2, 0.0),
                            epsabs=0.0, epsrel=1e-11, limit=200)
    return H * (2 * H - 1) * val


def sample_noise_terminal(basis, horizon, h, seed):
    """Exact draw of the truncated Z(T) at a single time T.

    Each coefficient is sqrt(Var z_m(T)) times the first normal of its
    component stream, so the time grid never limits how well high modes are
    resolved.  Returned as a NoisePath on the two-node grid {0, T}.
    """
    h = as_hurst(h)
    if not h.regular:
        raise UnsupportedBranchError("cylindrical noise sampling needs H > 1/2")
    outside = h.h <= theorem_hurst_bound(basis.dimension)
    if outside:
        warnings.warn(
            f"H = {h.h} <= max(1/2, N/4) = {theorem_hurst_bound(basis.dimension)}: "
            "outside theorem hypotheses",
            TheoremHypothesisWarning,
            stacklevel=2,
        )
    lam = basis.eigenvalues()
    distinct, inverse = np.unique(lam, return_inverse=True)
    sd = np.sqrt([mode_terminal_variance(x, horizon, h) for x in distinct])[inverse]
    kinds = basis.component_kinds()
    modes = basis.component_modes()
    xi = np.array([
        np.random.default_rng(component_seed(seed, k, m)).standard_normal()
        for k, m in zip(kinds, modes)
    ])
    coeffs = np.zeros((2, basis.n_components))
    coeffs[1] = sd * xi
    return NoisePath(basis, TimeGrid(np.array([0.0, float(horizon)])), coeffs, h.h, seed, outside)


@dataclass
class KFunctional:
    sup_q: float
    sup_weighted_r: float
    total: float
    sigma: float
    q: float
    r: float


def _k_parts(z, q, r, sigma):
    if not (q > 1 and r > 1):
        raise DomainError("K functional needs q, r > 1")
    if not sigma > 0:
        raise DomainError("K functional needs sigma > 0")
    t = z.times.nodes
    nq = lq_norms(z.values, z.grid, q)
    nr = lq_norms(z.values, z.grid, r)
    weighted = np.where(t > 0, t**sigma, 0.0) * nr
    return nq, weighted


def k_functional(z, q, r, sigma, grid=None):
    """sup_t ||Z(t)||_q + sup_t t^sigma ||Z(t)||_r over the nodes of ``z``.

    ``z`` is a Trajectory, or a NoisePath together with the grid on which
    to synthesize it.
    """
    if isinstance(z, NoisePath):
        if grid is None:
            raise DomainError("a grid is needed to take L^q norms of a NoisePath")
        z = z.on_grid(grid)
    nq, weighted = _k_parts(z, q, r, sigma)
    a, b = float(nq.max()), float(weighted.max())
    return KFunctional(a, b, a + b, sigma, q, r)


def k_profile(z, q, r, sigma, grid=None):
    """K(t_j) for every nested horizon t_j (running suprema)."""
    if isinstance(z, NoisePath):
        z = z.on_grid(grid)
    nq, weighted = _k_parts(z, q, r, sigma)
    return np.maximum.accumulate(nq) + np.maximum.accumulate(weighted)
