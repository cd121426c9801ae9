"""Periodic spatial grids, L^q norms, the heat semigroup and the weighted operator.

The box [-L, L)^N with M points per axis stands in for R^N.  The semigroup is
applied spectrally: Fourier mode k is multiplied by exp(-|k|^2 t), which is
exact on the discrete mode set.
"""

from dataclasses import dataclass
import os

import numpy as np
import scipy.fft as sfft

from .errors import AlignmentError, DomainError, PreconditionError
from .fbm import TimeGrid

POINT_BUDGET = 2**22


def fft_workers():
    """Worker count for spectral transforms, capped by HENON_SPDE_THREADS."""
    env = os.environ.get("HENON_SPDE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class Grid:
    dimension: int
    half_width: float
    points: int
    budget: int = POINT_BUDGET

    def __post_init__(self):
        N, M = int(self.dimension), int(self.points)
        if N not in (1, 2, 3):
            raise DomainError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if M < 8 or M & (M - 1):
            raise DomainError(f"points per axis must be a power of two >= 8, got {M}")
        if not self.half_width > 0:
            raise DomainError("box half width must be positive")
        if M**N > self.budget:
            raise DomainError(f"{M}^{N} grid points exceed the budget of {self.budget}")
        object.__setattr__(self, "dimension", N)
        object.__setattr__(self, "points", M)
        object.__setattr__(self, "half_width", float(self.half_width))

    @property
    def spacing(self):
        return 2.0 * self.half_width / self.points

    @property
    def shape(self):
        return (self.points,) * self.dimension

    @property
    def cell_volume(self):
        return self.spacing**self.dimension

    @property
    def volume(self):
        return (2.0 * self.half_width) ** self.dimension

    @property
    def axes(self):
        return tuple(range(-self.dimension, 0))

    def axis(self):
        return -self.half_width + self.spacing * np.arange(self.points)

    def coordinates(self):
        return np.meshgrid(*([self.axis()] * self.dimension), indexing="ij")

    def radius(self):
        return np.sqrt(sum(x**2 for x in self.coordinates()))

    def wavenumbers(self, real=False):
        k = 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.spacing)
        ks = [k] * self.dimension
        if real:
            ks[-1] = 2.0 * np.pi * np.fft.rfftfreq(self.points, d=self.spacing)
        return np.meshgrid(*ks, indexing="ij")

    def eigenvalues(self, real=True):
        """-Laplacian symbol |k|^2 in (r)fft layout; k = pi m / L."""
        return sum(k**2 for k in self.wavenumbers(real=real))

    def rescaled(self, factor):
        return Grid(self.dimension, self.half_width / factor, self.points, self.budget)


def _check_same_grid(*grids):
    g0 = grids[0]
    for g in grids[1:]:
        if g != g0:
            raise AlignmentError(f"grids differ: {g0} vs {g}")


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise AlignmentError(f"values of shape {v.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid, f):
        return cls(grid, f(*grid.coordinates()))

    def __add__(self, other):
        _check_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self.grid, other.grid)
        return Field(self.grid, self.values - other.values)

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __mul__(self, c):
        return Field(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def mean(self):
        return float(self.values.mean())


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fields on a common spatial grid at the nodes of a time grid."""

    times: TimeGrid
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.times),) + self.grid.shape:
            raise AlignmentError("trajectory values must be (n_times, *grid.shape)")

    @classmethod
    def zeros(cls, times, grid):
        return cls(times, grid, np.zeros((len(times),) + grid.shape))

    def field(self, j):
        return Field(self.grid, self.values[j])

    def norms(self, q):
        return lq_norms(self.values, self.grid, q)

    def aligned_with(self, other):
        if self.grid != other.grid:
            raise AlignmentError("trajectories live on different spatial grids")
        if len(self.times) != len(other.times) or not np.allclose(
            self.times.nodes, other.times.nodes, rtol=1e-12, atol=0
        ):
            raise AlignmentError("trajectories live on different time grids")


@dataclass(frozen=True, eq=False)
class SingularWeight:
    """Regularized Hardy weight max(|x|, h/2)^(-gamma)."""

    grid: Grid
    gamma: float
    values: np.ndarray

    @classmethod
    def build(cls, grid, gamma, validation=False):
        lo = 0.0 if validation else np.nextafter(0.0, 1.0)
        if not (lo <= gamma < 2.0):
            raise DomainError(
                f"gamma must lie in (0, 2) (0 allowed in validation mode), got {gamma}"
            )
        r = np.maximum(grid.radius(), 0.5 * grid.spacing)
        return cls(grid, float(gamma), r ** (-float(gamma)))


def lq_norms(values, grid, q):
    """L^q norms over the trailing spatial axes (rectangle rule)."""
    if q != np.inf and not q > 1:
        raise DomainError(f"L^q norms need q > 1, got {q}")
    axes = grid.axes
    if q == np.inf:
        return np.max(np.abs(values), axis=axes)
    return (grid.cell_volume * np.sum(np.abs(values) ** q, axis=axes)) ** (1.0 / q)


def lq_norm(f, q):
    return float(lq_norms(f.values, f.grid, q))


def _heat_multiply(values, grid, t):
    # values (..., *shape); t scalar or array broadcasting over leading axes
    lam = grid.eigenvalues(real=True)
    t = np.asarray(t, dtype=float)
    mult = np.exp(-lam * t.reshape(t.shape + (1,) * grid.dimension))
    spec = sfft.rfftn(values, axes=grid.axes, workers=fft_workers())
    return sfft.irfftn(spec * mult, s=grid.shape, axes=grid.axes, workers=fft_workers())


def heat_semigroup(f, t):
    """e^{t Delta} f, exact on the discrete Fourier modes."""
    if t < 0:
        raise DomainError("heat semigroup needs t >= 0")
    if t == 0:
        return Field(f.grid, f.values.copy())
    return Field(f.grid, _heat_multiply(f.values, f.grid, t))


def s_gamma_apply(f, w, t):
    """S_gamma(t) f = e^{t Delta}(w f) for t > 0."""
    if not t > 0:
        raise DomainError("S_gamma(t) is applied only for t > 0")
    _check_same_grid(f.grid, w.grid)
    return Field(f.grid, _heat_multiply(w.values * f.values, f.grid, t))


def hardy_henon_nonlinearity(f, w, p):
    """Pointwise w |f|^{p-1} f."""
    _check_same_grid(f.grid, w.grid)
    return Field(f.grid, w.values * _power_odd(f.values, p))


def _power_odd(v, p):
    return np.abs(v) ** (p - 1.0) * v


def gaussian_kernel(grid, t):
    """Heat kernel G_t sampled on the grid, centred at the origin."""
    N = grid.dimension
    return Field(grid, (4.0 * np.pi * t) ** (-N / 2.0) * np.exp(-grid.radius() ** 2 / (4.0 * t)))


def check_q12(dimension, gamma, q1, q2):
    """Raise PreconditionError unless 1/q2 < gamma/N + 1/q1 < 1 and 1 < q1, q2.

    For gamma = 0 the admissible range is instead 1 < q1 <= q2.
    """
    if not (q1 > 1 and q2 > 1):
        raise PreconditionError(f"need 1 < q1, q2 (got q1={q1}, q2={q2})")
    if gamma == 0:
        if q2 < q1:
            raise PreconditionError(f"for gamma = 0 need q1 <= q2 (got q1={q1}, q2={q2})")
        return
    mid = gamma / dimension + 1.0 / q1
    if not 1.0 / q2 < mid:
        raise PreconditionError(f"1/q2 < gamma/N + 1/q1 fails: {1.0 / q2:.6g} >= {mid:.6g}")
    if not mid < 1.0:
        raise PreconditionError(f"gamma/N + 1/q1 < 1 fails: {mid:.6g} >= 1")


def smoothing_exponent(dimension, gamma, q1, q2):
    """Exponent kappa with ||S_gamma(t) phi||_q2 <~ t^-kappa ||phi||_q1."""
    return 0.5 * dimension * (1.0 / q1 - 1.0 / q2) + 0.5 * gamma


@dataclass
class ProbeResult:
    slope: float
    expected_slope: float
    C0: float
    times: np.ndarray
    ratios: np.ndarray
    probe_count: int

    @property
    def relative_error(self):
        if self.expected_slope == 0:
            return abs(self.slope)
        return abs(self.slope - self.expected_slope) / abs(self.expected_slope)


def probe_fields(grid, probe_count, seed):
    """Gaussian bumps of log-uniform width near the origin plus white noise."""
    rng = np.random.default_rng(seed)
    n_noise = max(1, probe_count // 10)
    n_bump = probe_count - n_noise
    X = grid.coordinates()
    h, L = grid.spacing, grid.half_width
    widths = np.exp(rng.uniform(np.log(h), np.log(2.0 * L), n_bump))
    out = []
    for eps in widths:
        c = rng.normal(0.0, min(eps, L) / 8.0, grid.dimension)
        r2 = sum((x - ci) ** 2 for x, ci in zip(X, c))
        out.append(np.exp(-r2 / (2.0 * eps**2)))
    for _ in range(n_noise):
        out.append(rng.standard_normal(grid.shape))
    return np.array(out)


def smoothing_exponent_probe(
    gamma, q1, q2, grid, t_range=None, probe_count=44, n_times=12, seed=0, safety=2.0,
    validation=False,
):
    """Fit the decay exponent of sup_phi ||S_gamma(t) phi||_q2 / ||phi||_q1.

    For each t the ratio is maximized over a random probe family; the slope
    of log ratio against log t is compared with -kappa and
    C0 = safety * max_t ratio(t) t^kappa.
    """
    N = grid.dimension
    check_q12(N, gamma, q1, q2)
    h, L = grid.spacing, grid.half_width
    lo, hi = h * h, L * L / 10.0
    if t_range is None:
        t_range = (4.0 * h * h, L * L / 40.0)
    t_min, t_max = map(float, t_range)
    if not (lo <= t_min < t_max <= hi):
        raise PreconditionError(
            f"t_range {t_range} must lie inside the resolved window [{lo:.4g}, {hi:.4g}]"
        )
    w = SingularWeight.build(grid, gamma, validation=validation)
    probes = probe_fields(grid, probe_count, seed)
    base = lq_norms(probes, grid, q1)
    spec = sfft.rfftn(w.values * probes, axes=grid.axes, workers=fft_workers())
    lam = grid.eigenvalues(real=True)
    times = np.geomspace(t_min, t_max, n_times)
    ratios = np.empty(n_times)
    for i, t in enumerate(times):
        out = sfft.irfftn(spec * np.exp(-lam * t), s=grid.shape, axes=grid.axes,
                          workers=fft_workers())
        ratios[i] = np.max(lq_norms(out, grid, q2) / base)
    slope = float(np.polyfit(np.log(times), np.log(ratios), 1)[0])
    kappa = smoothing_exponent(N, gamma, q1, q2)
    C0 = safety * float(np.max(ratios * times**kappa))
    return ProbeResult(slope, -kappa, C0, times, ratios, probe_count)
