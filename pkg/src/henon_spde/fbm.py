"""One-dimensional fractional Brownian motion.

Covariance, the Volterra kernel of the regular branch (H > 1/2), two exact
or convergent samplers, the transfer operator ``K*`` and the inner product of
the reproducing space on step functions.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.linalg import lapack

from . import special
from .errors import (
    AlignmentError,
    DomainError,
    FactorizationError,
    UnsupportedBranchError,
)

GL_NODES = 32
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_NODES)
CHOLESKY_PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class HurstParameter:
    h: float

    def __post_init__(self):
        if not (0.0 < float(self.h) < 1.0):
            raise DomainError(f"Hurst parameter must lie in (0, 1), got {self.h}")
        object.__setattr__(self, "h", float(self.h))

    @property
    def regular(self):
        """True on the H > 1/2 branch where the kernel is regular."""
        return self.h > 0.5

    def __float__(self):
        return self.h


def as_hurst(h):
    return h if isinstance(h, HurstParameter) else HurstParameter(h)


def _require_regular(h, what):
    if not h.regular:
        raise UnsupportedBranchError(
            f"{what} is implemented only for H > 1/2 (got H = {h.h})"
        )


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes 0 = t_0 < ... < t_n = T."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise DomainError("a time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise DomainError("time grid must start at 0")
        if np.any(np.diff(nodes) <= 0):
            raise DomainError("time grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, horizon, n_intervals):
        if horizon <= 0 or n_intervals < 1:
            raise DomainError("uniform grid needs horizon > 0 and n_intervals >= 1")
        return cls(np.linspace(0.0, horizon, int(n_intervals) + 1))

    @classmethod
    def graded(cls, horizon, n_intervals, exponent):
        """Nodes T (j/J)^exponent, clustering near t = 0 when exponent > 1."""
        j = np.arange(int(n_intervals) + 1) / n_intervals
        return cls(horizon * j**exponent)

    @property
    def horizon(self):
        return float(self.nodes[-1])

    @property
    def steps(self):
        return np.diff(self.nodes)

    def __len__(self):
        return self.nodes.size

    def is_uniform(self, rtol=1e-9):
        d = self.steps
        return bool(np.all(np.abs(d - d[0]) <= rtol * d[0]))

    def index_of(self, t):
        """Index of the node equal to ``t`` (up to rounding), else AlignmentError."""
        tol = 1e-12 * max(self.horizon, 1.0)
        i = int(np.searchsorted(self.nodes, t - tol))
        if i < self.nodes.size and abs(self.nodes[i] - t) <= tol:
            return i
        raise AlignmentError(f"time {t!r} is not a node of the grid")

    def truncate(self, t_max):
        """Sub-grid of the nodes not exceeding ``t_max``."""
        keep = self.nodes <= t_max * (1 + 1e-12)
        if keep.sum() < 2:
            raise DomainError(f"no positive node at or below {t_max}")
        return TimeGrid(self.nodes[keep])


@dataclass(frozen=True, eq=False)
class FbmPath:
    grid: TimeGrid
    values: np.ndarray
    hurst: HurstParameter
    seed: int = None

    def __post_init__(self):
        if self.values.shape != self.grid.nodes.shape:
            raise AlignmentError("path values must match grid nodes")
        if self.values[0] != 0.0:
            raise DomainError("an fBm path starts at 0")


@dataclass(frozen=True, eq=False)
class StepFunction:
    """sum_i a_i 1_{(t_i, t_{i+1}]} with right-closed pieces."""

    breakpoints: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        a = np.asarray(self.coefficients, dtype=float)
        if b.ndim != 1 or a.ndim != 1 or b.size != a.size + 1:
            raise DomainError("need n + 1 breakpoints for n coefficients")
        if np.any(np.diff(b) <= 0):
            raise DomainError("breakpoints must be strictly increasing")
        if b[0] < 0:
            raise DomainError("breakpoints must be nonnegative")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "coefficients", a)

    @classmethod
    def indicator(cls, a, b, value=1.0):
        return cls([a, b], [value])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="left") - 1
        inside = (idx >= 0) & (idx < self.coefficients.size)
        out = np.where(inside, self.coefficients[np.clip(idx, 0, self.coefficients.size - 1)], 0.0)
        return out if out.ndim else float(out)


def covariance(s, t, h):
    """E[B(s) B(t)] = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2."""
    h = as_hurst(h)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise DomainError("covariance is defined for nonnegative times")
    e = 2.0 * h.h
    out = 0.5 * (t**e + s**e - np.abs(t - s) ** e)
    return out if out.ndim else float(out)


def c_h(h):
    h = as_hurst(h)
    H = h.h
    return math.sqrt(
        2.0 * H * special.gamma(1.5 - H) / (special.gamma(H + 0.5) * special.gamma(2.0 - 2.0 * H))
    )


def _kernel_integral(lo, hi, s, H, panels):
    # int_0^{U} (s + u^{1/a})^{a} du over [lo, hi] in the substituted variable,
    # a = H - 1/2; this is (H - 1/2) int (r - s)^{H - 3/2} r^{H - 1/2} dr.
    a = H - 0.5
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    s = np.asarray(s, dtype=float)[..., None]
    total = 0.0
    for k in range(panels):
        p0 = lo + (hi - lo) * (k / panels)
        p1 = lo + (hi - lo) * ((k + 1) / panels)
        u = 0.5 * (p1 - p0) * _GL_X + 0.5 * (p1 + p0)
        total = total + 0.5 * (p1 - p0)[..., 0] * np.sum(_GL_W * (s + u ** (1.0 / a)) ** a, axis=-1)
    return total


def volterra_kernel(t, s, h, panels=4):
    """Kernel K(t, s) of the Volterra representation, for 0 < s < t and H > 1/2.

    Evaluated as c_H (H - 1/2) s^{1/2-H} int_s^t (r-s)^{H-3/2} r^{H-1/2} dr after
    the substitution r = s + u^{1/(H-1/2)}, which leaves a bounded integrand
    handled by composite 32-point Gauss-Legendre.
    """
    h = as_hurst(h)
    _require_regular(h, "volterra_kernel")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= t):
        raise DomainError("volterra_kernel needs 0 < s < t")
    H = h.h
    t, s = np.broadcast_arrays(t, s)
    upper = (t - s) ** (H - 0.5)
    out = c_h(h) * s ** (0.5 - H) * _kernel_integral(np.zeros_like(upper), upper, s, H, panels)
    return out if out.ndim else float(out)


def volterra_kernel_dt(t, s, h):
    """Closed-form dK/dt = c_H (H - 1/2) (s/t)^{1/2-H} (t-s)^{H-3/2}."""
    h = as_hurst(h)
    _require_regular(h, "volterra_kernel_dt")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    H = h.h
    return c_h(h) * (H - 0.5) * (s / t) ** (0.5 - H) * (t - s) ** (H - 1.5)


def _as_callable(phi):
    if isinstance(phi, StepFunction) or callable(phi):
        return phi
    raise DomainError("phi must be a StepFunction or a callable of time")


def k_star_apply(phi, grid, h, horizon=None, panels=2):
    """(K*_T phi)(s) = int_s^T phi(r) dK/dr(r, s) dr on the nodes of ``grid``.

    ``grid`` may be a TimeGrid (T defaults to its horizon) or an array of
    evaluation points in (0, T). The operator is singular at s = 0; that node
    is returned as NaN. Step functions are integrated piecewise between their
    breakpoints so the jumps never sit inside a quadrature panel.
    """
    h = as_hurst(h)
    _require_regular(h, "k_star_apply")
    phi = _as_callable(phi)
    if isinstance(grid, TimeGrid):
        points = grid.nodes
        T = grid.horizon if horizon is None else float(horizon)
    else:
        points = np.atleast_1d(np.asarray(grid, dtype=float))
        if horizon is None:
            raise DomainError("horizon is required when evaluating at raw points")
        T = float(horizon)
    H = h.h
    a = H - 0.5
    breaks = phi.breakpoints if isinstance(phi, StepFunction) else np.empty(0)
    out = np.full(points.shape, np.nan)
    ch = c_h(h)
    for n, s in enumerate(points):
        if s <= 0:
            continue
        if s >= T:
            out[n] = 0.0
            continue
        cuts = np.concatenate(([s], breaks[(breaks > s) & (breaks < T)], [T]))
        ucuts = (cuts - s) ** a
        acc = 0.0
        for lo, hi in zip(ucuts[:-1], ucuts[1:]):
            for k in range(panels):
                p0 = lo + (hi - lo) * k / panels
                p1 = lo + (hi - lo) * (k + 1) / panels
                u = 0.5 * (p1 - p0) * _GL_X + 0.5 * (p1 + p0)
                r = s + u ** (1.0 / a)
                # midpoint of each sub-panel sits strictly inside a step piece
                acc += 0.5 * (p1 - p0) * np.sum(_GL_W * np.asarray(phi(r)) * r**a)
        out[n] = ch * s ** (0.5 - H) * acc
    return out


def k_star_norm_sq(phi, horizon, h, n_cells=64, order=8):
    """Squared L^2[0, T] norm of K*_T phi by graded composite Gauss-Legendre.

    The mesh is graded as T (j/n)^2 near the origin and always contains the
    breakpoints of a step function.  Two kinds of cell get a power
    substitution: the one at s = 0, where (K* phi)^2 ~ s^{1-2H}, and those
    ending at a jump b, where K* phi has a (b - s)^{H-1/2} cusp.
    """
    h = as_hurst(h)
    _require_regular(h, "k_star_norm_sq")
    H = h.h
    T = float(horizon)
    mesh = T * (np.arange(n_cells + 1) / n_cells) ** 2
    inner = np.empty(0)
    if isinstance(phi, StepFunction):
        inner = phi.breakpoints[(phi.breakpoints > 0) & (phi.breakpoints < T)]
        mesh = np.union1d(mesh, inner)
    x, w = np.polynomial.legendre.leggauss(order)
    v = 0.5 * x + 0.5
    a, b = mesh[:-1, None], mesh[1:, None]
    # x = a + (b - a) v^kappa from the left, x = b - (b - a) v^kappa from the right
    kappa = np.ones_like(a)
    from_right = np.isin(mesh[1:], inner)[:, None]
    kappa[from_right] = 1.0 / (H + 0.5)
    kappa[0] = 1.0 / (2.0 - 2.0 * H)
    from_right[0] = False
    offset = (b - a) * v**kappa
    pts = np.where(from_right, b - offset, a + offset)
    jac = (b - a) * kappa * v ** (kappa - 1.0)
    vals = k_star_apply(phi, pts.ravel(), h, horizon=T).reshape(pts.shape)
    return float(np.sum(0.5 * w * jac * vals**2))


def h_gram(edges_a, edges_b, h):
    """Matrix of <1_(a_i, a_{i+1}], 1_(b_j, b_{j+1}]> in closed form.

    Each entry is H(2H-1) times the exact double integral of |t - s|^{2H-2}
    over a rectangle, i.e. (|d-a|^{2H} - |d-b|^{2H} - |c-a|^{2H} + |c-b|^{2H})/2.
    """
    h = as_hurst(h)
    e = 2.0 * h.h
    ea = np.asarray(edges_a, dtype=float)
    eb = np.asarray(edges_b, dtype=float)
    A, B = ea[:-1, None], ea[1:, None]
    C, D = eb[None, :-1], eb[None, 1:]
    f = lambda u: np.abs(u) ** e  # noqa: E731
    return 0.5 * (f(D - A) - f(D - B) - f(C - A) + f(C - B))


def inner_product_h(phi, chi, h):
    """<phi, chi> for step functions, exact (no quadrature)."""
    h = as_hurst(h)
    _require_regular(h, "inner_product_h")
    G = h_gram(phi.breakpoints, chi.breakpoints, h)
    return float(phi.coefficients @ G @ chi.coefficients)


def step_weights(phi, grid):
    """Vector w with int phi dB = w @ path.values, for grid-aligned breakpoints."""
    w = np.zeros(len(grid))
    idx = [grid.index_of(t) for t in phi.breakpoints]
    for a, i0, i1 in zip(phi.coefficients, idx[:-1], idx[1:]):
        w[i1] += a
        w[i0] -= a
    return w


def wiener_integral_step(phi, path):
    """sum_i a_i (B(t_{i+1}) - B(t_i)); breakpoints must be grid nodes."""
    return float(step_weights(phi, path.grid) @ path.values)


def covariance_matrix(grid, h):
    t = grid.nodes[1:]
    return covariance(t[:, None], t[None, :], h)


def fbm_cholesky_factor(grid, h):
    """Lower Cholesky factor of the covariance on the positive nodes."""
    R = covariance_matrix(grid, h)
    L, info = lapack.dpotrf(R, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise FactorizationError(
            f"covariance not positive definite: leading minor of order {info} failed",
            minor=int(info),
        )
    if info < 0:
        raise FactorizationError(f"dpotrf rejected argument {-info}")
    pivots = np.diag(L) ** 2
    bad = np.flatnonzero(pivots <= CHOLESKY_PIVOT_TOL * np.max(np.diag(R)))
    if bad.size:
        k = int(bad[0]) + 1
        raise FactorizationError(
            f"covariance numerically singular: pivot of leading minor of order {k} "
            f"is {pivots[k - 1]:.3e}",
            minor=k,
        )
    return np.tril(L)


def fbm_paths_cholesky(grid, h, n_paths, seed):
    """Array (n_paths, len(grid)) of exact fBm samples; row 0 of each is B(0)=0."""
    h = as_hurst(h)
    L = fbm_cholesky_factor(grid, h)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((L.shape[0], n_paths))
    out = np.zeros((n_paths, len(grid)))
    out[:, 1:] = (L @ xi).T
    return out


def sample_fbm_cholesky(grid, h, seed):
    h = as_hurst(h)
    return FbmPath(grid, fbm_paths_cholesky(grid, h, 1, seed)[0], h, seed)


def _gl_power_left(f, a, b, beta):
    # int_a^b f(x) dx when f ~ (x - a)^beta; x = a + (b-a) v^{1/(1+beta)}
    kappa = 1.0 / (1.0 + beta)
    v = 0.5 * _GL_X + 0.5
    x = a + (b - a) * v**kappa
    jac = (b - a) * kappa * v ** (kappa - 1.0)
    return np.sum(0.5 * _GL_W * f(x) * jac)


def _gl_power_right(f, a, b, beta):
    kappa = 1.0 / (1.0 + beta)
    v = 0.5 * _GL_X + 0.5
    x = b - (b - a) * v**kappa
    jac = (b - a) * kappa * v ** (kappa - 1.0)
    return np.sum(0.5 * _GL_W * f(x) * jac)


def volterra_weights(grid, h):
    """Lower-triangular weights W with B(t_j) = sum_i W[j, i] dW_i.

    W[j, i] is the root-mean-square of K(t_j, .) over cell i, so the variance
    at every node is exact: sum_i W[j, i]^2 dt = int_0^{t_j} K(t_j, s)^2 ds.
    The half-cells touching s = 0 and s = t_j use power substitutions for the
    s^{1-2H} and (t-s)^{2H-1} endpoint behaviour of K^2.
    """
    h = as_hurst(h)
    _require_regular(h, "volterra sampler")
    if not grid.is_uniform():
        raise DomainError("the Volterra sampler assumes a uniform grid")
    H = h.h
    nodes = grid.nodes
    n = nodes.size - 1
    dt = nodes[1] - nodes[0]
    W = np.zeros((n + 1, n))
    for j in range(1, n + 1):
        t = nodes[j]
        K2 = lambda s, t=t: volterra_kernel(t, s, h) ** 2  # noqa: E731
        for i in range(j):
            a, b = nodes[i], nodes[i + 1]
            m = 0.5 * (a + b)
            if i == 0:
                left = _gl_power_left(K2, a, m, 1.0 - 2.0 * H)
            else:
                x = 0.5 * (m - a) * _GL_X + 0.5 * (m + a)
                left = 0.5 * (m - a) * np.sum(_GL_W * K2(x))
            if i == j - 1:
                right = _gl_power_right(K2, m, b, 2.0 * H - 1.0)
            else:
                x = 0.5 * (b - m) * _GL_X + 0.5 * (b + m)
                right = 0.5 * (b - m) * np.sum(_GL_W * K2(x))
            W[j, i] = math.sqrt((left + right) / dt)
    return W


def fbm_paths_volterra(grid, h, n_paths, seed, weights=None):
    """Array (n_paths, len(grid)) from the discretized Volterra integral."""
    W = volterra_weights(grid, h) if weights is None else weights
    dt = grid.nodes[1] - grid.nodes[0]
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((W.shape[1], n_paths)) * math.sqrt(dt)
    return (W @ dW).T


def sample_fbm_volterra(grid, h, seed):
    h = as_hurst(h)
    return FbmPath(grid, fbm_paths_volterra(grid, h, 1, seed)[0], h, seed)
