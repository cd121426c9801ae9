"""Mild solutions of the stochastic Hardy-Henon heat equation by Picard iteration.

    u(t) = e^{t Delta} u0 + int_0^t e^{(t-s) Delta}(|x|^-gamma |u|^{p-1} u)(s) ds + Z(t)

This module checks the local well-posedness hypotheses, derives the working
exponents (r, sigma, alpha) and Beta-function constants, certifies an
existence time from the three smallness inequalities, and runs the fixed-point
iteration in the weighted metric

    d(u, v) = sup_t ||u - v||_q + sup_t t^sigma ||u - v||_r.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
import scipy.fft as sfft

from .errors import (
    AlignmentError,
    DivergenceError,
    DomainError,
    InfeasibleError,
    PreconditionError,
)
from .fbm import TimeGrid
from .heat import Field, Grid, SingularWeight, Trajectory, fft_workers, lq_norm, lq_norms
from .noise import k_profile
from .special import beta as beta_function

IDENTITY_TOL = 1e-12
DIVERGENCE_FACTOR = 10.0


@dataclass
class ProblemSpec:
    dimension: int
    gamma: float
    p: float
    q: float
    hurst: float
    grid: Grid
    u0: Field
    horizon: float = 1.0
    seed: int = 0
    validation_mode: bool = False

    def __post_init__(self):
        if self.grid.dimension != self.dimension:
            raise AlignmentError("spec dimension and grid dimension differ")
        if self.u0.grid != self.grid:
            raise AlignmentError("initial datum lives on a different grid")

    @cached_property
    def weight(self):
        return SingularWeight.build(self.grid, self.gamma, validation=self.validation_mode)

    @property
    def u0_norm(self):
        return lq_norm(self.u0, self.q)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    blocking: bool = True


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def ok(self):
        return all(c.passed for c in self.checks if c.blocking)

    @property
    def theorem_valid(self):
        return all(c.passed for c in self.checks)

    def failures(self, blocking_only=True):
        return [c for c in self.checks if not c.passed and (c.blocking or not blocking_only)]

    def get(self, name):
        return next(c for c in self.checks if c.name == name)

    def __str__(self):
        lines = []
        for c in self.checks:
            tag = "pass" if c.passed else ("FAIL" if c.blocking else "flag")
            lines.append(f"[{tag}] {c.name}: {c.detail}")
        return "\n".join(lines)


def q_lower_bound(dimension, gamma, p):
    """max(Np/(N-gamma), N(p-1)/(2-gamma))."""
    N = dimension
    return max(N * p / (N - gamma), N * (p - 1) / (2.0 - gamma))


def check_hypotheses(dimension, gamma, p, q, hurst, validation_mode=False):
    """Pass/fail for each hypothesis of the local existence theorem."""
    N = dimension
    rep = ValidationReport()
    dim_ok = N in (2, 3)
    rep.checks.append(Check(
        "dimension", dim_ok, f"N = {N} in {{2, 3}}" if dim_ok else f"N = {N} is outside {{2, 3}}",
        blocking=not validation_mode and N not in (1, 2, 3),
    ))
    g_ok = 0 < gamma < 2
    relaxed = validation_mode and gamma == 0
    rep.checks.append(Check(
        "gamma", g_ok,
        f"0 < gamma = {gamma} < 2" if g_ok else f"0 < gamma < 2 violated by gamma = {gamma}",
        blocking=not relaxed,
    ))
    rep.checks.append(Check("p", p > 1, f"p = {p} > 1" if p > 1 else f"p > 1 violated by p = {p}"))
    hb = max(0.5, N / 4.0)
    h_ok = hb < hurst < 1
    rep.checks.append(Check(
        "hurst", h_ok,
        f"max(1/2, N/4) = {hb:g} < H = {hurst} < 1" if h_ok
        else f"max(1/2, N/4) = {hb:g} < H < 1 violated by H = {hurst}",
    ))
    if 0 <= gamma < 2 and gamma < N and p > 1:
        qb = q_lower_bound(N, gamma, p)
        q_ok = qb < q < math.inf
        rep.checks.append(Check(
            "q", q_ok,
            f"max(Np/(N-gamma), N(p-1)/(2-gamma)) = {qb:.6g} < q = {q}" if q_ok
            else f"max(Np/(N-gamma), N(p-1)/(2-gamma)) = {qb:.6g} < q violated by q = {q}",
        ))
        if q_ok:
            ex = exponents_for(N, gamma, p, q, check=False)
            for name, ok, text in ex.chain():
                rep.checks.append(Check(name, ok, text))
    else:
        rep.checks.append(Check("q", False, "q bound undefined for these gamma, p"))
    return rep


def validate_parameters(spec):
    return check_hypotheses(
        spec.dimension, spec.gamma, spec.p, spec.q, spec.hurst, spec.validation_mode
    )


@dataclass(frozen=True)
class DerivedExponents:
    dimension: int
    gamma: float
    p: float
    q: float
    r: float
    sigma: float
    alpha: float
    q_c: float
    beta_c1: float
    beta_c2: float

    @property
    def c1_args(self):
        N, g, p, q, r = self.dimension, self.gamma, self.p, self.q, self.r
        return (1.0 - 0.5 * N * (p / r - 1.0 / q) - 0.5 * g, 1.0 - p * self.sigma)

    @property
    def c2_args(self):
        N, g, p, r = self.dimension, self.gamma, self.p, self.r
        return (1.0 - N * (p - 1.0) / (2.0 * r) - 0.5 * g, 1.0 - p * self.sigma)

    def chain(self):
        """The auxiliary inequalities implied by the hypotheses, as (name, ok, text)."""
        N, g, p, q, r, s = self.dimension, self.gamma, self.p, self.q, self.r, self.sigma
        mid = g / N + p / r
        first = 1.0 / r - 1.0 / (q * p) + g / (N * p)
        return [
            ("chain r>q>p>1", r > q > p > 1, f"r = {r:.6g}, q = {q:.6g}, p = {p:.6g}"),
            ("chain 1/r-1/(qp)+gamma/(Np)<2/(Np)", first < 2.0 / (N * p),
             f"{first:.6g} < {2.0 / (N * p):.6g}"),
            ("chain 1/q<gamma/N+p/r<1", 1.0 / q < mid < 1.0,
             f"{1.0 / q:.6g} < {mid:.6g} < 1"),
            ("chain 0<sigma<1/p", 0 < s < 1.0 / p, f"0 < {s:.6g} < {1.0 / p:.6g}"),
        ]


def exponents_for(dimension, gamma, p, q, check=True):
    """r, sigma, alpha, q_c and the two Beta constants for (N, gamma, p, q)."""
    N = dimension
    inv_r = 1.0 / (2.0 * q * p) + 1.0 / (2.0 * q) - gamma / (2.0 * N * p)
    r = 1.0 / inv_r
    sigma = 0.5 * N * (1.0 / q - inv_r)
    alpha = (2.0 - gamma) / (2.0 * q) * (q - N * (p - 1.0) / (2.0 - gamma))
    q_c = N * (p - 1.0) / 2.0
    lhs = 1.0 - p * sigma - 0.5 * N * (p / r - 1.0 / q) - 0.5 * gamma
    if abs(lhs - alpha) > IDENTITY_TOL * max(1.0, abs(alpha)):
        raise PreconditionError(f"exponent identity fails: {lhs!r} != {alpha!r}")
    a1 = (1.0 - 0.5 * N * (p / r - 1.0 / q) - 0.5 * gamma, 1.0 - p * sigma)
    a2 = (1.0 - N * (p - 1.0) / (2.0 * r) - 0.5 * gamma, 1.0 - p * sigma)
    if check and not (min(a1) > 0 and min(a2) > 0):
        raise PreconditionError(f"Beta arguments not positive: C1{a1}, C2{a2}")
    c1 = beta_function(*a1) if min(a1) > 0 else math.nan
    c2 = beta_function(*a2) if min(a2) > 0 else math.nan
    return DerivedExponents(N, gamma, p, q, r, sigma, alpha, q_c, c1, c2)


def derive_exponents(spec):
    rep = validate_parameters(spec)
    if not rep.ok:
        names = ", ".join(c.name for c in rep.failures())
        raise PreconditionError(f"parameters fail: {names}\n{rep}")
    return exponents_for(spec.dimension, spec.gamma, spec.p, spec.q)


# -- existence time -----------------------------------------------------------


def default_m_policy(u0_norm, k_horizon):
    """M = 2 (||u0||_q + K(T0)); any M > 0 works when both vanish."""
    m = 2.0 * (u0_norm + k_horizon)
    return m if m > 0 else 1.0


def doubled_data_policy(u0_norm, k_horizon):
    """M = 2 ||u0||_q + K(T0)."""
    m = 2.0 * u0_norm + k_horizon
    return m if m > 0 else 1.0


@dataclass
class ExistenceCertificate:
    T_star: float
    node: int
    M: float
    K_at_T: float
    C0: float
    C1: float
    C2: float
    alpha: float
    p: float
    u0_norm: float
    margin_T1: float
    margin_T2: float
    margin_cont1: float
    binding: str
    m_policy: str = "default"

    def as_dict(self):
        return dict(self.__dict__)


def _margins(T, K, M, u0_norm, C0, C1, C2, alpha, p):
    Ta = T**alpha
    return (
        (M - u0_norm) - (K + C0 * C1 * M**p * Ta),
        (M - u0_norm) - (K + C0 * C2 * M**p * Ta),
        0.5 - C0 * (C1 + C2) * M ** (p - 1.0) * Ta,
    )


_NAMES = ("T1", "T2", "cont1")


def estimate_existence_time(
    u0_norm, exponents, times, k_values, C0, m_policy=default_m_policy, *,
    M=None, C1=None, C2=None, alpha=None, p=None,
):
    """Largest node T* of ``times`` where the three smallness inequalities hold.

    K(T) + C0 C1 M^p T^alpha <= M - ||u0||_q,  the same with C2, and
    C0 (C1 + C2) M^{p-1} T^alpha <= 1/2.  K is nondecreasing and T^alpha
    increasing, so the feasible nodes form a prefix and bisection applies.
    ``k_values`` is K at every node (or a scalar for a constant override).
    """
    nodes = times.nodes
    K = np.broadcast_to(np.asarray(k_values, dtype=float), nodes.shape)
    if np.any(np.diff(K) < -1e-14 * max(1.0, float(np.max(np.abs(K))))):
        raise DomainError("K must be nondecreasing in the horizon")
    C1 = exponents.beta_c1 if C1 is None else C1
    C2 = exponents.beta_c2 if C2 is None else C2
    alpha = exponents.alpha if alpha is None else alpha
    p = exponents.p if p is None else p
    policy = "fixed" if M is not None else getattr(m_policy, "__name__", "custom")
    if M is None:
        M = m_policy(u0_norm, float(K[-1]))
    args = (M, u0_norm, C0, C1, C2, alpha, p)
    if not M > u0_norm:
        raise InfeasibleError(
            f"M = {M:.6g} must exceed ||u0||_q = {u0_norm:.6g}: right side of T1 is not positive",
            binding="T1", immediate=True,
        )

    def feasible(j):
        return all(m >= 0 for m in _margins(nodes[j], K[j], *args))

    if not feasible(1):
        m = _margins(nodes[1], K[1], *args)
        worst = _NAMES[int(np.argmin(m))]
        raise InfeasibleError(
            f"no feasible horizon on the grid; {worst} fails already at t_1 = {nodes[1]:.6g}",
            binding=worst,
        )
    lo, hi = 1, len(nodes) - 1
    if feasible(hi):
        lo = hi
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if feasible(mid):
                lo = mid
            else:
                hi = mid
    m = _margins(nodes[lo], K[lo], *args)
    if lo == len(nodes) - 1:
        binding = "horizon"
    else:
        nxt = _margins(nodes[lo + 1], K[lo + 1], *args)
        binding = _NAMES[int(np.argmin(nxt))]
    return ExistenceCertificate(
        T_star=float(nodes[lo]), node=lo, M=float(M), K_at_T=float(K[lo]), C0=float(C0),
        C1=float(C1), C2=float(C2), alpha=float(alpha), p=float(p), u0_norm=float(u0_norm),
        margin_T1=float(m[0]), margin_T2=float(m[1]), margin_cont1=float(m[2]),
        binding=binding, m_policy=policy,
    )


def analytic_horizon(u0_norm, K, M, C0, C1, C2, alpha, p):
    """Largest T satisfying the three inequalities with K held fixed.

    Returns 0 when M - ||u0||_q - K is not positive.  Since K is
    nondecreasing, freezing it at K(t) gives a horizon that is sufficient on
    [0, t] for the same path.
    """
    room = M - u0_norm - K
    if not room > 0:
        return 0.0
    bounds = (
        room / (C0 * C1 * M**p),
        room / (C0 * C2 * M**p),
        0.5 / (C0 * (C1 + C2) * M ** (p - 1.0)),
    )
    return float(min(bounds) ** (1.0 / alpha))


def certify(spec, exponents, z, C0, m_policy=default_m_policy, M=None):
    """Existence certificate for the sampled noise ``z`` (a Trajectory)."""
    k = k_profile(z, exponents.q, exponents.r, exponents.sigma)
    return estimate_existence_time(spec.u0_norm, exponents, z.times, k, C0, m_policy, M=M)


# -- Picard map ---------------------------------------------------------------


def _phi1(lam, d):
    # (1 - e^{-lam d}) / lam, equal to d on the zero mode
    x = lam * d
    safe = np.where(lam > 0, lam, 1.0)
    return np.where(lam > 0, -np.expm1(-x) / safe, d)


def phi_apply(u, spec, z=None, nonlinear=True):
    """Apply the mild-solution map to the trajectory ``u``.

    The Duhamel term uses exponential product integration: on [t_i, t_{i+1}]
    the weighted nonlinearity is frozen at the midpoint field
    (u(t_i) + u(t_{i+1}))/2 and each Fourier mode is integrated exactly, which
    gives the recursion D_{i+1} = e^{-lam dt} D_i + (1 - e^{-lam dt})/lam g_i.
    """
    grid = u.grid
    if grid != spec.grid:
        raise AlignmentError("trajectory grid differs from the problem grid")
    if z is not None:
        u.aligned_with(z)
    axes = grid.axes
    workers = fft_workers()
    lam = grid.eigenvalues(real=True)
    t = u.times.nodes
    w = spec.weight.values
    p = spec.p
    u0_hat = sfft.rfftn(spec.u0.values, workers=workers)
    D = np.zeros_like(u0_hat)
    out = np.empty_like(u.values)
    out[0] = spec.u0.values
    for j in range(len(t) - 1):
        d = t[j + 1] - t[j]
        if nonlinear:
            mid = 0.5 * (u.values[j] + u.values[j + 1])
            g_hat = sfft.rfftn(w * np.abs(mid) ** (p - 1.0) * mid, axes=axes, workers=workers)
            D = np.exp(-lam * d) * D + _phi1(lam, d) * g_hat
        out[j + 1] = sfft.irfftn(np.exp(-lam * t[j + 1]) * u0_hat + D, s=grid.shape,
                                 axes=axes, workers=workers)
    if z is not None:
        out += z.values
    return Trajectory(u.times, grid, out)


def metric_d(u, v, q, r, sigma):
    """sup_t ||u - v||_q + sup_t t^sigma ||u - v||_r over the time nodes."""
    u.aligned_with(v)
    diff = u.values - v.values
    t = u.times.nodes
    a = lq_norms(diff, u.grid, q)
    b = np.where(t > 0, t**sigma, 0.0) * lq_norms(diff, u.grid, r)
    return float(a.max() + b.max())


def ball_norms(u, q, r, sigma):
    """(sup_t ||u||_q, sup_t t^sigma ||u||_r), the two radii of the ball X."""
    t = u.times.nodes
    a = lq_norms(u.values, u.grid, q)
    b = np.where(t > 0, t**sigma, 0.0) * lq_norms(u.values, u.grid, r)
    return float(a.max()), float(b.max())


@dataclass
class TrajectorySolution:
    trajectory: Trajectory
    distances: list
    ratios: list
    residual: float
    converged: bool
    iterations: int
    ball_radius: float = math.nan

    @property
    def max_ratio(self):
        finite = [x for x in self.ratios if np.isfinite(x)]
        return max(finite) if finite else math.nan


def initial_iterate(spec, z=None, times=None):
    """u^0(t) = e^{t Delta} u0 + Z(t)."""
    times = z.times if z is not None else times
    return phi_apply(Trajectory.zeros(times, spec.grid), spec, z, nonlinear=False)


def picard_solve(spec, z=None, certificate=None, tol=1e-10, max_iter=60, start=None,
                 times=None, exponents=None):
    """Iterate u^{k+1} = Phi(u^k) until d(u^{k+1}, u^k) <= tol.

    With a certificate, the time grid must end at or before T* and an iterate
    with sup_t ||u||_q above 10 M raises DivergenceError.  Without one only
    non-finite iterates count as divergence.
    """
    if z is None and times is None and start is None:
        raise DomainError("need the noise trajectory, a start, or a time grid")
    if exponents is None:
        exponents = (derive_exponents(spec) if not spec.validation_mode
                     else exponents_for(spec.dimension, spec.gamma, spec.p, spec.q, check=False))
    q, r, sigma = exponents.q, exponents.r, exponents.sigma
    u = start if start is not None else initial_iterate(spec, z, times)
    if certificate is not None and u.times.horizon > certificate.T_star * (1 + 1e-12):
        raise PreconditionError(
            f"time grid ends at {u.times.horizon:.6g} beyond certified T* = {certificate.T_star:.6g}"
        )
    radius = DIVERGENCE_FACTOR * certificate.M if certificate is not None else math.inf
    distances, ratios = [], []
    converged = False
    for k in range(max_iter):
        nxt = phi_apply(u, spec, z)
        if not np.all(np.isfinite(nxt.values)):
            raise DivergenceError(f"iterate {k + 1} is not finite")
        sup_q = float(np.max(lq_norms(nxt.values, nxt.grid, q)))
        if sup_q > radius:
            raise DivergenceError(
                f"iterate {k + 1} left the ball: sup ||u||_q = {sup_q:.6g} > {radius:.6g}"
            )
        dist = metric_d(nxt, u, q, r, sigma)
        ratios.append(dist / distances[-1] if distances and distances[-1] > 0 else math.nan)
        distances.append(dist)
        u = nxt
        if dist <= tol:
            converged = True
            break
    residual = metric_d(phi_apply(u, spec, z), u, q, r, sigma)
    return TrajectorySolution(u, distances, ratios, residual, converged, len(distances),
                              certificate.M if certificate is not None else math.nan)


def contraction_ratio(u, v, spec, z=None, exponents=None):
    """Measured d(Phi u, Phi v) / d(u, v)."""
    if exponents is None:
        exponents = derive_exponents(spec)
    q, r, s = exponents.q, exponents.r, exponents.sigma
    return metric_d(phi_apply(u, spec, z), phi_apply(v, spec, z), q, r, s) / metric_d(u, v, q, r, s)


def sample_ball_trajectory(times, grid, radius, q, r, sigma, rng, smoothing=None):
    """Random smooth trajectory inside the ball of the given radius."""
    if smoothing is None:
        smoothing = (4.0 * grid.spacing) ** 2
    lam = grid.eigenvalues(real=True)
    noise = rng.standard_normal((len(times),) + grid.shape)
    spec = sfft.rfftn(noise, axes=grid.axes, workers=fft_workers()) * np.exp(-lam * smoothing)
    vals = sfft.irfftn(spec, s=grid.shape, axes=grid.axes, workers=fft_workers())
    u = Trajectory(times, grid, vals)
    scale = max(ball_norms(u, q, r, sigma))
    return Trajectory(times, grid, vals * (rng.uniform(0.2, 1.0) * radius / scale))


# -- scaling ------------------------------------------------------------------


def _power_of_two_exponent(lam):
    m, e = math.frexp(lam)
    if not lam > 0 or m != 0.5:
        raise AlignmentError(f"scaling factor {lam} is not a power of two")
    return e - 1


def scaling_transform(u, lam, p):
    """u_lam(t, x) = lam^{2/(p-1)} u(lam^2 t, lam x) on the rescaled grids.

    Space nodes map to nodes when the box half width is divided by lam, and
    time nodes when the times are divided by lam^2; lam must be 2^k so both
    rescalings are exact in floating point.
    """
    _power_of_two_exponent(lam)
    grid = u.grid.rescaled(lam)
    times = TimeGrid(u.times.nodes / lam**2)
    return Trajectory(times, grid, u.values * lam ** (2.0 / (p - 1.0)))


def constant_state_solution(c, p, t):
    """Exact solution c (1 - (p-1) c^{p-1} t)^{-1/(p-1)} of u' = |u|^{p-1} u."""
    t = np.asarray(t, dtype=float)
    return c * (1.0 - (p - 1.0) * abs(c) ** (p - 1.0) * t) ** (-1.0 / (p - 1.0))


def blowup_time(c, p):
    return 1.0 / ((p - 1.0) * abs(c) ** (p - 1.0))
