"""End-to-end orchestration: C0 probing, noise sampling, certification, solving."""

from dataclasses import dataclass
import logging
import math

from .errors import InfeasibleError
from .fbm import TimeGrid
from .heat import Trajectory, smoothing_exponent_probe
from .noise import SpectralBasis, sample_noise_path
from .solver import certify, default_m_policy

log = logging.getLogger(__name__)


def estimate_c0(exponents, grid, probe_count=44, seed=0, t_range=None):
    """C0 from the probe at the two exponent pairs used by the existence proof.

    The q-norm bound uses (q1, q2) = (r/p, q) and the weighted r-norm bound
    uses (r/p, r); the larger estimate is returned with both probe results.
    """
    q1 = exponents.r / exponents.p
    results = {}
    for name, q2 in (("C1", exponents.q), ("C2", exponents.r)):
        results[name] = smoothing_exponent_probe(
            exponents.gamma, q1, q2, grid, t_range=t_range, probe_count=probe_count,
            seed=seed, validation=exponents.gamma == 0,
        )
    return max(r.C0 for r in results.values()), results


@dataclass
class NoiseRun:
    path: object  # NoisePath, or None for zero noise
    z: Trajectory
    certificate: object
    rounds: int


def noise_trajectory(spec, m_max, times):
    basis = SpectralBasis(spec.dimension, spec.grid.half_width, m_max)
    path = sample_noise_path(basis, times, spec.hurst, spec.seed)
    return path, path.on_grid(spec.grid)


def certified_noise(spec, exponents, C0, m_max, n_intervals, m_policy=default_m_policy,
                    M=None, max_rounds=20, noise=True, grading=None, refine=1.1):
    """Sample Z on [0, T0] and certify; search the horizon until the
    certificate covers the whole sampled grid.

    Every round re-samples on a grid over the trial horizon with the same
    seed and tries to certify all of it.  Until a first success the horizon
    shrinks to T* of a partial certificate, or to t_1 when even the first
    node is infeasible.  After that the search bisects in log T between the
    largest certified and the smallest failed horizon until their ratio is
    at most ``refine``.  The returned certificate always refers to the
    returned path.  ``grading`` selects t_j = T (j/J)^grading over the
    uniform grid.
    """
    horizon = spec.horizon
    best, failed, last = None, None, None
    for rounds in range(1, max_rounds + 1):
        times = (TimeGrid.uniform(horizon, n_intervals) if grading is None
                 else TimeGrid.graded(horizon, n_intervals, grading))
        if noise:
            path, z = noise_trajectory(spec, m_max, times)
        else:
            path, z = None, Trajectory.zeros(times, spec.grid)
        try:
            cert = certify(spec, exponents, z, C0, m_policy=m_policy, M=M)
        except InfeasibleError as exc:
            if exc.immediate:
                raise
            last, cert = exc, None
            log.info("round %d: horizon %.4g infeasible (%s)", rounds, horizon, exc.binding)
        if cert is not None:
            log.info("round %d: horizon %.4g, T* %.4g (node %d, binding %s)",
                     rounds, horizon, cert.T_star, cert.node, cert.binding)
        if cert is not None and cert.node == n_intervals:
            best = NoiseRun(path, z, cert, rounds)
            if failed is None or failed <= refine * horizon:
                return best
        else:
            failed = horizon
        if best is None:
            horizon = cert.T_star if cert is not None else times.nodes[1]
        else:
            lo = best.certificate.T_star
            if failed <= refine * lo:
                return best
            horizon = math.sqrt(lo * failed)
    if best is not None:
        best.rounds = max_rounds
        return best
    raise InfeasibleError(
        f"no certificate covering the sampled grid after {max_rounds} rounds",
        binding=getattr(last, "binding", None),
    )
