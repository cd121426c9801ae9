"""Command line: ``henon-spde <command> --config PATH [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 a validation check failed, 2 configuration error,
3 unsupported branch, 4 infeasible, 5 divergence, 6 non-convergence.
Every run writes ``manifest.txt`` into the output directory, also on failure.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
import datetime as dt
import itertools
import logging
import math
import os
import re
import sys
import time
import warnings

import numpy as np

from . import __version__
from .config import SCHEMAS, ConfigError, load_config, render, resolve
from .errors import (
    DivergenceError,
    DomainError,
    InfeasibleError,
    PreconditionError,
    UnsupportedBranchError,
)
from .fbm import TimeGrid
from .heat import Field, Grid, fft_workers, lq_norms
from .io import read_csv, write_csv, write_field, write_field_csv, write_manifest
from .noise import TheoremHypothesisWarning, k_profile
from .pipeline import certified_noise, estimate_c0, noise_trajectory
from .solver import (
    ProblemSpec,
    blowup_time,
    check_hypotheses,
    constant_state_solution,
    default_m_policy,
    derive_exponents,
    doubled_data_policy,
    estimate_existence_time,
    exponents_for,
    picard_solve,
    q_lower_bound,
)
from .suites import fbm_suite, parse_case, smoothing_suite

log = logging.getLogger("henon_spde")

EXIT_OK = 0
EXIT_CHECKS = 1
EXIT_CONFIG = 2
EXIT_UNSUPPORTED = 3
EXIT_INFEASIBLE = 4
EXIT_DIVERGENCE = 5
EXIT_NONCONVERGENCE = 6

M_POLICIES = {"default": default_m_policy, "doubled": doubled_data_policy}


def slug(name):
    return re.sub(r"[^A-Za-z0-9_]+", "_", name).strip("_")


# -- problem construction -----------------------------------------------------


def make_grid(cfg):
    return Grid(cfg["dimension"], cfg["box.half_width"], cfg["box.points"])


def make_u0(cfg, grid, scale=1.0):
    kind = cfg["u0.kind"]
    a = cfg["u0.amplitude"] * scale
    if kind == "gaussian":
        w = cfg["u0.width"]
        return Field(grid, a * np.exp(-grid.radius() ** 2 / w**2))
    if kind == "constant":
        return Field.constant(grid, a)
    if kind == "zero":
        return Field.constant(grid, 0.0)
    raise ConfigError(f"u0.kind must be gaussian, constant or zero, got {kind!r}")


def make_spec(cfg, grid, seed, scale=1.0):
    return ProblemSpec(
        cfg["dimension"], cfg["gamma"], cfg["p"], cfg["q"], cfg["hurst"], grid,
        make_u0(cfg, grid, scale), horizon=cfg["horizon"], seed=seed,
        validation_mode=cfg["validation_mode"],
    )


def problem_exponents(spec):
    """Derived exponents; validation mode tolerates the relaxed hypotheses."""
    if not spec.validation_mode:
        return derive_exponents(spec)
    rep = check_hypotheses(spec.dimension, spec.gamma, spec.p, spec.q, spec.hurst, True)
    if not rep.ok:
        raise PreconditionError(f"parameters fail even in validation mode\n{rep}")
    return exponents_for(spec.dimension, spec.gamma, spec.p, spec.q, check=False)


def m_policy_of(cfg):
    try:
        return M_POLICIES[cfg["solver.m_policy"]]
    except KeyError:
        raise ConfigError(f"solver.m_policy must be one of {sorted(M_POLICIES)}") from None


def grading_of(cfg, exponents):
    # t_j = T (j/J)^{1/(1 - p sigma)} equalizes the t^{-p sigma} Duhamel weight
    return 1.0 / (1.0 - exponents.p * exponents.sigma) if cfg["time.graded"] else None


def time_grid(cfg, horizon, grading):
    J = cfg["time.nodes"]
    return TimeGrid.uniform(horizon, J) if grading is None else TimeGrid.graded(horizon, J, grading)


def require_noise_branch(cfg):
    if cfg["noise.enabled"] and cfg["hurst"] <= 0.5:
        raise UnsupportedBranchError(f"noise sampling needs H > 1/2, got H = {cfg['hurst']}")


def exponent_entries(ex, prefix="exponents"):
    return {f"{prefix}.{k}": getattr(ex, k)
            for k in ("r", "sigma", "alpha", "q_c", "beta_c1", "beta_c2")}


def probe_c0(cfg, ex, grid, manifest):
    if cfg.get("override.C0") is not None:
        manifest["C0.source"] = "override"
        return cfg["override.C0"]
    C0, results = estimate_c0(ex, grid, probe_count=cfg["probe.count"], seed=cfg["probe.seed"])
    manifest["C0.source"] = "probe"
    for name, res in results.items():
        manifest[f"C0.probe_{name}.slope"] = res.slope
        manifest[f"C0.probe_{name}.expected_slope"] = res.expected_slope
        manifest[f"C0.probe_{name}.C0"] = res.C0
    return C0


# -- per-seed existence time ----------------------------------------------------

CERT_FIELDS = ["seed", "T_star", "node", "M", "K_at_T", "C0", "C1", "C2", "alpha", "u0_norm",
               "margin_T1", "margin_T2", "margin_cont1", "binding", "rounds", "status"]


def certificate_row(cfg, ex, grid, C0, seed, scale=1.0):
    """One batch member: sample, certify, and return a CSV row dict."""
    spec = make_spec(cfg, grid, seed, scale)
    policy = m_policy_of(cfg)
    grading = grading_of(cfg, ex)
    kw = {k: cfg[f"override.{k}"] for k in ("C1", "C2") if cfg.get(f"override.{k}") is not None}
    u0_norm = cfg.get("override.u0_norm")
    u0_norm = spec.u0_norm if u0_norm is None else u0_norm
    try:
        if cfg.get("override.K") is not None or u0_norm != spec.u0_norm or kw:
            times = time_grid(cfg, cfg["horizon"], grading)
            if cfg.get("override.K") is not None:
                k_values = cfg["override.K"]
            else:
                _, z = noise_trajectory(spec, cfg["noise.m_max"], times)
                k_values = k_profile(z, ex.q, ex.r, ex.sigma)
            cert = estimate_existence_time(u0_norm, ex, times, k_values, C0, policy,
                                           M=cfg["solver.M"], **kw)
            rounds = 1
        else:
            run = certified_noise(spec, ex, C0, cfg["noise.m_max"], cfg["time.nodes"], policy,
                                  M=cfg["solver.M"], noise=cfg["noise.enabled"],
                                  grading=grading, refine=cfg["time.refine"])
            cert, rounds = run.certificate, run.rounds
    except InfeasibleError as exc:
        row = {k: "" for k in CERT_FIELDS}
        row.update(seed=seed, binding=exc.binding or "", status=f"infeasible: {exc}")
        return row
    row = {k: v for k, v in cert.as_dict().items() if k in CERT_FIELDS}
    row.update(seed=seed, rounds=rounds, status="ok")
    return row


def run_batch(cfg, ex, grid, C0, out, scale=1.0, tag=""):
    """Seed-indexed members run concurrently; each writes its own CSV, then one
    writer merges them in seed order."""
    seeds = [cfg["seed"] + i for i in range(cfg["batch.seeds"])]
    seed_dir = os.path.join(out, "seeds")
    os.makedirs(seed_dir, exist_ok=True)

    def member(s):
        row = certificate_row(cfg, ex, grid, C0, s, scale)
        path = os.path.join(seed_dir, f"{tag}seed_{s}.csv")
        write_csv(path, CERT_FIELDS, [[row[k] for k in CERT_FIELDS]])
        return path

    with ThreadPoolExecutor(max_workers=max(1, fft_workers())) as pool:
        paths = list(pool.map(member, seeds))
    return [read_csv(p)[0] for p in paths]


def t_star_stats(rows):
    ts = np.array([float(r["T_star"]) for r in rows if r["status"] == "ok"])
    if ts.size == 0:
        return None
    return float(ts.min()), float(np.median(ts)), float(ts.max())


# -- commands -------------------------------------------------------------------


def cmd_validate_fbm(cfg, out, manifest):
    if cfg["kernel_checks"] and cfg["hurst"] <= 0.5:
        raise UnsupportedBranchError(
            f"kernel checks need H > 1/2 (got H = {cfg['hurst']}); "
            "rerun with kernel_checks = false for the covariance-only checks"
        )
    checks = fbm_suite(
        cfg["hurst"], cfg["horizon"], cfg["nodes"], cfg["samples"], cfg["seed"],
        cfg["kernel_checks"], cfg["isometry.functions"], cfg["isometry.cells"],
        cfg["tolerance.variance"], cfg["tolerance.covariance"], cfg["tolerance.isometry"],
    )
    return report_checks(checks, out, manifest)


def cmd_validate_smoothing(cfg, out, manifest):
    grid = Grid(cfg["dimension"], cfg["box.half_width"], cfg["box.points"])
    try:
        cases = [parse_case(c) for c in cfg["cases"]]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    checks = smoothing_suite(grid, cases, cfg["probe.count"], cfg["probe.times"], cfg["seed"],
                             cfg["tolerance.slope"])
    return report_checks(checks, out, manifest)


def report_checks(checks, out, manifest):
    write_csv(os.path.join(out, "checks.csv"), ["name", "value", "threshold", "passed", "detail"],
              [[c.name, c.value, c.threshold, c.passed, c.detail] for c in checks])
    for c in checks:
        print(c.line())
        manifest[f"check.{slug(c.name)}"] = "pass" if c.passed else "fail"
        manifest[f"check.{slug(c.name)}.value"] = c.value
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECKS


def cmd_estimate_time(cfg, out, manifest):
    require_noise_branch(cfg)
    grid = make_grid(cfg)
    spec = make_spec(cfg, grid, cfg["seed"])
    ex = problem_exponents(spec)
    manifest.update(exponent_entries(ex))
    C0 = probe_c0(cfg, ex, grid, manifest)
    manifest["C0"] = C0
    rows = run_batch(cfg, ex, grid, C0, out)
    write_csv(os.path.join(out, "certificates.csv"), CERT_FIELDS,
              [[r[k] for k in CERT_FIELDS] for r in rows])
    for r in rows:
        key = f"certificate.seed_{r['seed']}"
        manifest[f"{key}.T_star"] = r["T_star"]
        manifest[f"{key}.binding"] = r["binding"]
        manifest[f"{key}.status"] = r["status"].split(":")[0]
    stats = t_star_stats(rows)
    header = ["seeds", "feasible", "T_star_min", "T_star_median", "T_star_max"]
    n_ok = sum(r["status"] == "ok" for r in rows)
    write_csv(os.path.join(out, "summary.csv"), header,
              [[len(rows), n_ok] + (list(stats) if stats else ["", "", ""])])
    if stats is None:
        bindings = sorted({r["binding"] for r in rows})
        manifest["infeasible.binding"] = ",".join(bindings)
        print(f"infeasible on all seeds; binding constraint(s): {', '.join(bindings)}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    manifest["T_star.min"], manifest["T_star.median"], manifest["T_star.max"] = stats
    print(f"T* over {n_ok}/{len(rows)} seeds: min {stats[0]:.6g}, median {stats[1]:.6g}, "
          f"max {stats[2]:.6g}")
    return EXIT_OK


PLOT_SCRIPT = '''"""Render the norm history and Picard ratios of a simulate run (needs matplotlib)."""
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(here, name), newline="") as fh:
        return list(csv.DictReader(fh))


norms = load("norms.csv")
its = load("iterations.csv")
fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
a.plot([float(r["t"]) for r in norms], [float(r["norm_q"]) for r in norms], label="||u(t)||_q")
a.set_xlabel("t")
a.legend()
ratios = [(int(r["iteration"]), float(r["ratio"])) for r in its if r["ratio"] not in ("", "nan")]
if ratios:
    b.semilogy(*zip(*ratios), "o-", label="d(u_k+1, u_k) / d(u_k, u_k-1)")
b.set_xlabel("iteration")
b.legend()
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "norms.png"))
'''


def cmd_simulate(cfg, out, manifest):
    require_noise_branch(cfg)
    grid = make_grid(cfg)
    spec = make_spec(cfg, grid, cfg["seed"])
    ex = problem_exponents(spec)
    manifest.update(exponent_entries(ex))
    grading = grading_of(cfg, ex)
    cert, z = None, None
    if cfg["certify"]:
        C0 = probe_c0(cfg, ex, grid, manifest)
        run = certified_noise(spec, ex, C0, cfg["noise.m_max"], cfg["time.nodes"],
                              m_policy_of(cfg), M=cfg["solver.M"], noise=cfg["noise.enabled"],
                              grading=grading, refine=cfg["time.refine"])
        cert, z, times = run.certificate, run.z, run.z.times
        for k, v in cert.as_dict().items():
            manifest[f"certificate.{k}"] = v
        manifest["certificate.rounds"] = run.rounds
    else:
        times = time_grid(cfg, cfg["horizon"], grading)
        manifest["certificate"] = "none (certify = false)"
        if cfg["noise.enabled"]:
            _, z = noise_trajectory(spec, cfg["noise.m_max"], times)
    sol = picard_solve(spec, z, cert, tol=cfg["solver.tol"], max_iter=cfg["solver.max_iter"],
                       times=times, exponents=ex)
    u = sol.trajectory
    write_csv(os.path.join(out, "iterations.csv"), ["iteration", "distance", "ratio"],
              [[i + 1, d, r] for i, (d, r) in enumerate(zip(sol.distances, sol.ratios))])
    t = u.times.nodes
    cols = {"t": t, "norm_q": lq_norms(u.values, grid, ex.q),
            "norm_r": lq_norms(u.values, grid, ex.r)}
    cols["weighted_r"] = np.where(t > 0, t**ex.sigma, 0.0) * cols["norm_r"]
    if cfg["u0.kind"] == "constant" and spec.gamma == 0 and not cfg["noise.enabled"]:
        c = cfg["u0.amplitude"]
        exact = constant_state_solution(c, spec.p, t)
        err = np.max(np.abs(u.values.reshape(len(t), -1) - exact[:, None]), axis=1) / np.abs(exact)
        cols["oracle"], cols["oracle_rel_error"] = exact, err
        manifest["oracle.blowup_time"] = blowup_time(c, spec.p)
        manifest["oracle.max_rel_error"] = float(err.max())
        print(f"ODE oracle: max relative error {err.max():.3e}")
    write_csv(os.path.join(out, "norms.csv"), list(cols), zip(*cols.values()))
    snap_dir = os.path.join(out, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    n_snap = max(2, cfg["snapshots"])
    for j in sorted(set(np.linspace(0, len(t) - 1, n_snap).round().astype(int))):
        f = u.field(j)
        write_field(os.path.join(snap_dir, f"u_{j:05d}.fld"), f)
        write_field_csv(os.path.join(snap_dir, f"u_{j:05d}_slice.csv"), f)
    with open(os.path.join(out, "plot_norms.py"), "w") as fh:
        fh.write(PLOT_SCRIPT)
    manifest["solution.converged"] = sol.converged
    manifest["solution.iterations"] = sol.iterations
    manifest["solution.residual"] = sol.residual
    manifest["solution.max_ratio"] = sol.max_ratio
    manifest["solution.horizon"] = float(t[-1])
    print(f"Picard: converged={sol.converged} after {sol.iterations} iterations, "
          f"max ratio {sol.max_ratio:.3g}, horizon {t[-1]:.6g}")
    return EXIT_OK if sol.converged else EXIT_NONCONVERGENCE


SWEEP_FIELDS = ["dimension", "gamma", "p", "q", "hurst", "valid_gamma", "valid_hurst", "valid_q",
                "valid_chain", "valid", "q_bound", "r", "sigma", "alpha", "alpha_recomputed",
                "q_c", "T_star_min", "T_star_median", "T_star_max", "reason"]


def sweep_row(cfg, N, g, p, q, H, out, index):
    rep = check_hypotheses(N, g, p, q, H)
    row = dict.fromkeys(SWEEP_FIELDS, "")
    row.update(dimension=N, gamma=g, p=p, q=q, hurst=H,
               valid_gamma=rep.get("gamma").passed, valid_hurst=rep.get("hurst").passed,
               valid_q=rep.get("q").passed)
    chain = [c for c in rep.checks if c.name.startswith("chain")]
    row["valid_chain"] = bool(chain) and all(c.passed for c in chain)
    row["valid"] = rep.theorem_valid
    if 0 <= g < 2 and g < N and p > 1:
        row["q_bound"] = q_lower_bound(N, g, p)
        ex = exponents_for(N, g, p, q, check=False)
        row.update(r=ex.r, sigma=ex.sigma, alpha=ex.alpha, q_c=ex.q_c)
        row["alpha_recomputed"] = (1.0 - p * ex.sigma - 0.5 * N * (p / ex.r - 1.0 / q)
                                   - 0.5 * g)
    if not rep.theorem_valid:
        row["reason"] = "invalid: " + ", ".join(c.name for c in rep.checks if not c.passed)
        return row
    if not cfg["sweep.estimate_time"]:
        row["reason"] = "T* not requested"
        return row
    point = dict(cfg, gamma=g, p=p, q=q, hurst=H)
    grid = make_grid(point)
    ex = exponents_for(N, g, p, q)
    C0, _ = estimate_c0(ex, grid, probe_count=point["probe.count"], seed=point["probe.seed"])
    rows = run_batch(point, ex, grid, C0, out, tag=f"point_{index}_")
    stats = t_star_stats(rows)
    if stats is None:
        row["reason"] = "infeasible: " + ",".join(sorted({r["binding"] for r in rows}))
    else:
        row["T_star_min"], row["T_star_median"], row["T_star_max"] = stats
        row["reason"] = "ok"
    return row


def cmd_sweep(cfg, out, manifest):
    N = cfg["dimension"]
    axes = [cfg["sweep.gamma"], cfg["sweep.p"], cfg["sweep.q"], cfg["sweep.hurst"]]
    size = math.prod(len(a) for a in axes)
    manifest["sweep.points"] = size
    if size == 0:
        raise ConfigError("empty sweep lattice")
    if size > cfg["sweep.max_points"]:
        raise ConfigError(f"sweep lattice has {size} points, budget sweep.max_points = "
                          f"{cfg['sweep.max_points']}")
    rows = [sweep_row(cfg, N, g, p, q, H, out, i)
            for i, (g, p, q, H) in enumerate(itertools.product(*axes))]
    write_csv(os.path.join(out, "sweep.csv"), SWEEP_FIELDS,
              [[r[k] for k in SWEEP_FIELDS] for r in rows])
    manifest["sweep.valid_points"] = sum(bool(r["valid"]) for r in rows)
    print(f"sweep: {size} points, {manifest['sweep.valid_points']} theorem-valid")
    return EXIT_OK


COMMANDS = {
    "validate-fbm": cmd_validate_fbm,
    "validate-smoothing": cmd_validate_smoothing,
    "estimate-time": cmd_estimate_time,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="henon-spde", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="flat key = value config file or manifest")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out", default="henon_out", help="output directory (default: henon_out)")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    os.makedirs(out, exist_ok=True)
    started = time.perf_counter()
    manifest = {
        "tool.name": "henon-spde",
        "tool.version": __version__,
        "command": args.command,
        "started_utc": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    code, message = EXIT_CONFIG, ""
    try:
        raw = load_config(args.config)
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        cfg = resolve(raw, SCHEMAS[args.command], source=args.config)
        for k, v in cfg.items():
            manifest[f"config.{k}"] = render(v)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TheoremHypothesisWarning)
            code = COMMANDS[args.command](cfg, out, manifest)
        flagged = [w for w in caught if issubclass(w.category, TheoremHypothesisWarning)]
        if flagged:
            manifest["flag.outside_theorem"] = str(flagged[0].message)
    except (ConfigError, OSError) as exc:
        code, message = EXIT_CONFIG, f"config error: {exc}"
    except UnsupportedBranchError as exc:
        code, message = EXIT_UNSUPPORTED, f"unsupported branch: {exc}"
    except PreconditionError as exc:
        code, message = EXIT_CONFIG, f"invalid parameters: {exc}"
    except InfeasibleError as exc:
        code = EXIT_INFEASIBLE
        message = f"infeasible (binding {exc.binding}): {exc}"
        manifest["infeasible.binding"] = exc.binding
    except DivergenceError as exc:
        code, message = EXIT_DIVERGENCE, f"divergence: {exc}"
    except DomainError as exc:
        code, message = EXIT_CONFIG, f"invalid parameters: {exc}"
    except Exception as exc:
        code, message = EXIT_CHECKS, f"internal error: {exc!r}"
        raise
    finally:
        manifest["status"] = {0: "ok", 1: "checks failed"}.get(code, "error")
        manifest["exit_code"] = code
        if message:
            manifest["error"] = message
        manifest["wall_clock_seconds"] = round(time.perf_counter() - started, 3)
        write_manifest(os.path.join(out, "manifest.txt"), manifest)
    if message:
        print(message, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
