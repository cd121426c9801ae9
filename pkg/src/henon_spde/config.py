"""Flat ``key = value`` configuration with ``#`` comments and dotted namespaces."""

import math
import re

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


class ConfigError(ValueError):
    def __init__(self, message, line=None, source=None):
        where = f"{source}:{line}: " if line is not None else (f"{source}: " if source else "")
        super().__init__(where + message)
        self.line = line


def parse_config(text, source="<config>"):
    """Raw ``{key: string}`` mapping; syntax errors carry the line number."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n, source)
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"invalid key {key!r}", n, source)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", n, source)
        out[key] = value
    return out


def load_config(path):
    """Read a config file; a run manifest is accepted via its ``config.*`` echo."""
    with open(path) as fh:
        raw = parse_config(fh.read(), source=path)
    echoed = {k[len("config."):]: v for k, v in raw.items() if k.startswith("config.")}
    return echoed if echoed else raw


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float(s):
    v = s.strip().lower()
    if v == "pi":
        return math.pi
    return float(v)


def _floats(s):
    return [_float(x) for x in s.split(",") if x.strip()]


def _strings(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else _float(s)


PARSERS = {
    int: int,
    float: _float,
    bool: _bool,
    str: str,
    "floats": _floats,
    "strings": _strings,
    "opt_float": _opt_float,
}


def render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(render(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolve(raw, schema, source="<config>"):
    """Typed config from raw strings: unknown keys rejected, defaults filled."""
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", source=source)
    out = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            try:
                out[key] = PARSERS[kind](raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}", source=source) from None
        else:
            out[key] = default
    return out


_PROBLEM = {
    "seed": (int, 42),
    "dimension": (int, 3),
    "gamma": (float, 1.0),
    "p": (float, 2.0),
    "q": (float, 4.0),
    "hurst": (float, 0.8),
    "validation_mode": (bool, False),
    "box.half_width": (float, math.pi),
    "box.points": (int, 32),
    "time.nodes": (int, 32),
    "time.graded": (bool, False),
    "time.refine": (float, 1.05),
    "horizon": (float, 0.1),
    "noise.enabled": (bool, True),
    "noise.m_max": (int, 8),
    "u0.kind": (str, "gaussian"),
    "u0.amplitude": (float, 0.05),
    "u0.width": (float, 1.0),
    "probe.count": (int, 44),
    "probe.seed": (int, 0),
    "solver.M": ("opt_float", None),
    "solver.m_policy": (str, "default"),
    "batch.seeds": (int, 1),
}

SCHEMAS = {
    "validate-fbm": {
        "seed": (int, 42),
        "hurst": (float, 0.75),
        "horizon": (float, 1.0),
        "nodes": (int, 64),
        "samples": (int, 10000),
        "kernel_checks": (bool, True),
        "isometry.functions": (int, 10),
        "isometry.cells": (int, 32),
        "tolerance.variance": (float, 0.05),
        "tolerance.covariance": (float, 0.05),
        "tolerance.isometry": (float, 0.01),
    },
    "validate-smoothing": {
        "seed": (int, 0),
        "dimension": (int, 2),
        "box.half_width": (float, 10.0),
        "box.points": (int, 128),
        "probe.count": (int, 44),
        "probe.times": (int, 12),
        "cases": ("strings", ["0:4:4", "0.5:4:4", "0.5:2:4", "1:4:3"]),
        "tolerance.slope": (float, 0.10),
    },
    "estimate-time": dict(_PROBLEM, **{
        "override.K": ("opt_float", None),
        "override.C0": ("opt_float", None),
        "override.C1": ("opt_float", None),
        "override.C2": ("opt_float", None),
        "override.u0_norm": ("opt_float", None),
    }),
    "simulate": dict(_PROBLEM, **{
        "certify": (bool, True),
        "solver.tol": (float, 1e-10),
        "solver.max_iter": (int, 60),
        "snapshots": (int, 4),
    }),
    "sweep": dict(_PROBLEM, **{
        "sweep.gamma": ("floats", [1.0]),
        "sweep.p": ("floats", [2.0]),
        "sweep.q": ("floats", [4.0]),
        "sweep.hurst": ("floats", [0.8]),
        "sweep.max_points": (int, 10000),
        "sweep.estimate_time": (bool, False),
    }),
}
