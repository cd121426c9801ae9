"""Gamma and Beta functions via the Lanczos approximation (g = 7, 9 terms)."""

import math

_G = 7.0
_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _lanczos_sum(z):
    # z is the shifted argument x - 1
    acc = _COEF[0]
    for k in range(1, len(_COEF)):
        acc += _COEF[k] / (z + k)
    return acc


def gamma(x):
    """Gamma function for real ``x`` (poles at non-positive integers raise)."""
    x = float(x)
    if x <= 0 and x == math.floor(x):
        raise ValueError(f"gamma has a pole at {x}")
    if x < 0.5:
        # reflection formula
        return math.pi / (math.sin(math.pi * x) * gamma(1.0 - x))
    z = x - 1.0
    t = z + _G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * math.exp(-t) * _lanczos_sum(z)


def log_gamma(x):
    """Logarithm of Gamma for ``x > 0``."""
    x = float(x)
    if x <= 0:
        raise ValueError("log_gamma needs x > 0")
    if x < 0.5:
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)
    z = x - 1.0
    t = z + _G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * math.log(t) - t + math.log(_lanczos_sum(z))


def beta(x, y):
    """Beta function B(x, y) = Gamma(x) Gamma(y) / Gamma(x + y), for x, y > 0."""
    from .errors import DomainError

    x, y = float(x), float(y)
    if not (x > 0 and y > 0):
        raise DomainError(f"beta needs positive arguments, got ({x}, {y})")
    if x + y < 50:
        return gamma(x) * gamma(y) / gamma(x + y)
    return math.exp(log_gamma(x) + log_gamma(y) - log_gamma(x + y))
