"""Digamma, trigamma and tetragamma for positive real arguments.

The argument is shifted upward with the recurrence
``psi^(m)(x) = psi^(m)(x + 1) - (-1)^m m! / x^(m+1)`` until it reaches
``ASYMPTOTIC_START``, where the Bernoulli asymptotic series converges to
well below double precision.
"""

import math

from .errors import DomainError

ASYMPTOTIC_START = 8.0

# B_2, B_4, ..., B_16
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
)


def _digamma_asym(x):
    inv2 = 1.0 / (x * x)
    acc = 0.0
    p = inv2
    for k, b in enumerate(_BERNOULLI, start=1):
        acc += b / (2 * k) * p
        p *= inv2
    return math.log(x) - 0.5 / x - acc


def _trigamma_asym(x):
    inv2 = 1.0 / (x * x)
    acc = 0.0
    p = inv2 / x
    for b in _BERNOULLI:
        acc += b * p
        p *= inv2
    return 1.0 / x + 0.5 * inv2 + acc


def _tetragamma_asym(x):
    inv2 = 1.0 / (x * x)
    acc = 0.0
    p = inv2 * inv2
    for k, b in enumerate(_BERNOULLI, start=1):
        acc += (2 * k + 1) * b * p
        p *= inv2
    return -inv2 - inv2 / x - acc


_ASYM = (_digamma_asym, _trigamma_asym, _tetragamma_asym)


def polygamma(order, x):
    """Polygamma function of order 0, 1 or 2 at ``x > 0``.

    Parameters
    ----------
    order : int
        0 for digamma, 1 for trigamma, 2 for tetragamma.
    x : float
        Strictly positive argument.

    Returns
    -------
    float
    """
    if order not in (0, 1, 2):
        raise ValueError(f"polygamma order must be 0, 1 or 2, got {order!r}")
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise DomainError(f"polygamma requires a finite x > 0, got {x!r}")

    shifts = []
    while x < ASYMPTOTIC_START:
        shifts.append(x)
        x += 1.0
    value = _ASYM[order](x)
    # largest shift terms come from the smallest x; add them last
    for s in reversed(shifts):
        if order == 0:
            value -= 1.0 / s
        elif order == 1:
            value += 1.0 / (s * s)
        else:
            value -= 2.0 / (s * s * s)
    return value


def digamma(x):
    return polygamma(0, x)


def trigamma(x):
    return polygamma(1, x)


def tetragamma(x):
    return polygamma(2, x)
