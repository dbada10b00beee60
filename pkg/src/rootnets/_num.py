"""Numeric helpers shared across modules.

Weights are plain Python numbers: ``int``, ``float`` or ``fractions.Fraction``.
Operations preserve exactness whenever all inputs are rational; float inputs
fall back to exactly-rounded summation so that reduction order cannot move a
result past a tolerance.
"""

from __future__ import annotations

import math
from fractions import Fraction


def msum(values):
    """Deterministic sum: exactly-rounded for floats, exact for rationals."""
    vals = list(values)
    if not vals:
        return 0
    if all(isinstance(v, float) for v in vals):
        return math.fsum(vals)
    return sum(vals)


def close(a, b, tol):
    return abs(a - b) <= tol


def parse_weight(value, exact=False):
    """Parse a JSON weight: number, or a rational string like ``"1/3"``."""
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, bool):
        raise ValueError("weight must be a number, got a bool")
    if exact:
        if isinstance(value, int):
            return Fraction(value)
        return Fraction(str(value))
    return value


def weight_to_json(value):
    """Emit a weight: Fractions as strings so exact values round-trip."""
    if isinstance(value, Fraction):
        return str(value)
    return value
