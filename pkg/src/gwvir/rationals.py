"""Exact rational values and their canonical text form.

Rationals are stdlib ``fractions.Fraction`` throughout: arbitrary precision,
always in lowest terms with positive denominator.  The wire format is the
decimal string ``p/q`` (or just ``p`` when q = 1), no whitespace; round trips
are bit-exact.
"""

from __future__ import annotations

import re
from fractions import Fraction

from .errors import ParseError

_RATIONAL_RE = re.compile(r"^(-?\d+)(?:/([1-9]\d*))?$")


def format_rational(value: Fraction) -> str:
    """Render a Fraction as ``p/q`` or ``p`` (lowest terms, no spaces)."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def parse_rational(text: str) -> Fraction:
    """Parse the ``p/q`` wire format; reject anything else."""
    m = _RATIONAL_RE.match(text)
    if m is None:
        raise ParseError(f"not a rational literal: {text!r}")
    num = int(m.group(1))
    den = int(m.group(2)) if m.group(2) else 1
    return Fraction(num, den)
