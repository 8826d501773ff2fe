"""Deterministic, publicly reproducible ballot selection.

Draw j maps the seed to a fraction r_j = (Z_j + 1) / 2^256, where Z_j is the
256-bit integer value of SHA-256 over `seed + "," + str(j)`.  The selected
row is ceil(N * r_j), computed in integer arithmetic so no draw is ever
floating-point dependent and any observer can re-verify a single draw in
isolation.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import MalformedInputError

TWO_256 = 1 << 256


@dataclass(frozen=True)
class DrawIndex:
    """One draw: its counter j, the fraction r_j, and the 1-based row index."""

    j: int
    r: Fraction
    index: int


def draw_input(seed: str, j: int) -> str:
    """The exact string hashed for draw j (published for re-verification)."""
    return f"{seed},{j}"


def prng_fraction(seed: str, j: int) -> Fraction:
    """Fraction in (0, 1] for draw j of the seeded stream."""
    if j < 1:
        raise MalformedInputError("draw counter starts at 1")
    digest = hashlib.sha256(draw_input(seed, j).encode("utf-8")).digest()
    z = int.from_bytes(digest, "big")
    return Fraction(z + 1, TWO_256)


def index_from_fraction(r: Fraction, total: int) -> int:
    """ceil(total * r) in exact integer arithmetic; in [1, total] for r in (0, 1]."""
    if total < 1:
        raise MalformedInputError("population size must be positive")
    num = total * r.numerator
    den = r.denominator
    return -(-num // den)


def draw_index(seed: str, j: int, total: int) -> DrawIndex:
    r = prng_fraction(seed, j)
    return DrawIndex(j=j, r=r, index=index_from_fraction(r, total))


def draw_sequence(seed: str, total: int, count: int, start: int = 1) -> list[DrawIndex]:
    """Draws start..start+count-1.  Repeats are kept: sampling is with
    replacement, and extending the count never changes earlier draws."""
    if count < 0:
        raise MalformedInputError("draw count must be nonnegative")
    return [draw_index(seed, j, total) for j in range(start, start + count)]


def parse_dice_seed(text: str) -> str:
    """Normalize a die-roll transcript (digits with arbitrary separators)
    into the seed string: the digits concatenated in order."""
    digits = re.sub(r"[\s,;/|-]+", "", text)
    if not digits or not digits.isdigit():
        raise MalformedInputError(
            "dice transcript must contain only digits and separators"
        )
    return digits
