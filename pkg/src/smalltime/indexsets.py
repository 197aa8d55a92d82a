"""Fractional exponent lattices for the small-time expansion.

Exponents live in Z + H^{-1} Z and are carried as integer pairs (u, v)
meaning u + v / H.  When H is supplied as an exact rational p/q the
arithmetic (ordering, dedupe, composition sums) is exact over Fractions;
for irrational H a 1e-9 value tolerance is used instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering

from .errors import InvalidArgumentError

_TOL = 1e-9

SET_NAMES = ("L1", "L2", "L2p", "L3", "L3p", "L4")


def parse_hurst(hurst):
    """Exact Fraction for rational input (str 'p/q', Fraction, int), float otherwise."""
    if isinstance(hurst, Fraction):
        return hurst
    if isinstance(hurst, str):
        return Fraction(hurst)
    if isinstance(hurst, int):
        return Fraction(hurst)
    return float(hurst)


def hurst_float(hurst):
    h = parse_hurst(hurst)
    return float(h)


@total_ordering
@dataclass(frozen=True)
class Exponent:
    """u + v / H with exact pair arithmetic."""

    u: int
    v: int
    hurst: object

    @property
    def exact(self):
        return isinstance(self.hurst, Fraction)

    @property
    def value(self):
        if self.exact:
            return self.u + self.v / self.hurst
        return self.u + self.v / float(self.hurst)

    @property
    def value_float(self):
        return float(self.value)

    def key(self):
        return self.value if self.exact else round(self.value / _TOL)

    def __add__(self, other):
        return Exponent(self.u + other.u, self.v + other.v, self.hurst)

    def __sub__(self, other):
        return Exponent(self.u - other.u, self.v - other.v, self.hurst)

    def shift(self, du):
        return Exponent(self.u + du, self.v, self.hurst)

    def __eq__(self, other):
        if isinstance(other, Exponent):
            return self.key() == other.key()
        return abs(self.value_float - float(other)) <= _TOL

    def __lt__(self, other):
        o = other.value_float if isinstance(other, Exponent) else float(other)
        return self.value_float < o - _TOL

    def __hash__(self):
        return hash(self.key())

    def __str__(self):
        return format_exponent(self)


def format_exponent(e):
    """Shortest faithful rendering: decimal if terminating, else p/q."""
    if e.exact:
        val = e.value
        if isinstance(val, Fraction):
            den = val.denominator
            while den % 2 == 0:
                den //= 2
            while den % 5 == 0:
                den //= 5
            if den == 1:
                out = float(val)
                return f"{int(out)}" if out == int(out) else repr(out)
            return f"{val.numerator}/{val.denominator}"
        return repr(float(val))
    v = e.value_float
    return f"{int(v)}" if abs(v - round(v)) <= _TOL else repr(v)


def _dedupe_sorted(exps):
    seen = {}
    for e in exps:
        k = e.key()
        if k not in seen or (abs(e.u) + abs(e.v)) < (abs(seen[k].u) + abs(seen[k].v)):
            seen[k] = e
    return sorted(seen.values(), key=lambda e: e.value_float)


def _lambda1(h, cutoff):
    out = []
    v = 0
    while True:
        base = Exponent(0, v, h)
        if base.value_float > cutoff + _TOL:
            break
        u = 0
        while base.shift(u).value_float <= cutoff + _TOL:
            out.append(base.shift(u))
            u += 1
        v += 1
    return _dedupe_sorted(out)


def _closure(generators, h, cutoff):
    """All finite sums of generators (plus 0), truncated at cutoff."""
    zero = Exponent(0, 0, h)
    known = {zero.key(): zero}
    frontier = [zero]
    gens = [g for g in generators if g.value_float > _TOL]
    while frontier:
        nxt = []
        for e in frontier:
            for g in gens:
                s = e + g
                if s.value_float <= cutoff + _TOL and s.key() not in known:
                    known[s.key()] = s
                    nxt.append(s)
        frontier = nxt
    return _dedupe_sorted(known.values())


def enumerate_exponents(hurst, which, cutoff):
    """Sorted exponents of one of the index sets L1, L2, L2p, L3, L3p, L4."""
    if cutoff <= 0:
        raise InvalidArgumentError("cutoff must be positive")
    if which not in SET_NAMES:
        raise InvalidArgumentError(f"unknown index set {which!r}; use one of {SET_NAMES}")
    h = parse_hurst(hurst)
    if which == "L1":
        return _lambda1(h, cutoff)
    lam1 = _lambda1(h, cutoff + 2)
    l2 = _dedupe_sorted([e.shift(-1) for e in lam1[1:]])
    if which == "L2":
        return [e for e in l2 if e.value_float <= cutoff + _TOL]
    l2p = _dedupe_sorted([e.shift(-2) for e in lam1[2:]])
    if which == "L2p":
        return [e for e in l2p if e.value_float <= cutoff + _TOL]
    if which == "L3":
        return _closure(l2, h, cutoff)
    if which == "L3p":
        return _closure(l2p, h, cutoff)
    l3 = _closure(l2, h, cutoff)
    l3p = _closure(l2p, h, cutoff)
    sums = [a + b for a in l3 for b in l3p if (a + b).value_float <= cutoff + _TOL]
    return _dedupe_sorted(sums)


def ordered_compositions(target, parts):
    """Ordered tuples of `parts` entries summing exactly to `target`.

    `target` may be 0 (the empty tuple).  Parts are the nonzero expansion
    exponents; all have value >= 1 for H <= 1/2, so recursion terminates.
    """
    if target.value_float < -_TOL:
        return []
    out = []

    def rec(remaining, acc):
        if abs(remaining.value_float) <= _TOL and (
            not remaining.exact or remaining.value == 0
        ):
            out.append(tuple(acc))
            return
        for p in parts:
            if p.value_float <= remaining.value_float + _TOL and p.value_float > _TOL:
                rec(remaining - p, acc + [p])

    rec(target, [])
    return out
