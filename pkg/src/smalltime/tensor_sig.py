"""Truncated tensor algebra over R^d up to level 3.

A group-like element is stored as its levels (x^1, .., x^N), N in {1,2,3};
the scalar level 0 is implicitly 1.  Chen multiplication, dilation, inversion
and truncated log/exp are all closed-form at this depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

_DEPTHS = (1, 2, 3)


@dataclass(frozen=True)
class TruncatedSignature:
    """Levels 1..depth of a truncated signature over R^dim."""

    dim: int
    depth: int
    level1: np.ndarray
    level2: np.ndarray | None = None
    level3: np.ndarray | None = None

    def __post_init__(self):
        if self.depth not in _DEPTHS:
            raise InvalidArgumentError(f"depth must be in {_DEPTHS}, got {self.depth}")
        if self.level1.shape != (self.dim,):
            raise InvalidArgumentError("level1 has wrong shape")
        if self.depth >= 2 and (self.level2 is None or self.level2.shape != (self.dim,) * 2):
            raise InvalidArgumentError("level2 missing or has wrong shape")
        if self.depth >= 3 and (self.level3 is None or self.level3.shape != (self.dim,) * 3):
            raise InvalidArgumentError("level3 missing or has wrong shape")

    def level(self, i):
        if not 1 <= i <= self.depth:
            raise InvalidArgumentError(f"level {i} not stored (depth {self.depth})")
        return (self.level1, self.level2, self.level3)[i - 1]

    def levels(self):
        return [self.level(i) for i in range(1, self.depth + 1)]


def _check_pair(s1, s2):
    if s1.dim != s2.dim or s1.depth != s2.depth:
        raise InvalidArgumentError(
            f"mismatched signatures: dim {s1.dim}/{s2.dim}, depth {s1.depth}/{s2.depth}"
        )


def identity(dim, depth):
    """Group identity: all levels zero."""
    return from_levels(
        dim,
        depth,
        np.zeros(dim),
        np.zeros((dim, dim)) if depth >= 2 else None,
        np.zeros((dim, dim, dim)) if depth >= 3 else None,
    )


def from_levels(dim, depth, l1, l2=None, l3=None):
    return TruncatedSignature(dim, depth, np.asarray(l1, float),
                              None if l2 is None else np.asarray(l2, float),
                              None if l3 is None else np.asarray(l3, float))


def segment_signature(delta, depth):
    """Closed-form signature of a linear segment with increment ``delta``.

    Level i is delta^{tensor i} / i!.
    """
    if depth not in _DEPTHS:
        raise InvalidArgumentError(f"depth must be in {_DEPTHS}, got {depth}")
    delta = np.asarray(delta, float)
    d = delta.shape[0]
    l2 = np.multiply.outer(delta, delta) / 2.0 if depth >= 2 else None
    l3 = None
    if depth >= 3:
        l3 = np.multiply.outer(np.multiply.outer(delta, delta), delta) / 6.0
    return TruncatedSignature(d, depth, delta, l2, l3)


def chen_mul(s1, s2):
    """Chen product s1 * s2 (concatenation of the underlying paths)."""
    _check_pair(s1, s2)
    l1 = s1.level1 + s2.level1
    l2 = l3 = None
    if s1.depth >= 2:
        l2 = s1.level2 + np.multiply.outer(s1.level1, s2.level1) + s2.level2
    if s1.depth >= 3:
        l3 = (
            s1.level3
            + np.multiply.outer(s1.level2, s2.level1)
            + np.multiply.outer(s1.level1, s2.level2)
            + s2.level3
        )
    return TruncatedSignature(s1.dim, s1.depth, l1, l2, l3)


def dilate_sig(s, c):
    """Dilation by c: level i is scaled by c^i."""
    c = float(c)
    l2 = None if s.level2 is None else (c * c) * s.level2
    l3 = None if s.level3 is None else (c ** 3) * s.level3
    return TruncatedSignature(s.dim, s.depth, c * s.level1, l2, l3)


def sig_inverse(s):
    """Group inverse: chen_mul(s, sig_inverse(s)) is the identity."""
    a = s.level1
    l1 = -a
    l2 = l3 = None
    if s.depth >= 2:
        aa = np.multiply.outer(a, a)
        l2 = -s.level2 + aa
    if s.depth >= 3:
        l3 = (
            -s.level3
            + np.multiply.outer(a, s.level2)
            + np.multiply.outer(s.level2, a)
            - np.multiply.outer(aa, a)
        )
    return TruncatedSignature(s.dim, s.depth, l1, l2, l3)


def log_sig(s):
    """Truncated logarithm, returned as plain level tensors (L1, L2, L3)."""
    a = s.level1
    L1 = a.copy()
    L2 = L3 = None
    if s.depth >= 2:
        L2 = s.level2 - 0.5 * np.multiply.outer(a, a)
    if s.depth >= 3:
        L3 = (
            s.level3
            - 0.5 * (np.multiply.outer(a, s.level2) + np.multiply.outer(s.level2, a))
            + np.multiply.outer(np.multiply.outer(a, a), a) / 3.0
        )
    return L1, L2, L3


def exp_sig(dim, depth, L1, L2=None, L3=None):
    """Truncated exponential, inverse of :func:`log_sig`."""
    l1 = np.asarray(L1, float)
    l2 = l3 = None
    if depth >= 2:
        l2 = np.asarray(L2, float) + 0.5 * np.multiply.outer(l1, l1)
    if depth >= 3:
        l2_lie = np.asarray(L2, float)
        l3 = (
            np.asarray(L3, float)
            + 0.5 * (np.multiply.outer(l1, l2_lie) + np.multiply.outer(l2_lie, l1))
            + np.multiply.outer(np.multiply.outer(l1, l1), l1) / 6.0
        )
    return TruncatedSignature(dim, depth, l1, l2, l3)


def sig_root(s, r):
    """r-th geodesic root: chaining the result r times reproduces s."""
    L1, L2, L3 = log_sig(s)
    inv = 1.0 / r
    return exp_sig(
        s.dim,
        s.depth,
        L1 * inv,
        None if L2 is None else L2 * inv,
        None if L3 is None else L3 * inv,
    )


def symmetry_defect(s):
    """Max deviation of sym(level2) from level1 x level1 / 2 (0 for group-like)."""
    if s.depth < 2:
        return 0.0
    sym = 0.5 * (s.level2 + s.level2.T)
    return float(np.max(np.abs(sym - 0.5 * np.multiply.outer(s.level1, s.level1))))


def max_abs_diff(s1, s2):
    """Largest entrywise difference across all stored levels."""
    _check_pair(s1, s2)
    out = float(np.max(np.abs(s1.level1 - s2.level1)))
    if s1.depth >= 2:
        out = max(out, float(np.max(np.abs(s1.level2 - s2.level2))))
    if s1.depth >= 3:
        out = max(out, float(np.max(np.abs(s1.level3 - s2.level3))))
    return out
