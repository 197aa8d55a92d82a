"""Level-N rough paths on a grid: lifting, dilation, time pairing, Young translation.

A :class:`RoughPathGrid` stores per-cell signatures and Chen-folded prefix
signatures as stacked arrays.  Between grid points every path is interpreted
piecewise-linearly; cells of a genuine polyline lift are exactly segment
signatures, and all operations below are exact on such lifts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_sig
from .errors import InvalidArgumentError
from .paths import GridPath, refine_linear
from .tensor_sig import TruncatedSignature


def _fold_prefixes(cell1, cell2, cell3):
    """Chen-fold cell signatures into prefix signatures S_{0,t_k}."""
    M, d = cell1.shape
    p1 = np.zeros((M + 1, d))
    p2 = np.zeros((M + 1, d, d)) if cell2 is not None else None
    p3 = np.zeros((M + 1, d, d, d)) if cell3 is not None else None
    for k in range(M):
        p1[k + 1] = p1[k] + cell1[k]
        if p2 is not None:
            p2[k + 1] = p2[k] + np.multiply.outer(p1[k], cell1[k]) + cell2[k]
        if p3 is not None:
            p3[k + 1] = (
                p3[k]
                + np.multiply.outer(p2[k], cell1[k])
                + np.multiply.outer(p1[k], cell2[k])
                + cell3[k]
            )
    return p1, p2, p3


@dataclass(frozen=True)
class RoughPathGrid:
    """Cell and prefix signatures of a level-N rough path on a uniform grid."""

    dim: int
    depth: int
    times: np.ndarray
    cell1: np.ndarray
    cell2: np.ndarray
    cell3: np.ndarray | None
    prefix1: np.ndarray
    prefix2: np.ndarray
    prefix3: np.ndarray | None

    @property
    def n_cells(self):
        return self.times.shape[0] - 1

    @property
    def values(self):
        """Level-1 path values x_t = x^1_{0,t}."""
        return self.prefix1

    def as_grid_path(self):
        return GridPath(self.times, self.prefix1)

    def cell_sig(self, k):
        return TruncatedSignature(
            self.dim, self.depth, self.cell1[k],
            self.cell2[k], None if self.cell3 is None else self.cell3[k],
        )

    def prefix_sig(self, k):
        return TruncatedSignature(
            self.dim, self.depth, self.prefix1[k],
            self.prefix2[k], None if self.prefix3 is None else self.prefix3[k],
        )

    def increment_levels(self, j, k):
        """Levels of x_{t_j, t_k} for grid indices j <= k, via Chen."""
        l1 = self.prefix1[k] - self.prefix1[j]
        l2 = self.prefix2[k] - self.prefix2[j] - np.multiply.outer(self.prefix1[j], l1)
        l3 = None
        if self.cell3 is not None:
            l3 = (
                self.prefix3[k]
                - self.prefix3[j]
                - np.multiply.outer(self.prefix2[j], l1)
                - np.multiply.outer(self.prefix1[j], l2)
            )
        return l1, l2, l3

    def increments_from(self, j):
        """Levels of x_{t_j, t_k} for all k, vectorized over k."""
        l1 = self.prefix1 - self.prefix1[j]
        l2 = self.prefix2 - self.prefix2[j] - np.einsum("i,kj->kij", self.prefix1[j], l1)
        l3 = None
        if self.cell3 is not None:
            l3 = (
                self.prefix3
                - self.prefix3[j]
                - np.einsum("ij,kl->kijl", self.prefix2[j], l1)
                - np.einsum("i,kjl->kijl", self.prefix1[j], l2)
            )
        return l1, l2, l3


def _from_cells(times, cell1, cell2, cell3):
    p1, p2, p3 = _fold_prefixes(cell1, cell2, cell3)
    return RoughPathGrid(cell1.shape[1], 2 if cell3 is None else 3,
                         times, cell1, cell2, cell3, p1, p2, p3)


def segment_cells(increments, depth):
    """Stacked segment signatures for an array of cell increments (M, d)."""
    inc = np.asarray(increments, float)
    c2 = 0.5 * np.einsum("mi,mj->mij", inc, inc)
    c3 = None
    if depth >= 3:
        c3 = np.einsum("mij,mk->mijk", c2, inc) / 3.0
    return inc, c2, c3


def lift_grid_path(x, depth):
    """Canonical lift of a piecewise-linear grid path to a level-``depth`` rough path."""
    if depth not in (2, 3):
        raise InvalidArgumentError(f"lift depth must be 2 or 3, got {depth}")
    if x.is_batch:
        raise InvalidArgumentError("lift_grid_path takes a single path; index the batch first")
    c1, c2, c3 = segment_cells(x.increments(), depth)
    return _from_cells(x.times, c1, c2, c3)


def dilate(x, c):
    """Dilation: every signature level i is scaled by c^i."""
    c = float(c)
    return RoughPathGrid(
        x.dim, x.depth, x.times,
        c * x.cell1, c * c * x.cell2,
        None if x.cell3 is None else c ** 3 * x.cell3,
        c * x.prefix1, c * c * x.prefix2,
        None if x.prefix3 is None else c ** 3 * x.prefix3,
    )


def pair_with_time(x, c):
    """Young pairing of x with the time path lambda_t = c*t as the last coordinate.

    Cross iterated integrals are closed-form per cell, treating both
    components as linear on the cell; pure-x blocks keep the cell
    signatures of x.
    """
    d = x.dim
    M = x.n_cells
    dt = np.diff(x.times) * float(c)
    joint_inc = np.concatenate([x.cell1, dt[:, None]], axis=1)
    c1, c2, c3 = segment_cells(joint_inc, x.depth)
    c2 = c2.copy()
    c2[:, :d, :d] = x.cell2
    if c3 is not None:
        c3 = c3.copy()
        c3[:, :d, :d, :d] = x.cell3
    return _from_cells(x.times, c1, c2, c3)


def _split_cells(x, r):
    """Split each cell of x into r sub-cells via the truncated-log geodesic root.

    For segment cells this is plain linear refinement; chaining the r
    sub-signatures reproduces the original cell signature exactly.
    """
    M, d = x.cell1.shape
    depth = x.depth
    sub1 = np.empty((M * r, d))
    sub2 = np.empty((M * r, d, d))
    sub3 = np.empty((M * r, d, d, d)) if depth >= 3 else None
    for k in range(M):
        root = tensor_sig.sig_root(x.cell_sig(k), r)
        sub1[k * r:(k + 1) * r] = root.level1
        sub2[k * r:(k + 1) * r] = root.level2
        if sub3 is not None:
            sub3[k * r:(k + 1) * r] = root.level3
    fine_t = np.empty(M * r + 1)
    fine_t[-1] = x.times[-1]
    w = np.arange(r) / r
    fine_t[:-1] = (x.times[:-1, None] * (1 - w) + x.times[1:, None] * w).ravel()
    return fine_t, sub1, sub2, sub3


def young_translate(x, gamma, refine=1):
    """Translate a depth-3 rough path by a grid path gamma on the same grid.

    The level-2 corrections (x-gamma cross integrals) and the six level-3
    corrections are realized exactly for the piecewise-linear interpretation
    by lifting the joint path (x, gamma) over R^{2d} and summing coordinate
    blocks; the pure-x blocks of the joint lift carry the cell signatures of
    x, so any intrinsic area of x is preserved.  For a polyline lift x this
    returns lift(x + gamma) exactly.  ``refine`` sub-divides each cell
    geodesically before the joint lift.
    """
    if x.depth != 3:
        raise InvalidArgumentError("young_translate needs a depth-3 rough path")
    if gamma.is_batch:
        raise InvalidArgumentError("young_translate takes a single gamma path")
    if gamma.values.shape[0] != x.times.shape[0] or not np.allclose(gamma.times, x.times):
        raise InvalidArgumentError("gamma must live on the grid of x")
    if gamma.dim != x.dim:
        raise InvalidArgumentError("gamma dimension mismatch")
    d = x.dim
    M = x.n_cells

    if refine > 1:
        _, xs1, xs2, xs3 = _split_cells(x, refine)
        g_inc = refine_linear(gamma, refine).increments()
    else:
        xs1, xs2, xs3 = x.cell1, x.cell2, x.cell3
        g_inc = gamma.increments()

    # joint lift of (x, gamma) over R^{2d}, pure-x blocks from x itself
    joint_inc = np.concatenate([xs1, g_inc], axis=1)
    j1, j2, j3 = segment_cells(joint_inc, 3)
    j2 = j2.copy()
    j2[:, :d, :d] = xs2
    j3 = j3.copy()
    j3[:, :d, :d, :d] = xs3

    # fold sub-cells back into one joint signature per data cell
    r = refine
    if r > 1:
        f1 = np.empty((M, 2 * d))
        f2 = np.empty((M, 2 * d, 2 * d))
        f3 = np.empty((M, 2 * d, 2 * d, 2 * d))
        for k in range(M):
            sl = slice(k * r, (k + 1) * r)
            q1, q2, q3 = _fold_prefixes(j1[sl], j2[sl], j3[sl])
            f1[k], f2[k], f3[k] = q1[-1], q2[-1], q3[-1]
        j1, j2, j3 = f1, f2, f3

    # block sums: tau^i collapses R^{2d} levels onto R^d
    c1 = x.cell1 + gamma.increments()  # level 1 is the plain sum, bit-exact
    c2 = j2[:, :d, :d] + j2[:, :d, d:] + j2[:, d:, :d] + j2[:, d:, d:]
    c3 = np.zeros((M, d, d, d))
    for a in (slice(0, d), slice(d, 2 * d)):
        for b in (slice(0, d), slice(d, 2 * d)):
            for c in (slice(0, d), slice(d, 2 * d)):
                c3 += j3[:, a, b, c]
    return _from_cells(x.times, c1, c2, c3)


def prefix_chen_defect(x):
    """Max deviation from S_{0,t_{k+1}} = S_{0,t_k} * S_{t_k,t_{k+1}} over all cells."""
    worst = 0.0
    for k in range(x.n_cells):
        lhs = x.prefix_sig(k + 1)
        rhs = tensor_sig.chen_mul(x.prefix_sig(k), x.cell_sig(k))
        worst = max(worst, tensor_sig.max_abs_diff(lhs, rhs))
    return worst


def grouplike_defect(x):
    """Max level-2 symmetry defect over all cell and prefix signatures."""
    worst = 0.0
    for k in range(x.n_cells + 1):
        worst = max(worst, tensor_sig.symmetry_defect(x.prefix_sig(k)))
        if k < x.n_cells:
            worst = max(worst, tensor_sig.symmetry_defect(x.cell_sig(k)))
    return worst
