"""Grid paths: piecewise-linear paths sampled on a uniform grid of [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


def uniform_grid(M):
    """M+1 equispaced times on [0, 1]."""
    return np.linspace(0.0, 1.0, M + 1)


@dataclass(frozen=True)
class GridPath:
    """Values of a path on grid times, interpreted piecewise-linearly.

    ``values`` has shape (M+1, d) for a single path or (B, M+1, d) for a
    batch of B paths on the same grid.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, float)
        v = np.asarray(self.values, float)
        if t.ndim != 1 or t.shape[0] < 2:
            raise InvalidArgumentError("times must be a 1-d array with at least 2 points")
        if np.any(np.diff(t) <= 0):
            raise InvalidArgumentError("times must be strictly increasing")
        if abs(t[0]) > 1e-12 or abs(t[-1] - 1.0) > 1e-12:
            raise InvalidArgumentError("grid must start at 0 and end at 1")
        if v.ndim not in (2, 3) or v.shape[-2] != t.shape[0]:
            raise InvalidArgumentError("values shape does not match grid")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dim(self):
        return self.values.shape[-1]

    @property
    def n_cells(self):
        return self.times.shape[0] - 1

    @property
    def is_batch(self):
        return self.values.ndim == 3

    @property
    def n_paths(self):
        return self.values.shape[0] if self.is_batch else 1

    def path(self, i):
        """Extract one path from a batch."""
        if not self.is_batch:
            if i != 0:
                raise InvalidArgumentError("not a batch")
            return self
        return GridPath(self.times, self.values[i])

    def increments(self):
        return np.diff(self.values, axis=-2)

    def grid_index(self, t):
        """Index of grid time t; raises if t is not (close to) a grid point."""
        idx = int(round(float(t) * self.n_cells))
        if idx < 0 or idx > self.n_cells or abs(self.times[idx] - t) > 1e-9:
            raise InvalidArgumentError(f"{t} is not a grid point")
        return idx

    def __add__(self, other):
        if not np.allclose(self.times, other.times):
            raise InvalidArgumentError("grid mismatch")
        return GridPath(self.times, self.values + other.values)

    def __mul__(self, c):
        return GridPath(self.times, self.values * float(c))

    __rmul__ = __mul__


def zero_path(M, d):
    return GridPath(uniform_grid(M), np.zeros((M + 1, d)))


def path_from_increments(increments, times=None):
    """Cumulative path starting at 0 with the given cell increments."""
    inc = np.asarray(increments, float)
    M = inc.shape[-2]
    vals = np.zeros(inc.shape[:-2] + (M + 1, inc.shape[-1]))
    np.cumsum(inc, axis=-2, out=vals[..., 1:, :])
    return GridPath(uniform_grid(M) if times is None else times, vals)


def refine_linear(path, r):
    """Insert r-1 equally spaced points per cell by linear interpolation."""
    if r == 1:
        return path
    t = path.times
    M = path.n_cells
    fine_t = np.empty(M * r + 1)
    fine_t[-1] = t[-1]
    w = np.arange(r) / r
    fine_t[:-1] = (t[:-1, None] * (1 - w) + t[1:, None] * w).ravel()
    v = path.values
    fine_v = np.empty(v.shape[:-2] + (M * r + 1, v.shape[-1]))
    fine_v[..., -1, :] = v[..., -1, :]
    seg = v[..., :-1, None, :] * (1 - w)[:, None] + v[..., 1:, None, :] * w[:, None]
    fine_v[..., :-1, :] = seg.reshape(v.shape[:-2] + (M * r, v.shape[-1]))
    return GridPath(fine_t, fine_v)


def to_csv(path, file):
    """Write (time, components) rows; batches get one column block per path."""
    v = path.values
    if v.ndim == 3:
        flat = v.transpose(1, 0, 2).reshape(v.shape[1], -1)
    else:
        flat = v
    data = np.column_stack([path.times, flat])
    np.savetxt(file, data, delimiter=",", fmt="%.17g")
