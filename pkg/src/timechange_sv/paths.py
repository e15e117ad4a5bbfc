"""Core path numerics: time grids, Brownian sampling, quadrature.

Paths are stored as explicit (times, values) pairs because the time-change
maps act on the times directly; increments are always recomputed on demand.
All stochastic integrals and time integrals use the left-point (Ito) rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


class RandomStream:
    """Deterministic random source.

    The same (seed, stream) pair always replays the identical draw sequence,
    which makes every sampler in this package bit-reproducible. Distinct
    stream ids give statistically independent sequences for the same seed.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, size=None):
        return self._gen.uniform(size=size)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def spawn(self, stream: int) -> "RandomStream":
        return RandomStream(self.seed, stream)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream={self.stream})"


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing, finite time points.

    A single-point grid is allowed so that degenerate paths (no increments)
    can be represented.
    """

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValidationError("time grid must be a 1-d array with at least one point")
        if not np.all(np.isfinite(t)):
            raise ValidationError("time grid contains non-finite values")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValidationError("time grid must be strictly increasing")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return self.times.size

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    @classmethod
    def regular(cls, t0: float, t1: float, n_points: int) -> "TimeGrid":
        return cls(np.linspace(t0, t1, n_points))


@dataclass(frozen=True)
class Path:
    """A piecewise-linearly interpolated diffusion skeleton."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.grid),):
            raise ValidationError(
                f"path has {v.size} values for {len(self.grid)} grid points"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("path contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __len__(self):
        return len(self.grid)

    @classmethod
    def from_arrays(cls, times, values) -> "Path":
        return cls(TimeGrid(np.asarray(times, dtype=float)), values)


def sample_brownian_motion(grid: TimeGrid, start: float, rng: RandomStream) -> Path:
    """Sample a Brownian path on ``grid`` started at ``start``.

    Increments are independent Gaussians with variance equal to the time step.
    """
    n = len(grid)
    values = np.empty(n)
    values[0] = start
    if n > 1:
        steps = grid.steps
        values[1:] = start + np.cumsum(np.sqrt(steps) * rng.normal(n - 1))
    return Path(grid, values)


def bridge_moments(t_a: float, z_a: float, t_c: float, z_c: float, t_b: float):
    """Mean and variance of a Brownian path at ``t_b`` given its values at
    the flanking times ``t_a <= t_b <= t_c``."""
    if not (t_a <= t_b <= t_c):
        raise ValidationError(f"bridge time {t_b} outside [{t_a}, {t_c}]")
    if t_c == t_a:
        if z_a != z_c:
            raise ValidationError("degenerate bridge with conflicting endpoint values")
        return z_a, 0.0
    span = t_c - t_a
    mean = ((t_b - t_a) * z_c + (t_c - t_b) * z_a) / span
    var = (t_b - t_a) * (t_c - t_b) / span
    return mean, var


def sample_bridge_point(
    t_a: float, z_a: float, t_c: float, z_c: float, t_b: float, rng: RandomStream
) -> float:
    """Draw the value at ``t_b`` of a Brownian path pinned at the two
    flanking knots.

    The degenerate cases t_b == t_a and t_b == t_c return the corresponding
    endpoint deterministically, without consuming randomness; this keeps
    retrospective refinement deterministic at shared knots.
    """
    if t_b == t_a:
        return float(z_a)
    if t_b == t_c:
        return float(z_c)
    mean, var = bridge_moments(t_a, z_a, t_c, z_c, t_b)
    return float(mean + np.sqrt(var) * rng.normal())


def quadratic_variation(p: Path) -> float:
    """Sum of squared increments of the path values."""
    if len(p) < 2:
        raise ValidationError("quadratic variation needs at least two knots")
    dv = np.diff(p.values)
    return float(np.dot(dv, dv))


def integrate_left_riemann(grid: TimeGrid, integrand_values) -> float:
    """Left-point Riemann sum of tabulated integrand values over the grid."""
    f = np.asarray(integrand_values, dtype=float)
    if f.shape != (len(grid),):
        raise ValidationError("integrand length does not match grid")
    if len(grid) < 2:
        return 0.0
    return float(np.dot(f[:-1], grid.steps))


def cumulative_left_riemann(times: np.ndarray, integrand_values: np.ndarray) -> np.ndarray:
    """Cumulative left-point integral evaluated at every grid point.

    Works on batched rows: ``times`` and ``integrand_values`` may be
    (n, K)-shaped; the return has the same shape with zeros in column 0.
    """
    t = np.asarray(times, dtype=float)
    f = np.asarray(integrand_values, dtype=float)
    inc = f[..., :-1] * np.diff(t, axis=-1)
    out = np.zeros_like(t)
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out
