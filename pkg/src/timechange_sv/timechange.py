"""Time-change transformations for one observation interval.

Two warps are applied per interval. The first stretches observation time by
the integrated squared volatility, making the path a unit-volatility
diffusion U on [0, T]. The second centers U around the chord between its
endpoints and stretches time again, producing a path Z on [0, +inf) whose
dominating measure is a parameter-free standard Brownian motion; the
endpoint of Z lives at time +inf with value 0 and is never stored.

Both warps are exactly invertible at the stored knots, and the warped times
of missing knots can always be filled in retrospectively by conditioning on
the stored ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericsError, ValidationError
from .models import ModelSpec, ParamVector
from .paths import Path, RandomStream, TimeGrid, cumulative_left_riemann

# Relative margin below T at which the second warp is still evaluated; closer
# to T the warped time overflows.
_ENDPOINT_EPS = 1e-10


@dataclass(frozen=True)
class EtaProfile:
    """Monotone piecewise-linear map from observation time to warped time.

    Knots are (x_time, u_time) pairs with u_time[0] == 0 at the interval's
    left endpoint; between knots the map is linear, which keeps the inverse
    closed-form on each segment.
    """

    x_knots: np.ndarray
    u_knots: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_knots, dtype=float)
        u = np.asarray(self.u_knots, dtype=float)
        if x.shape != u.shape or x.ndim != 1 or x.size < 2:
            raise ValidationError("time-warp profile needs matching 1-d knot arrays")
        if u[0] != 0.0:
            raise ValidationError("warped time must start at zero")
        if not (np.all(np.diff(x) > 0) and np.all(np.diff(u) > 0)):
            raise ValidationError("time-warp knots must be strictly increasing")
        object.__setattr__(self, "x_knots", x)
        object.__setattr__(self, "u_knots", u)

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.x_knots[0]), float(self.x_knots[-1])

    @property
    def total(self) -> float:
        """Warped length T of the interval."""
        return float(self.u_knots[-1])

    def u_of_x(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        lo, hi = self.interval
        if np.any(t < lo) or np.any(t > hi):
            raise ValidationError("time outside the warp profile's domain")
        return np.interp(t, self.x_knots, self.u_knots)

    def x_of_u(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if np.any(u < 0.0) or np.any(u > self.total):
            raise ValidationError("warped time outside [0, T]")
        return np.interp(u, self.u_knots, self.x_knots)


@dataclass(frozen=True)
class IntervalPaths:
    """Warped-path bundle for one observation interval.

    ``u`` runs on [0, T] and carries the data endpoints; ``z`` holds the
    finite-time knots of the doubly-warped path (its endpoint at +inf has
    value 0 and is implicit).
    """

    y0: float
    y1: float
    total: float
    u: Path
    z: Path

    def __post_init__(self):
        if self.u.values[0] != self.y0 or self.u.values[-1] != self.y1:
            raise ValidationError("warped path endpoints disagree with the data")
        if abs(self.u.times[-1] - self.total) > 1e-12 * max(1.0, self.total):
            raise ValidationError("warped path must end at time T")


def build_eta(
    interval: tuple[float, float],
    gamma: Optional[Path],
    params: ParamVector,
    model: ModelSpec,
) -> EtaProfile:
    """Integrated squared volatility of the interval, as a warp profile.

    For constant-volatility models the profile is linear with slope vol^2.
    For stochastic-volatility models it is the left-point cumulative sum of
    the squared (leverage-reduced) volatility along the latent path, with
    knots wherever the latent path has knots inside the interval.
    """
    t_a, t_b = float(interval[0]), float(interval[1])
    if not t_b > t_a:
        raise ValidationError("interval endpoints must be increasing")

    if not model.has_latent:
        vol = float(model.vol_x(0.0, params))
        if not vol > 0.0:
            raise NumericsError("volatility must be strictly positive")
        x = np.array([t_a, t_b])
        return EtaProfile(x, vol * vol * (x - t_a))

    if gamma is None:
        raise ValidationError("stochastic-volatility models need a latent path")
    mask = (gamma.times >= t_a - 1e-12) & (gamma.times <= t_b + 1e-12)
    x = gamma.times[mask]
    if x.size < 2 or abs(x[0] - t_a) > 1e-9 or abs(x[-1] - t_b) > 1e-9:
        raise ValidationError("latent path must have knots at both interval endpoints")
    g = gamma.values[mask]
    scale = model.latent_scale(params)
    alpha = params["alpha0"] + scale * g
    sx = np.asarray(model.vol_x(alpha, params), dtype=float)
    if np.any(sx <= 0.0) or not np.all(np.isfinite(sx)):
        raise NumericsError("volatility evaluation non-positive or non-finite")
    rho = model.rho(params)
    veff2 = (1.0 - rho * rho) * sx * sx
    u = cumulative_left_riemann(x, veff2)
    return EtaProfile(x, u)


def x_to_u(x_path: Path, eta: EtaProfile) -> Path:
    """Warp a path's times through the profile; values are untouched."""
    return Path.from_arrays(eta.u_of_x(x_path.times), x_path.values)


def u_to_x(u_path: Path, eta: EtaProfile) -> Path:
    """Inverse warp back to observation time."""
    return Path.from_arrays(eta.x_of_u(u_path.times), u_path.values)


def z_time(t, total: float):
    """Second warp of the time axis: t -> t / (T (T - t)) on [0, T).

    Strictly increasing and diverging as t approaches T; the endpoint itself
    is reserved for the implicit knot at +inf.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValidationError("warped time must be nonnegative")
    if np.any(t >= total * (1.0 - _ENDPOINT_EPS)):
        raise NumericsError("time too close to the interval end for the second warp")
    out = t / (total * (total - t))
    return float(out) if out.ndim == 0 else out


def u_time(s, total: float):
    """Inverse of ``z_time``: s -> T^2 s / (1 + T s)."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0):
        raise ValidationError("doubly-warped time must be nonnegative")
    out = total * total * s / (1.0 + total * s)
    return float(out) if out.ndim == 0 else out


def _chord(u_times: np.ndarray, total: float, y0: float, y1: float) -> np.ndarray:
    return y0 + (u_times / total) * (y1 - y0)


def u_to_z(u_path: Path, total: float) -> Path:
    """Center a bridge-like path at its chord and stretch it onto [0, +inf).

    The input carries its endpoint (T, y1); the output holds only the
    finite-time knots (the implicit endpoint at +inf has value 0).
    """
    t = u_path.times
    if abs(t[-1] - total) > 1e-12 * max(1.0, total):
        raise ValidationError("input path must end exactly at time T")
    y0, y1 = float(u_path.values[0]), float(u_path.values[-1])
    interior_t = t[:-1]
    centered = u_path.values[:-1] - _chord(interior_t, total, y0, y1)
    s = z_time(interior_t, total)
    return Path.from_arrays(np.atleast_1d(s), centered / (total - interior_t))


def z_to_u(z_path: Path, total: float, y0: float, y1: float) -> Path:
    """Inverse of ``u_to_z``; appends the endpoints (0, y0) and (T, y1)."""
    s = z_path.times
    t = u_time(s, total)
    vals = (total - t) * z_path.values + _chord(t, total, y0, y1)
    if s[0] != 0.0:
        t = np.concatenate(([0.0], t))
        vals = np.concatenate(([y0], vals))
    t = np.concatenate((t, [total]))
    vals = np.concatenate((vals, [y1]))
    return Path.from_arrays(t, vals)


# ---------------------------------------------------------------------------
# Retrospective refinement


def refine_rows(
    stored_times: np.ndarray,
    stored_values: np.ndarray,
    new_times: np.ndarray,
    rng: RandomStream,
) -> np.ndarray:
    """Values of Brownian paths at ``new_times``, conditional on stored knots.

    Batched over rows: all inputs are (n, .) arrays with each row sorted
    increasing. Times that exactly match a stored knot reuse its value and
    consume no randomness. A new time between two stored knots is drawn from
    the conditional bridge; beyond the last stored knot it is an
    unconditioned Brownian increment from its left neighbour. Multiple new
    times sharing a bracket are filled left to right, each conditioning on
    the previously drawn one.
    """
    S = np.asarray(stored_times, dtype=float)
    V = np.asarray(stored_values, dtype=float)
    Tn = np.asarray(new_times, dtype=float)
    if S.ndim == 1:
        S, V, Tn = S[None, :], V[None, :], Tn[None, :]
    n, k = S.shape
    j = Tn.shape[1]

    out = np.empty((n, j))
    # Exact-hit detection against stored knots (bitwise equality; identical
    # warp parameters reproduce identical times).
    eq = Tn[:, :, None] == S[:, None, :]
    hit = eq.any(axis=2)
    hit_idx = eq.argmax(axis=2)
    rows = np.arange(n)[:, None]
    out[hit] = V[rows, hit_idx][hit]

    todo = ~hit
    if not todo.any():
        return out if stored_times.ndim > 1 else out[0]

    # Left stored bracket index for every new time (greatest stored <= t).
    left = (Tn[:, :, None] >= S[:, None, :]).sum(axis=2) - 1
    if np.any(left[todo] < 0):
        raise ValidationError("new time precedes the first stored knot")
    # Rank of each pending time among pending times sharing (row, bracket):
    # new times are sorted per row, so the rank is a running count.
    rank = np.zeros((n, j), dtype=int)
    for col in range(1, j):
        same = (left[:, col] == left[:, col - 1]) & todo[:, col] & todo[:, col - 1]
        rank[:, col] = np.where(same, rank[:, col - 1] + 1, 0)

    has_right = left < k - 1
    right = np.minimum(left + 1, k - 1)

    max_rank = int(rank[todo].max()) if todo.any() else 0
    prev_t = np.empty((n, j))
    prev_v = np.empty((n, j))
    for r in range(max_rank + 1):
        sel = todo & (rank == r)
        if not sel.any():
            continue
        ri, ci = np.nonzero(sel)
        if r == 0:
            t_a = S[ri, left[ri, ci]]
            v_a = V[ri, left[ri, ci]]
        else:
            t_a = prev_t[ri, ci - 1]
            v_a = prev_v[ri, ci - 1]
        t_b = Tn[ri, ci]
        hr = has_right[ri, ci]
        t_c = S[ri, right[ri, ci]]
        v_c = V[ri, right[ri, ci]]
        span = np.where(hr, t_c - t_a, 1.0)
        mean = np.where(hr, ((t_b - t_a) * v_c + (t_c - t_b) * v_a) / span, v_a)
        var = np.where(hr, (t_b - t_a) * (t_c - t_b) / span, t_b - t_a)
        draw = mean + np.sqrt(var) * rng.normal(ri.size)
        out[ri, ci] = draw
        prev_t[ri, ci] = t_b
        prev_v[ri, ci] = draw

    return out if stored_times.ndim > 1 else out[0]


def refine_retrospective(z_path: Path, new_times, rng: RandomStream) -> Path:
    """Merge retrospectively drawn knots into a stored path.

    Existing knots are preserved exactly; only genuinely new times consume
    randomness. Returns the merged path on the union of the knot sets.
    """
    new_t = np.sort(np.asarray(new_times, dtype=float))
    if new_t.size == 0:
        return z_path
    if np.any(new_t < 0.0) or not np.all(np.isfinite(new_t)):
        raise ValidationError("new times must be finite and nonnegative")
    new_v = refine_rows(z_path.times, z_path.values, new_t, rng)

    fresh = ~np.isin(new_t, z_path.times)
    # Deduplicate repeated requests for the same fresh time (keep first draw).
    if fresh.any():
        _, first = np.unique(new_t[fresh], return_index=True)
        add_t = new_t[fresh][first]
        add_v = new_v[fresh][first]
    else:
        add_t = np.empty(0)
        add_v = np.empty(0)
    merged_t = np.concatenate((z_path.times, add_t))
    merged_v = np.concatenate((z_path.values, add_v))
    order = np.argsort(merged_t, kind="stable")
    return Path.from_arrays(merged_t[order], merged_v[order])
