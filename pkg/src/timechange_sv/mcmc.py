"""Metropolis-within-Gibbs sampler on the doubly-warped path coordinates.

The chain state per observation interval is the vector of path values at the
stored doubly-warped times, where the dominating measure is a parameter-free
standard Brownian motion. Updates:

* path values: independence proposals from the dominating measure, accepted
  with the Girsanov ratio alone (endpoint terms cancel);
* the latent path: overlapping blocks proposed as Brownian bridges between
  fixed flanking knots (the terminal block gets a free Brownian end);
* parameters that deform the warped time scales: random walks on an
  unconstrained scale, with the path values at the newly required warped
  times drawn retrospectively, conditional on the stored knots;
* drift parameters: plain random walks (no time scales move).

Rejected proposals leave the state bit-identical. Only the m+2 knots per
interval are ever persisted; finer retrospective draws are transient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import NumericsError, ValidationError
from .likelihood import LogLikBreakdown, interval_quantities
from .models import ModelSpec, ParamVector
from .paths import Path, RandomStream
from .timechange import IntervalPaths, refine_rows


@dataclass(frozen=True)
class PriorSpec:
    """Independent flat priors, truncated to per-parameter intervals.

    Unbounded sides make the prior improper, which is fine for sampling
    (only ratios are used) but not for drawing from the prior.
    """

    bounds: dict[str, tuple[float, float]]

    @classmethod
    def from_model(cls, model: ModelSpec, overrides: Optional[dict] = None) -> "PriorSpec":
        bounds = {}
        for name in model.param_names:
            sup = model.supports[name]
            if sup.kind == "positive":
                bounds[name] = (0.0, math.inf)
            elif sup.kind == "interval":
                bounds[name] = (sup.lo, sup.hi)
            else:
                bounds[name] = (-math.inf, math.inf)
        if overrides:
            for name, (lo, hi) in overrides.items():
                if name not in bounds:
                    raise ValidationError(f"prior override for unknown parameter {name!r}")
                blo, bhi = bounds[name]
                lo, hi = float(lo), float(hi)
                if not (blo <= lo < hi <= bhi):
                    raise ValidationError(
                        f"prior bounds for {name} must be a nonempty subinterval of the support"
                    )
                bounds[name] = (lo, hi)
        return cls(bounds)

    def in_support(self, params: ParamVector) -> bool:
        return all(
            self.bounds[k][0] < params[k] < self.bounds[k][1] if k in self.bounds else True
            for k in params.names
        ) and params.in_support()

    def log_density(self, params: ParamVector) -> float:
        """Zero inside the support, -inf outside; normalisation constants
        are dropped (only ratios ever matter)."""
        return 0.0 if self.in_support(params) else -math.inf

    def is_proper(self) -> bool:
        return all(math.isfinite(hi - lo) for lo, hi in self.bounds.values())

    def sample(self, rng: RandomStream) -> dict[str, float]:
        if not self.is_proper():
            raise ValidationError("cannot sample from an improper prior")
        return {
            k: lo + (hi - lo) * float(rng.uniform())
            for k, (lo, hi) in self.bounds.items()
        }

    def midpoint(self) -> dict[str, float]:
        if not self.is_proper():
            raise ValidationError("prior midpoints need finite truncation bounds")
        return {k: 0.5 * (lo + hi) for k, (lo, hi) in self.bounds.items()}

    def cdf(self, name: str, x) -> np.ndarray:
        lo, hi = self.bounds[name]
        if not math.isfinite(hi - lo):
            raise ValidationError(f"no finite prior cdf for {name}")
        return np.clip((np.asarray(x, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


@dataclass
class SamplerConfig:
    """Tuning knobs of one chain.

    ``ratio_power`` exponentiates every Metropolis ratio and exists for the
    sampler-validation harness (a correct chain uses 1.0).
    """

    m: int
    n_iter: int
    n_burn: int
    block_len: int = 2
    thin: int = 1
    seed: int = 0
    rw_scales: dict[str, float] = field(default_factory=dict)
    adapt: bool = True
    target_accept: float = 0.3
    fixed: tuple[str, ...] = ()
    ratio_power: float = 1.0
    validate_every: int = 0
    chains: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError("need at least one imputed point per interval")
        if self.n_iter <= 0 or self.n_burn < 0 or self.n_burn >= self.n_iter:
            raise ValidationError("need 0 <= n_burn < n_iter")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if self.block_len < 1:
            raise ValidationError("block_len must be >= 1")
        if self.chains < 1:
            raise ValidationError("chains must be >= 1")


@dataclass
class Trace:
    """Posterior draws plus bookkeeping."""

    param_names: tuple[str, ...]
    draws: np.ndarray  # (rows, n_params)
    logliks: np.ndarray  # augmented log likelihood per recorded draw
    iters: np.ndarray
    acceptance: dict[str, float]
    config: SamplerConfig

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]

    @property
    def n_rows(self) -> int:
        return self.draws.shape[0]


class AugmentedState:
    """Full MCMC state: per-interval warped paths, latent path, parameters.

    Array shapes (n = #intervals, m = imputed points per interval):
        x_flat, gamma_flat : (n (m+1) + 1,)
        z, z_times         : (n, m+1)
        u, U, X, adj, alpha: (n, m+2)
        log_g, log_f, log_gamma, log_jac, total: (n,)
    """

    def __init__(self, model, params, prior, obs_times, y, log_jac, m, fixed=()):
        self.model = model
        self.params = params
        self.prior = prior
        self.obs_times = np.asarray(obs_times, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.log_jac = np.asarray(log_jac, dtype=float)
        self.m = int(m)
        self.fixed = frozenset(fixed)
        n = self.y.size - 1
        if n < 1:
            raise ValidationError("need at least two observations")
        self.n_intervals = n
        self.x_flat = _flat_knots(self.obs_times, self.m)
        self.x_knots = _windows(self.x_flat, self.m).copy()
        self.gamma_flat = np.zeros(n * (self.m + 1) + 1)
        # filled by the builders below
        self.z = np.zeros((n, self.m + 1))
        self.z_times = np.zeros((n, self.m + 1))
        self.u = np.zeros((n, self.m + 2))
        self.total = np.zeros(n)
        self.U = np.zeros((n, self.m + 2))
        self.X = np.zeros((n, self.m + 2))
        self.adj = np.zeros((n, self.m + 2))
        self.alpha = np.zeros((n, self.m + 2))
        self.log_g = np.zeros(n)
        self.log_f = np.zeros(n)
        self.log_gamma = np.zeros(n)

    # -- views ------------------------------------------------------------

    def gamma_windows(self) -> np.ndarray:
        return _windows(self.gamma_flat, self.m)

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(p for p in self.model.param_names if p not in self.fixed)

    # -- cache management ---------------------------------------------------

    def refresh(self, rows: Optional[np.ndarray] = None, q=None) -> None:
        """Write engine outputs for ``rows`` (default: all) into the caches."""
        if q is None:
            q = interval_quantities(
                self.model, self.params, self.x_knots, self.gamma_windows(),
                self.y[:-1], self.y[1:], z_values=self.z,
            )
        if rows is None:
            rows = slice(None)
        self.u[rows] = q.u
        self.total[rows] = q.total
        self.z_times[rows] = q.z_times
        self.z[rows] = q.z
        self.U[rows] = q.U
        self.X[rows] = q.X
        self.adj[rows] = q.adj
        self.alpha[rows] = q.alpha
        self.log_g[rows] = q.log_g
        self.log_f[rows] = q.log_f
        self.log_gamma[rows] = q.log_gamma

    def breakdown(self) -> LogLikBreakdown:
        return LogLikBreakdown.assemble(
            self.log_g, self.log_f + self.log_jac,
            float(np.sum(self.log_gamma)), self.prior.log_density(self.params),
        )

    def recompute_breakdown(self) -> LogLikBreakdown:
        q = interval_quantities(
            self.model, self.params, self.x_knots, self.gamma_windows(),
            self.y[:-1], self.y[1:], z_values=self.z,
        )
        return LogLikBreakdown.assemble(
            q.log_g, q.log_f + self.log_jac,
            float(np.sum(q.log_gamma)), self.prior.log_density(self.params),
        )

    def validate_cache(self, tol: float = 1e-8) -> None:
        cached = self.breakdown()
        fresh = self.recompute_breakdown()
        scale = max(1.0, abs(fresh.total))
        if abs(cached.total - fresh.total) > tol * scale:
            raise NumericsError(
                f"cached posterior {cached.total} drifted from recomputation {fresh.total}"
            )

    def interval_paths(self, k: int) -> IntervalPaths:
        u = Path.from_arrays(self.u[k], self.U[k])
        z = Path.from_arrays(self.z_times[k], self.z[k])
        return IntervalPaths(
            y0=float(self.U[k, 0]), y1=float(self.U[k, -1]),
            total=float(self.total[k]), u=u, z=z,
        )

    def clone(self) -> "AugmentedState":
        out = AugmentedState(
            self.model, self.params, self.prior, self.obs_times, self.y,
            self.log_jac, self.m, self.fixed,
        )
        for name in ("gamma_flat", "z", "z_times", "u", "total", "U", "X",
                     "adj", "alpha", "log_g", "log_f", "log_gamma"):
            setattr(out, name, getattr(self, name).copy())
        return out


def _flat_knots(obs_times: np.ndarray, m: int) -> np.ndarray:
    n = obs_times.size - 1
    out = np.empty(n * (m + 1) + 1)
    for k in range(n):
        out[k * (m + 1): (k + 1) * (m + 1)] = np.linspace(
            obs_times[k], obs_times[k + 1], m + 2
        )[:-1]
    out[-1] = obs_times[-1]
    return out


def _windows(flat: np.ndarray, m: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(flat, m + 2)[:: m + 1]


def _transform_observations(model: ModelSpec, raw_values: np.ndarray):
    raw = np.asarray(raw_values, dtype=float)
    if model.obs_transform is None:
        return raw.copy(), np.zeros(raw.size - 1)
    y = np.asarray(model.obs_transform(raw), dtype=float)
    log_jac = np.asarray(model.obs_log_jacobian(raw[1:]), dtype=float)
    return y, log_jac


def init_state(
    model: ModelSpec,
    params: ParamVector,
    obs_times,
    obs_values,
    m: int,
    prior: PriorSpec,
    fixed: Iterable[str] = (),
) -> AugmentedState:
    """Fresh state: latent path at zero, observed path on the data chords."""
    params.validate()
    y, log_jac = _transform_observations(model, obs_values)
    state = AugmentedState(model, params, prior, obs_times, y, log_jac, m, tuple(fixed))
    frac = np.linspace(0.0, 1.0, m + 2)
    x_values = y[:-1, None] + frac[None, :] * (y[1:] - y[:-1])[:, None]
    q = interval_quantities(
        model, params, state.x_knots, state.gamma_windows(),
        y[:-1], y[1:], x_values=x_values,
    )
    # canonical representation: re-derive everything from the doubly-warped
    # coordinates so later engine passes reproduce the caches bit for bit
    q = interval_quantities(
        model, params, state.x_knots, state.gamma_windows(),
        y[:-1], y[1:], z_values=q.z,
    )
    if not q.finite():
        raise ValidationError("initial augmented posterior is non-finite")
    state.refresh(q=q)
    return state


def state_from_skeleton(
    model: ModelSpec,
    params: ParamVector,
    obs_times,
    x_values: np.ndarray,
    gamma_flat: np.ndarray,
    prior: PriorSpec,
    fixed: Iterable[str] = (),
    log_jac: Optional[np.ndarray] = None,
) -> AugmentedState:
    """State whose paths reproduce an explicit skeleton exactly.

    ``x_values`` is (n, m+2) on the working coordinate with matching shared
    observation knots; ``gamma_flat`` is the latent path at every knot.
    """
    params.validate()
    x_values = np.asarray(x_values, dtype=float)
    n, cols = x_values.shape
    m = cols - 2
    if not np.allclose(x_values[1:, 0], x_values[:-1, -1], rtol=0, atol=0):
        raise ValidationError("interval skeletons disagree at shared observation knots")
    y = np.concatenate((x_values[:, 0], x_values[-1:, -1]))
    jac = np.zeros(n) if log_jac is None else np.asarray(log_jac, dtype=float)
    state = AugmentedState(model, params, prior, obs_times, y, jac, m, tuple(fixed))
    state.gamma_flat = np.asarray(gamma_flat, dtype=float).copy()
    if state.gamma_flat.shape != (n * (m + 1) + 1,):
        raise ValidationError("latent path length does not match the knot grid")
    if state.gamma_flat[0] != 0.0:
        raise ValidationError("latent path must start at zero")
    q = interval_quantities(
        model, params, state.x_knots, state.gamma_windows(),
        y[:-1], y[1:], x_values=x_values,
    )
    q = interval_quantities(
        model, params, state.x_knots, state.gamma_windows(),
        y[:-1], y[1:], z_values=q.z,
    )
    if not q.finite():
        raise ValidationError("augmented posterior is non-finite for this skeleton")
    state.refresh(q=q)
    return state


# ---------------------------------------------------------------------------
# Metropolis pieces


def _accept_mask(log_ratio: np.ndarray, rng: RandomStream, power: float) -> np.ndarray:
    log_ratio = np.where(np.isfinite(log_ratio), log_ratio, -np.inf)
    u = rng.uniform(log_ratio.shape)
    return np.log(u) < power * log_ratio


def _accept_scalar(log_ratio: float, rng: RandomStream, power: float) -> bool:
    if not math.isfinite(log_ratio):
        return False
    a = power * log_ratio
    if a >= 0.0:
        return True
    return math.log(float(rng.uniform())) < a


def _update_z_rows(state: AugmentedState, rows, rng: RandomStream, power: float) -> np.ndarray:
    """Independence update of the doubly-warped path values on ``rows``.

    Proposals are standard Brownian motions at the intervals' current warped
    times; endpoint densities cancel because the data endpoints do not move.
    Returns the per-row acceptance mask.
    """
    z_times = state.z_times[rows]
    n_rows = z_times.shape[0]
    steps = np.diff(z_times, axis=1)
    z_prop = np.zeros_like(z_times)
    np.cumsum(np.sqrt(steps) * rng.normal(steps.shape), axis=1, out=z_prop[:, 1:])

    q = interval_quantities(
        state.model, state.params, state.x_knots[rows],
        state.gamma_windows()[rows], state.y[:-1][rows], state.y[1:][rows],
        z_values=z_prop,
    )
    log_ratio = q.log_g - state.log_g[rows]
    acc = _accept_mask(log_ratio, rng, power)
    if acc.any():
        idx = np.arange(state.n_intervals)[rows][acc]
        state.z[idx] = z_prop[acc]
        state.U[idx] = q.U[acc]
        state.X[idx] = q.X[acc]
        state.log_g[idx] = q.log_g[acc]
    return acc


def update_z_path(state: AugmentedState, k: int, rng: RandomStream, power: float = 1.0) -> bool:
    """Propose a fresh driftless path for one interval; accept on the
    Girsanov ratio."""
    rows = np.zeros(state.n_intervals, dtype=bool)
    rows[k] = True
    return bool(_update_z_rows(state, rows, rng, power)[0])


def _propose_param(state: AugmentedState, name: str, scale: float, rng: RandomStream):
    sup = state.params.supports[name]
    cur = state.params[name]
    phi = sup.to_unconstrained(cur) + scale * float(rng.normal())
    try:
        cand = sup.from_unconstrained(phi)
    except OverflowError:
        return None, 0.0
    if not sup.contains(cand):
        return None, 0.0
    log_jac = sup.log_jacobian(cand) - sup.log_jacobian(cur)
    return cand, log_jac


def _update_param(
    state: AugmentedState, name: str, rng: RandomStream, scale: float, power: float
) -> bool:
    """Random-walk update of one scalar parameter.

    Parameters deforming the warped time scales trigger retrospective draws
    of the path values at the newly required times; drift parameters reuse
    the stored values. The accept/reject decision is joint across intervals.
    """
    cand, log_jac = _propose_param(state, name, scale, rng)
    if cand is None:
        return False
    cand_params = state.params.replace(**{name: cand})
    if not state.prior.in_support(cand_params):
        return False

    needs_refine = name in state.model.timescale_params
    if needs_refine:
        warp = interval_quantities(
            state.model, cand_params, state.x_knots, state.gamma_windows(),
            state.y[:-1], state.y[1:], z_values=state.z,
        )
        new_times = warp.z_times
        if not np.all(np.isfinite(new_times)):
            return False
        z_new = refine_rows(state.z_times, state.z, new_times, rng)
        q = interval_quantities(
            state.model, cand_params, state.x_knots, state.gamma_windows(),
            state.y[:-1], state.y[1:], z_values=z_new,
        )
    else:
        q = interval_quantities(
            state.model, cand_params, state.x_knots, state.gamma_windows(),
            state.y[:-1], state.y[1:], z_values=state.z,
        )
    if not q.finite():
        return False

    log_ratio = (
        float(np.sum(q.log_g) - np.sum(state.log_g))
        + float(np.sum(q.log_f) - np.sum(state.log_f))
        + float(np.sum(q.log_gamma) - np.sum(state.log_gamma))
        + log_jac
    )
    if not _accept_scalar(log_ratio, rng, power):
        return False
    state.params = cand_params
    state.refresh(q=q)
    return True


def update_timescale_param(
    state: AugmentedState, name: str, rng: RandomStream,
    scale: float = 0.25, power: float = 1.0,
) -> bool:
    """Retrospective update of a parameter that deforms the warped times."""
    if name not in state.model.timescale_params:
        raise ValidationError(f"{name} does not deform any time scale")
    return _update_param(state, name, rng, scale, power)


def update_drift_params(
    state: AugmentedState, rng: RandomStream,
    scales: Optional[dict] = None, power: float = 1.0,
) -> dict[str, bool]:
    """Random-walk updates of every free parameter that leaves the time
    scales alone."""
    out = {}
    for name in state.free_names:
        if name in state.model.timescale_params:
            continue
        s = (scales or {}).get(name, 0.25)
        out[name] = _update_param(state, name, rng, s, power)
    return out


# ---------------------------------------------------------------------------
# Latent-path blocks


def gamma_block_plan(n_intervals: int, block_len: int) -> list[tuple[int, int, bool]]:
    """(first interval, length, anchored right) for one sweep.

    Anchored blocks slide by block_len - 1 intervals, so adjacent blocks
    share one observation knot region and every interior observation knot is
    interior to some block; a terminal block with a free Brownian end covers
    the final stretch and resamples the last knot.
    """
    if block_len > n_intervals:
        raise ValidationError("block length exceeds the number of intervals")
    plan = []
    step = max(1, block_len - 1)
    j = 0
    while j + block_len < n_intervals:
        plan.append((j, block_len, True))
        j += step
    plan.append((n_intervals - block_len, block_len, False))
    return plan


def _gamma_anchored_pass(
    state: AugmentedState,
    firsts: np.ndarray,
    length: int,
    rng: RandomStream,
    power: float,
) -> np.ndarray:
    """Batched bridge update of mutually disjoint anchored blocks.

    Blocks in one pass share at most their fixed anchor knots, so their
    updates are conditionally independent and one vectorised accept/reject
    per block composes exactly like updating them one at a time.
    """
    m = state.m
    nb = firsts.size
    width = length * (m + 1) + 1
    lo = firsts * (m + 1)
    cols = np.arange(width)
    seg_idx = lo[:, None] + cols[None, :]
    seg_t = state.x_flat[seg_idx]
    seg_g = state.gamma_flat[seg_idx]

    dt = seg_t[:, 1:] - seg_t[:, :-1]
    w = np.zeros((nb, width))
    np.cumsum(np.sqrt(dt) * rng.normal(dt.shape), axis=1, out=w[:, 1:])
    span = (seg_t[:, -1] - seg_t[:, 0])[:, None]
    frac = (seg_t - seg_t[:, :1]) / span
    seg_prop = seg_g[:, :1] + w - frac * w[:, -1:] + frac * (seg_g[:, -1:] - seg_g[:, :1])
    seg_prop[:, 0] = seg_g[:, 0]
    seg_prop[:, -1] = seg_g[:, -1]

    win_idx = (np.arange(length) * (m + 1))[:, None] + np.arange(m + 2)[None, :]
    gam_win = seg_prop[:, win_idx].reshape(nb * length, m + 2)
    rows_idx = (firsts[:, None] + np.arange(length)[None, :]).ravel()

    y_left = state.y[:-1][rows_idx]
    y_right = state.y[1:][rows_idx]
    x_knots = state.x_knots[rows_idx]
    warp = interval_quantities(
        state.model, state.params, x_knots, gam_win, y_left, y_right,
        z_values=state.z[rows_idx],
    )
    new_times = warp.z_times
    bad_rows = ~np.all(np.isfinite(new_times), axis=1)
    if bad_rows.any():
        new_times = np.where(bad_rows[:, None], state.z_times[rows_idx], new_times)
    z_new = refine_rows(state.z_times[rows_idx], state.z[rows_idx], new_times, rng)
    q = interval_quantities(
        state.model, state.params, x_knots, gam_win, y_left, y_right,
        z_values=z_new,
    )

    delta = (
        (q.log_g - state.log_g[rows_idx])
        + (q.log_f - state.log_f[rows_idx])
        + (q.log_gamma - state.log_gamma[rows_idx])
    ).reshape(nb, length)
    log_ratio = np.where(
        bad_rows.reshape(nb, length).any(axis=1), -np.inf, delta.sum(axis=1)
    )
    acc = _accept_mask(log_ratio, rng, power)
    if acc.any():
        state.gamma_flat[seg_idx[acc]] = seg_prop[acc]
        keep = np.repeat(acc, length)
        rows_sel = rows_idx[keep]
        state.u[rows_sel] = q.u[keep]
        state.total[rows_sel] = q.total[keep]
        state.z_times[rows_sel] = q.z_times[keep]
        state.z[rows_sel] = q.z[keep]
        state.U[rows_sel] = q.U[keep]
        state.X[rows_sel] = q.X[keep]
        state.adj[rows_sel] = q.adj[keep]
        state.alpha[rows_sel] = q.alpha[keep]
        state.log_g[rows_sel] = q.log_g[keep]
        state.log_f[rows_sel] = q.log_f[keep]
        state.log_gamma[rows_sel] = q.log_gamma[keep]
    return acc


def update_gamma_block(
    state: AugmentedState,
    first: int,
    n_block: int,
    rng: RandomStream,
    anchored_right: bool = True,
    power: float = 1.0,
) -> bool:
    """Bridge proposal for one block of the latent path.

    The block spans ``n_block`` consecutive observation intervals; its
    flanking knots stay fixed, except that the terminal block's right end is
    a free Brownian extension. The proposal is the dominating-measure
    conditional, so the ratio is the likelihood change over the block plus
    the latent-marginal change.
    """
    if anchored_right:
        return bool(
            _gamma_anchored_pass(state, np.array([first]), n_block, rng, power)[0]
        )

    m = state.m
    lo = first * (m + 1)
    hi = (first + n_block) * (m + 1)
    seg_t = state.x_flat[lo: hi + 1]
    seg_g = state.gamma_flat[lo: hi + 1]

    dt = np.diff(seg_t)
    w = np.zeros(seg_t.size)
    np.cumsum(np.sqrt(dt) * rng.normal(dt.size), axis=0, out=w[1:])
    seg_prop = seg_g[0] + w

    rows = slice(first, first + n_block)
    gam_win = _windows(seg_prop, m)
    warp = interval_quantities(
        state.model, state.params, state.x_knots[rows], gam_win,
        state.y[:-1][rows], state.y[1:][rows], z_values=state.z[rows],
    )
    new_times = warp.z_times
    if not np.all(np.isfinite(new_times)):
        return False
    z_new = refine_rows(state.z_times[rows], state.z[rows], new_times, rng)
    q = interval_quantities(
        state.model, state.params, state.x_knots[rows], gam_win,
        state.y[:-1][rows], state.y[1:][rows], z_values=z_new,
    )
    if not q.finite():
        return False

    log_ratio = float(
        np.sum(q.log_g - state.log_g[rows])
        + np.sum(q.log_f - state.log_f[rows])
        + np.sum(q.log_gamma - state.log_gamma[rows])
    )
    if not _accept_scalar(log_ratio, rng, power):
        return False
    state.gamma_flat[lo: hi + 1] = seg_prop
    state.refresh(rows=rows, q=q)
    return True


# ---------------------------------------------------------------------------
# Sweep orchestration


def _scalar_update_order(state: AugmentedState) -> tuple[list[str], list[str]]:
    """Time-scale parameters (minus alpha0), then drift parameters; alpha0
    runs last in the sweep."""
    ts = [
        p for p in state.model.timescale_params
        if p in state.free_names and p != "alpha0"
    ]
    drift = [
        p for p in state.free_names
        if p not in state.model.timescale_params and p != "alpha0"
    ]
    return ts, drift


def sweep(
    state: AugmentedState,
    rng: RandomStream,
    scales: dict[str, float],
    tallies: Optional[dict] = None,
    power: float = 1.0,
    block_len: int = 2,
) -> dict[str, bool]:
    """One full Gibbs sweep; returns the scalar-parameter accept flags."""

    def tally(name, acc, att=1):
        if tallies is not None:
            rec = tallies.setdefault(name, [0, 0])
            rec[0] += acc
            rec[1] += att

    acc_z = _update_z_rows(state, slice(None), rng, power)
    tally("z", int(acc_z.sum()), acc_z.size)

    if state.model.has_latent:
        plan = gamma_block_plan(state.n_intervals, min(block_len, state.n_intervals))
        anchored_starts = np.array([f for f, _l, a in plan if a], dtype=int)
        length = plan[0][1]
        # Alternate blocks of the sliding schedule touch disjoint intervals,
        # so each parity class runs as one batched update.
        for parity in (anchored_starts[0::2], anchored_starts[1::2]):
            if parity.size:
                acc = _gamma_anchored_pass(state, parity, length, rng, power)
                tally("gamma", int(acc.sum()), acc.size)
        first, length, _ = plan[-1]
        acc_t = update_gamma_block(state, first, length, rng, False, power)
        tally("gamma", int(acc_t))

    flags: dict[str, bool] = {}
    ts_names, drift_names = _scalar_update_order(state)
    for name in ts_names:
        flags[name] = _update_param(state, name, rng, scales.get(name, 0.25), power)
        tally(name, int(flags[name]))
    for name in drift_names:
        flags[name] = _update_param(state, name, rng, scales.get(name, 0.25), power)
        tally(name, int(flags[name]))
    if "alpha0" in state.free_names and "alpha0" in state.model.param_names:
        flags["alpha0"] = _update_param(
            state, "alpha0", rng, scales.get("alpha0", 0.25), power
        )
        tally("alpha0", int(flags["alpha0"]))
    return flags


def run_chain(
    config: SamplerConfig,
    data,
    model: ModelSpec,
    prior: Optional[PriorSpec] = None,
    init_params=None,
) -> Trace:
    """Run one chain on ``data`` (an object with .times and .values).

    ``init_params`` is a dict of starting values, the string
    "prior-midpoint", or None for the model defaults. Draws are recorded
    after burn-in at the configured thinning; the log-likelihood column is
    the augmented log likelihood (flat-prior constants excluded).
    """
    prior = prior if prior is not None else PriorSpec.from_model(model)
    times = np.asarray(data.times, dtype=float)
    values = np.asarray(data.values, dtype=float)
    if times.size < 2:
        raise ValidationError("need at least two observations")
    if model.has_latent and config.block_len > times.size - 1:
        raise ValidationError("block_len exceeds the number of observation intervals")

    if init_params == "prior-midpoint":
        params = model.make_params(prior.midpoint())
    elif init_params is None:
        params = model.make_params()
    else:
        params = model.make_params(dict(init_params))
    if not prior.in_support(params):
        raise ValidationError("initial parameters violate the prior support")

    rng = RandomStream(config.seed)
    state = init_state(model, params, times, values, config.m, prior, config.fixed)

    scales = {name: config.rw_scales.get(name, 0.25) for name in state.free_names}
    tallies_burn: dict = {}
    tallies_main: dict = {}

    n_rows = len(range(config.n_burn, config.n_iter, config.thin))
    draws = np.empty((n_rows, len(state.free_names)))
    logliks = np.empty(n_rows)
    iters = np.empty(n_rows, dtype=int)

    row = 0
    for it in range(config.n_iter):
        burning = it < config.n_burn
        flags = sweep(
            state, rng, scales,
            tallies_burn if burning else tallies_main,
            config.ratio_power,
            config.block_len,
        )
        if burning and config.adapt:
            eta = (it + 1.0) ** -0.6
            for name, acc in flags.items():
                scales[name] = float(
                    np.clip(
                        scales[name] * math.exp(eta * ((1.0 if acc else 0.0) - config.target_accept)),
                        1e-8, 1e8,
                    )
                )
        if config.validate_every and (it + 1) % config.validate_every == 0:
            state.validate_cache()
        if not burning and (it - config.n_burn) % config.thin == 0:
            draws[row] = [state.params[p] for p in state.free_names]
            logliks[row] = state.breakdown().log_likelihood
            iters[row] = it
            row += 1

    tallies = tallies_main if tallies_main else tallies_burn
    acceptance = {
        name: (rec[0] / rec[1] if rec[1] else 0.0) for name, rec in tallies.items()
    }
    return Trace(
        param_names=state.free_names,
        draws=draws,
        logliks=logliks,
        iters=iters,
        acceptance=acceptance,
        config=config,
    )
