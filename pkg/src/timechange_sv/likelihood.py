"""Log-density components of the reparametrised posterior.

Everything is computed and stored in log space; acceptance ratios downstream
are formed as exp of log differences so that products over hundreds of
observation intervals never underflow.

The per-interval quantities (warped times, leverage adjustment, path values
on each scale, Girsanov and endpoint terms) are produced by one vectorised
engine operating on (n_intervals, m+2) arrays; the public per-path
operations wrap single rows of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericsError, ValidationError
from .models import ModelSpec, ParamVector
from .paths import Path

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LogLikBreakdown:
    """Additive pieces of the augmented log posterior."""

    log_g_x: np.ndarray  # per-interval Girsanov term of the observed path
    log_f: np.ndarray  # per-interval endpoint density (incl. data Jacobian)
    log_l_gamma: float  # latent-path marginal
    log_prior: float
    total: float

    @classmethod
    def assemble(cls, log_g_x, log_f, log_l_gamma, log_prior) -> "LogLikBreakdown":
        total = float(np.sum(log_g_x) + np.sum(log_f) + log_l_gamma + log_prior)
        return cls(np.asarray(log_g_x, dtype=float), np.asarray(log_f, dtype=float),
                   float(log_l_gamma), float(log_prior), total)

    @property
    def log_likelihood(self) -> float:
        """Augmented log likelihood (prior excluded); the trace column."""
        return self.total - self.log_prior


@dataclass
class IntervalQuantities:
    """Vectorised per-interval state derived from (Z, gamma, params, data).

    Shapes: (n, m+2) for knot-level arrays, (n, m+1) for the finite
    doubly-warped knots, (n,) for per-interval scalars.
    """

    u: np.ndarray  # warped knot times, u[:, 0] = 0
    total: np.ndarray  # warped interval lengths T
    z_times: np.ndarray  # finite doubly-warped times of the knots
    z: np.ndarray  # path values on the doubly-warped scale
    U: np.ndarray  # path values on the warped scale (leverage removed)
    X: np.ndarray  # path values on the observation coordinate
    adj: np.ndarray  # cumulative leverage adjustment
    alpha: np.ndarray  # latent values at the knots
    log_g: np.ndarray  # per-interval Girsanov sums
    log_f: np.ndarray  # per-interval endpoint Gaussian terms (no Jacobian)
    log_gamma: np.ndarray  # per-interval latent-marginal contributions

    def finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.log_g))
            and np.all(np.isfinite(self.log_f))
            and np.all(np.isfinite(self.log_gamma))
        )


def interval_quantities(
    model: ModelSpec,
    params: ParamVector,
    x_knots: np.ndarray,
    gamma: np.ndarray,
    y_left: np.ndarray,
    y_right: np.ndarray,
    z_values: Optional[np.ndarray] = None,
    x_values: Optional[np.ndarray] = None,
) -> IntervalQuantities:
    """Evaluate all warped-scale quantities for a batch of intervals.

    Exactly one of ``z_values`` (n, m+1) or ``x_values`` (n, m+2) must be
    given: the former reconstructs the path from its doubly-warped
    coordinates, the latter derives those coordinates from an explicit
    skeleton (used at initialisation). Non-finite results are not raised
    here; callers inspect ``finite()`` and treat failures as zero-density.
    """
    if (z_values is None) == (x_values is None):
        raise ValidationError("provide exactly one of z_values or x_values")
    x_knots = np.asarray(x_knots, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    n, cols = x_knots.shape

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if model.has_latent:
            scale = model.latent_scale(params)
            alpha = params["alpha0"] + scale * gamma
        else:
            alpha = np.zeros_like(x_knots)
        sx = np.asarray(model.vol_x(alpha, params), dtype=float)
        rho = model.rho(params)
        lev_var = 1.0 - rho * rho
        veff2 = lev_var * sx * sx

        dx = np.diff(x_knots, axis=1)
        u = np.zeros_like(x_knots)
        np.cumsum(veff2[:, :-1] * dx, axis=1, out=u[:, 1:])
        total = u[:, -1]

        adj = np.zeros_like(x_knots)
        if rho != 0.0 and model.has_latent:
            np.cumsum(rho * sx[:, :-1] * np.diff(gamma, axis=1), axis=1, out=adj[:, 1:])

        u0 = np.asarray(y_left, dtype=float)
        u1 = np.asarray(y_right, dtype=float) - adj[:, -1]

        u_int = u[:, :-1]
        tcol = total[:, None]
        z_times = u_int / (tcol * (tcol - u_int))

        chord = u0[:, None] + (u_int / tcol) * (u1 - u0)[:, None]
        if z_values is not None:
            z = np.asarray(z_values, dtype=float)
            U = np.empty_like(x_knots)
            U[:, :-1] = (tcol - u_int) * z + chord
            U[:, -1] = u1
            X = U + adj
        else:
            X = np.asarray(x_values, dtype=float)
            U = X - adj
            z = (U[:, :-1] - chord) / (tcol - u_int)

        drift = np.asarray(
            model.drift_x(x_knots[:, :-1], X[:, :-1], alpha[:, :-1], params), dtype=float
        )
        b = drift / veff2[:, :-1]
        du = np.diff(U, axis=1)
        dt = np.diff(u, axis=1)
        log_g = np.einsum("ij,ij->i", b, du) - 0.5 * np.einsum("ij,ij->i", b * b, dt)

        log_f = -0.5 * (_LOG_2PI + np.log(total)) - (u1 - u0) ** 2 / (2.0 * total)

        if model.has_latent:
            d = np.asarray(model.drift_alpha(alpha[:, :-1], params), dtype=float) / scale
            dg = np.diff(gamma, axis=1)
            log_gamma = np.einsum("ij,ij->i", d, dg) - 0.5 * np.einsum(
                "ij,ij->i", d * d, dx
            )
        else:
            log_gamma = np.zeros(n)

    return IntervalQuantities(
        u=u, total=total, z_times=z_times, z=z, U=U, X=X, adj=adj, alpha=alpha,
        log_g=log_g, log_f=log_f, log_gamma=log_gamma,
    )


# ---------------------------------------------------------------------------
# Public per-path operations


def log_girsanov_U(u_path: Path, drift_on_U) -> float:
    """Girsanov log density of a unit-volatility path against Brownian
    motion, with drift ``b(t, u)``.

    Left-point discretisation throughout: the stochastic integral includes
    the final step onto the path's last knot. ``drift_on_U`` must accept
    arrays.
    """
    if len(u_path) < 2:
        raise ValidationError("path needs at least two knots")
    t = u_path.times
    v = u_path.values
    b = np.asarray(drift_on_U(t[:-1], v[:-1]), dtype=float)
    if not np.all(np.isfinite(b)):
        raise NumericsError("drift evaluation is non-finite")
    return float(b @ np.diff(v) - 0.5 * (b * b) @ np.diff(t))


def log_end_density(y1: float, y0: float, total: float) -> float:
    """Gaussian log density of the interval endpoint: mean y0, variance T.

    When the observations were mapped through a unit-state-volatility
    transform, the caller adds the transform's log-Jacobian separately.
    """
    if not total > 0.0:
        raise ValidationError("endpoint density needs a positive warped length")
    return -0.5 * (_LOG_2PI + math.log(total)) - (y1 - y0) ** 2 / (2.0 * total)


def log_latent_marginal(gamma_path: Path, params: ParamVector, model: ModelSpec) -> float:
    """Girsanov log density of the unit-diffusion latent path against
    Brownian motion."""
    if abs(gamma_path.values[0]) > 1e-12:
        raise ValidationError("latent path must start at zero")
    d = np.asarray(model.gamma_drift(gamma_path.values[:-1], params), dtype=float)
    if not np.all(np.isfinite(d)):
        raise NumericsError("latent drift evaluation is non-finite")
    return float(
        d @ np.diff(gamma_path.values) - 0.5 * (d * d) @ np.diff(gamma_path.times)
    )


def log_augmented_posterior(state, data, model: ModelSpec, prior) -> LogLikBreakdown:
    """Full breakdown of the augmented posterior for an MCMC state.

    Recomputes every term from the state's raw coordinates (doubly-warped
    path values, latent path, parameters); the state's caches are not
    consulted, which makes this the reference for cache-coherence checks.
    """
    y_raw = np.asarray(data.values, dtype=float)
    if y_raw.size != state.y.size:
        raise ValidationError("observation count disagrees with the state")
    q = interval_quantities(
        model,
        state.params,
        state.x_knots,
        state.gamma_windows(),
        state.y[:-1],
        state.y[1:],
        z_values=state.z,
    )
    if not q.finite():
        raise NumericsError("augmented posterior is non-finite")
    return LogLikBreakdown.assemble(
        q.log_g,
        q.log_f + state.log_jac,
        float(np.sum(q.log_gamma)),
        prior.log_density(state.params),
    )


def euler_loglik(x_path: Path, alpha_path: Path, params: ParamVector, model: ModelSpec) -> float:
    """Transition-product log likelihood of a joint skeleton under the

    locally-Gaussian scheme; used as an independent oracle in tests. The
    step covariance couples the two coordinates through the leverage
    correlation and is singular at |rho| = 1.
    """
    if not np.array_equal(x_path.times, alpha_path.times):
        raise ValidationError("skeleton grids are not aligned")
    if len(x_path) < 2:
        raise ValidationError("skeleton needs at least two knots")
    t = x_path.times
    dt = np.diff(t)
    xv = x_path.values
    av = alpha_path.values

    mx = np.asarray(model.drift_x(t[:-1], xv[:-1], av[:-1], params), dtype=float)
    sx = np.asarray(model.vol_x(av[:-1], params), dtype=float)
    rx = np.diff(xv) - mx * dt

    if not model.has_latent:
        var = sx * sx * dt
        return float(np.sum(-0.5 * (_LOG_2PI + np.log(var)) - rx * rx / (2.0 * var)))

    rho = model.rho(params)
    if abs(rho) >= 1.0:
        raise NumericsError("step covariance is singular at |rho| = 1")
    sa = model.latent_scale(params)
    ma = np.asarray(model.drift_alpha(av[:-1], params), dtype=float)
    ra = np.diff(av) - ma * dt

    vxx = sx * sx * dt
    vaa = sa * sa * dt
    vxa = rho * sx * sa * dt
    det = vxx * vaa - vxa * vxa
    quad = (rx * rx * vaa - 2.0 * rx * ra * vxa + ra * ra * vxx) / det
    return float(np.sum(-_LOG_2PI - 0.5 * np.log(det) - 0.5 * quad))
