"""Model definitions and state transformations.

A model bundles the drift/volatility functions of the observed diffusion and
of its latent volatility diffusion, together with the hooks needed by the
samplers: which parameters deform the warped time scales, which enter the
latent drift, and how raw observations map onto the coordinate in which the
volatility is state-free (the unit-state-volatility transform).

All coefficient functions are vectorised over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ExplosionError, ValidationError
from .paths import Path, RandomStream, TimeGrid


@dataclass(frozen=True)
class ParamSupport:
    """Support descriptor for one parameter: unbounded, positive, or an
    open interval."""

    kind: str  # "real" | "positive" | "interval"
    lo: float = -math.inf
    hi: float = math.inf

    def contains(self, x: float) -> bool:
        if self.kind == "real":
            return math.isfinite(x)
        if self.kind == "positive":
            return x > 0.0 and math.isfinite(x)
        return self.lo < x < self.hi

    # Random-walk proposals run on an unconstrained scale; the log-Jacobian
    # |dx/dphi| enters Metropolis ratios for non-linear transforms.
    def to_unconstrained(self, x: float) -> float:
        if self.kind == "positive":
            return math.log(x)
        if self.kind == "interval":
            u = 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0
            return math.atanh(u)
        return x

    def from_unconstrained(self, phi: float) -> float:
        if self.kind == "positive":
            return math.exp(phi)
        if self.kind == "interval":
            return self.lo + (self.hi - self.lo) * 0.5 * (math.tanh(phi) + 1.0)
        return phi

    def log_jacobian(self, x: float) -> float:
        if self.kind == "positive":
            return math.log(x)
        if self.kind == "interval":
            return math.log((x - self.lo) * (self.hi - x)) - math.log(self.hi - self.lo)
        return 0.0


REAL = ParamSupport("real")
POSITIVE = ParamSupport("positive")


def interval(lo: float, hi: float) -> ParamSupport:
    return ParamSupport("interval", lo, hi)


class ParamVector:
    """Named parameter values with per-name support descriptors.

    Preserves declaration order; the order defines trace columns downstream.
    """

    def __init__(self, values: dict[str, float], supports: dict[str, ParamSupport]):
        if set(values) != set(supports):
            raise ValidationError("parameter values and supports name different sets")
        self.names = tuple(values)
        self.values = {k: float(v) for k, v in values.items()}
        self.supports = dict(supports)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def replace(self, **updates: float) -> "ParamVector":
        vals = dict(self.values)
        for k, v in updates.items():
            if k not in vals:
                raise ValidationError(f"unknown parameter {k!r}")
            vals[k] = float(v)
        return ParamVector(vals, self.supports)

    def validate(self) -> None:
        for k, v in self.values.items():
            if not self.supports[k].contains(v):
                raise ValidationError(f"parameter {k}={v} outside its support")

    def in_support(self) -> bool:
        return all(self.supports[k].contains(v) for k, v in self.values.items())

    def as_dict(self) -> dict[str, float]:
        return dict(self.values)

    def __repr__(self):
        inner = ", ".join(f"{k}={v:.6g}" for k, v in self.values.items())
        return f"ParamVector({inner})"


@dataclass(frozen=True)
class LatentTransform:
    """Maps the latent diffusion to its unit-diffusion, zero-start version.

    ``h`` integrates the reciprocal latent volatility, so the transformed
    process has unit diffusion coefficient; centering at the starting value
    makes the transformed path start at zero.
    """

    h: Callable[[np.ndarray, ParamVector], np.ndarray]
    h_inv: Callable[[np.ndarray, ParamVector], np.ndarray]


def scale_transform(scale_param: str) -> LatentTransform:
    """Transform for a latent diffusion with constant volatility parameter."""
    return LatentTransform(
        h=lambda a, p: np.asarray(a, dtype=float) / p[scale_param],
        h_inv=lambda b, p: np.asarray(b, dtype=float) * p[scale_param],
    )


@dataclass(frozen=True)
class ModelSpec:
    """Drift/volatility bundle plus transform hooks for one model.

    ``drift_x(t, x, alpha, params)`` and ``vol_x(alpha, params)`` describe the
    observed diffusion in the coordinate where its volatility does not depend
    on the state itself.  When the natural observation scale has
    state-dependent volatility, ``obs_transform``/``obs_transform_inv`` map
    raw data into that coordinate and ``obs_log_jacobian`` supplies the
    density correction per observation.
    """

    name: str
    param_names: tuple[str, ...]
    supports: dict[str, ParamSupport]
    defaults: dict[str, float]
    drift_x: Callable
    vol_x: Callable
    has_latent: bool = True
    drift_alpha: Optional[Callable] = None
    vol_alpha: Optional[Callable] = None  # (params) -> float, constant in alpha
    leverage: Optional[str] = None  # name of the correlation parameter
    state_vol: Optional[Callable] = None  # sigma2(x, params) on the raw scale
    obs_transform: Optional[Callable] = None  # raw y -> working coordinate
    obs_transform_inv: Optional[Callable] = None
    obs_log_jacobian: Optional[Callable] = None  # log|d transform / d y|
    timescale_params: tuple[str, ...] = ()
    param_roles: dict[str, frozenset] = field(default_factory=dict)

    def make_params(self, values: Optional[dict[str, float]] = None) -> ParamVector:
        vals = dict(self.defaults)
        if values:
            unknown = set(values) - set(self.param_names)
            if unknown:
                raise ValidationError(f"unknown parameters for {self.name}: {sorted(unknown)}")
            vals.update(values)
        return ParamVector({k: vals[k] for k in self.param_names}, self.supports)

    def latent_transform(self) -> LatentTransform:
        if not self.has_latent:
            raise ValidationError(f"model {self.name} has no latent diffusion")
        return LatentTransform(
            h=lambda a, p: np.asarray(a, dtype=float) / self.vol_alpha(p),
            h_inv=lambda b, p: np.asarray(b, dtype=float) * self.vol_alpha(p),
        )

    def latent_scale(self, params: ParamVector) -> float:
        """Constant volatility of the latent diffusion."""
        if not self.has_latent:
            raise ValidationError(f"model {self.name} has no latent diffusion")
        return float(self.vol_alpha(params))

    def gamma_drift(self, gamma: np.ndarray, params: ParamVector) -> np.ndarray:
        """Drift of the unit-diffusion latent path.

        The latent path alpha is recovered from gamma through
        alpha = alpha0 + scale * gamma, and the transformed drift is the
        original latent drift divided by the constant latent volatility.
        """
        scale = self.latent_scale(params)
        alpha = params["alpha0"] + scale * np.asarray(gamma, dtype=float)
        return self.drift_alpha(alpha, params) / scale

    def rho(self, params: ParamVector) -> float:
        return float(params[self.leverage]) if self.leverage else 0.0

    def roles(self, name: str) -> frozenset:
        return self.param_roles.get(name, frozenset())


# ---------------------------------------------------------------------------
# Registry


def _make_const_vol_scalar() -> ModelSpec:
    # dX = theta dt + sigma dW; no latent diffusion.
    return ModelSpec(
        name="const-vol-scalar",
        param_names=("theta", "sigma"),
        supports={"theta": REAL, "sigma": POSITIVE},
        defaults={"theta": 0.0, "sigma": 1.0},
        drift_x=lambda t, x, a, p: np.broadcast_to(p["theta"], np.shape(x)).astype(float),
        vol_x=lambda a, p: np.full(np.shape(a), p["sigma"], dtype=float),
        has_latent=False,
        timescale_params=("sigma",),
        param_roles={
            "theta": frozenset({"x_drift"}),
            "sigma": frozenset({"timescale"}),
        },
    )


def _make_ou_sv_leverage() -> ModelSpec:
    # dX     = kappa_x (mu_x - X) dt + exp(alpha/2) (rho dW + sqrt(1-rho^2) dB)
    # dalpha = kappa_alpha (mu_alpha - alpha) dt + sigma dW
    return ModelSpec(
        name="ou-sv-leverage",
        param_names=("kappa_x", "mu_x", "kappa_alpha", "mu_alpha", "sigma", "rho", "alpha0"),
        supports={
            "kappa_x": POSITIVE,
            "mu_x": REAL,
            "kappa_alpha": POSITIVE,
            "mu_alpha": REAL,
            "sigma": POSITIVE,
            "rho": interval(-1.0, 1.0),
            "alpha0": REAL,
        },
        defaults={
            "kappa_x": 0.2,
            "mu_x": 0.1,
            "kappa_alpha": 0.3,
            "mu_alpha": -0.2,
            "sigma": 0.4,
            "rho": -0.5,
            "alpha0": -0.2,
        },
        drift_x=lambda t, x, a, p: p["kappa_x"] * (p["mu_x"] - np.asarray(x, dtype=float)),
        vol_x=lambda a, p: np.exp(0.5 * np.asarray(a, dtype=float)),
        has_latent=True,
        drift_alpha=lambda a, p: p["kappa_alpha"] * (p["mu_alpha"] - np.asarray(a, dtype=float)),
        vol_alpha=lambda p: p["sigma"],
        leverage="rho",
        timescale_params=("sigma", "rho", "alpha0"),
        param_roles={
            "kappa_x": frozenset({"x_drift"}),
            "mu_x": frozenset({"x_drift"}),
            "kappa_alpha": frozenset({"latent_drift"}),
            "mu_alpha": frozenset({"latent_drift"}),
            "sigma": frozenset({"timescale", "latent_drift"}),
            "rho": frozenset({"timescale"}),
            "alpha0": frozenset({"timescale", "latent_drift"}),
        },
    )


def _make_tbill_logsv() -> ModelSpec:
    # Short-rate model dr = (theta0 - theta1 r) dt + r exp(alpha/2) dB with an
    # OU log-volatility. Working in x = log(r) removes the state-dependent
    # volatility factor and yields
    #   dx = (theta0 exp(-x) - theta1 - exp(alpha)/2) dt + exp(alpha/2) dB.
    return ModelSpec(
        name="tbill-logsv",
        param_names=("theta0", "theta1", "kappa", "mu", "sigma", "alpha0"),
        supports={
            "theta0": REAL,
            "theta1": REAL,
            "kappa": POSITIVE,
            "mu": REAL,
            "sigma": POSITIVE,
            "alpha0": REAL,
        },
        defaults={
            "theta0": 0.130,
            "theta1": 0.013,
            "kappa": 2.403,
            "mu": -3.966,
            "sigma": 2.764,
            "alpha0": -3.966,
        },
        drift_x=lambda t, x, a, p: (
            p["theta0"] * np.exp(-np.asarray(x, dtype=float))
            - p["theta1"]
            - 0.5 * np.exp(np.asarray(a, dtype=float))
        ),
        vol_x=lambda a, p: np.exp(0.5 * np.asarray(a, dtype=float)),
        has_latent=True,
        drift_alpha=lambda a, p: p["kappa"] * (p["mu"] - np.asarray(a, dtype=float)),
        vol_alpha=lambda p: p["sigma"],
        state_vol=lambda x, p: np.asarray(x, dtype=float),
        obs_transform=np.log,
        obs_transform_inv=np.exp,
        obs_log_jacobian=lambda y: -np.log(np.asarray(y, dtype=float)),
        timescale_params=("sigma", "alpha0"),
        param_roles={
            "theta0": frozenset({"x_drift"}),
            "theta1": frozenset({"x_drift"}),
            "kappa": frozenset({"latent_drift"}),
            "mu": frozenset({"latent_drift"}),
            "sigma": frozenset({"timescale", "latent_drift"}),
            "alpha0": frozenset({"timescale", "latent_drift"}),
        },
    )


_REGISTRY: dict[str, Callable[[], ModelSpec]] = {
    "const-vol-scalar": _make_const_vol_scalar,
    "ou-sv-leverage": _make_ou_sv_leverage,
    "tbill-logsv": _make_tbill_logsv,
}


def model_names() -> tuple[str, ...]:
    return tuple(_REGISTRY)


def get_model(name: str) -> ModelSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValidationError(
            f"unknown model {name!r}; registered models: {', '.join(_REGISTRY)}"
        ) from None
    return factory()


# ---------------------------------------------------------------------------
# Euler simulation


def _euler_paths(
    model: ModelSpec,
    params: ParamVector,
    x0: np.ndarray,
    alpha0: np.ndarray,
    grid: TimeGrid,
    rng: RandomStream,
    check_every: int = 1,
):
    """Joint Euler scheme for a batch of paths; returns (X, alpha) arrays
    shaped (n_paths, n_points).

    A leverage correlation feeds the latent driving noise into the observed
    diffusion: dB_total = rho dW + sqrt(1-rho^2) dB. Boundary correlations
    (|rho| = 1) are simulable even though inference excludes them.
    """
    if not all(math.isfinite(v) for v in params.values.values()):
        raise ValidationError("simulation parameters must be finite")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    alpha0 = np.atleast_1d(np.asarray(alpha0, dtype=float))
    n_paths = x0.size
    if alpha0.size != n_paths:
        raise ValidationError("x0 and alpha0 batch sizes differ")
    n = len(grid)
    x = np.empty((n_paths, n))
    a = np.empty((n_paths, n))
    x[:, 0] = x0
    a[:, 0] = alpha0
    if n == 1:
        return x, a

    steps = grid.steps
    times = grid.times
    rho = model.rho(params)
    lev = math.sqrt(max(0.0, 1.0 - rho * rho))
    noise_b = rng.normal((n - 1, n_paths))
    noise_w = rng.normal((n - 1, n_paths)) if model.has_latent else None

    xi = x[:, 0].copy()
    ai = a[:, 0].copy()
    for i in range(n - 1):
        dt = steps[i]
        sq = math.sqrt(dt)
        sx = model.vol_x(ai, params)
        mx = model.drift_x(times[i], xi, ai, params)
        if model.has_latent:
            dw = sq * noise_w[i]
            db = rho * dw + lev * sq * noise_b[i]
            sa = model.vol_alpha(params)
            ma = model.drift_alpha(ai, params)
            ai = ai + ma * dt + sa * dw
        else:
            db = sq * noise_b[i]
        xi = xi + mx * dt + sx * db
        if (i % check_every == 0 or i == n - 2) and not (
            np.all(np.isfinite(xi)) and np.all(np.isfinite(ai))
        ):
            raise ExplosionError(times[i + 1])
        x[:, i + 1] = xi
        a[:, i + 1] = ai
    return x, a


def euler_simulate(
    model: ModelSpec,
    params: ParamVector,
    x0: float,
    alpha0: float,
    grid: TimeGrid,
    rng: RandomStream,
) -> tuple[Path, Path]:
    """Simulate a joint (observed, latent) skeleton on ``grid``.

    For models without a latent diffusion the second path is identically
    ``alpha0``.
    """
    x, a = _euler_paths(model, params, [x0], [alpha0], grid, rng)
    return Path(grid, x[0]), Path(grid, a[0])


# ---------------------------------------------------------------------------
# Latent-path and leverage transforms


def alpha_to_gamma(alpha_path: Path, params: ParamVector, transform: LatentTransform) -> Path:
    """Map a latent path to its unit-diffusion, zero-start representation."""
    beta = transform.h(alpha_path.values, params)
    return Path(alpha_path.grid, beta - beta[0])


def gamma_to_alpha(gamma_path: Path, sigma: float, alpha0: float) -> Path:
    """Recover the latent path: alpha = alpha0 + sigma * gamma."""
    return Path(gamma_path.grid, alpha0 + sigma * gamma_path.values)


def lamperti(x: float, params: ParamVector, model: ModelSpec) -> tuple[float, float]:
    """Unit-state-volatility transform of one observation.

    Returns (transformed value, log-Jacobian of the transform at x). The
    Jacobian is log(1/state_vol(x)); the transformed value comes from the
    model's observation transform. Models without state-dependent volatility
    get the identity map with zero Jacobian.
    """
    if model.state_vol is None:
        return float(x), 0.0
    s2 = float(model.state_vol(x, params))
    if not (s2 > 0.0 and math.isfinite(s2)):
        raise ValidationError(f"state volatility non-positive at x={x}")
    return float(model.obs_transform(x)), -math.log(s2)


def _gamma_on_grid(x_times: np.ndarray, gamma_path: Path) -> np.ndarray:
    gt, gv = gamma_path.times, gamma_path.values
    if x_times[0] < gt[0] - 1e-12 or x_times[-1] > gt[-1] + 1e-12:
        raise ValidationError("latent path grid does not cover the observed path grid")
    return np.interp(x_times, gt, gv)


def leverage_adjustment(
    x_times: np.ndarray, gamma_path: Path, params: ParamVector, model: ModelSpec
) -> np.ndarray:
    """Cumulative correlated-noise drift removed from the observed path.

    The driving noise increments of the latent diffusion are taken as the
    increments of the unit-diffusion latent path on each subinterval, and the
    volatility factor uses left-point evaluation; the adjustment starts at
    zero at the first knot of ``x_times``.
    """
    rho = model.rho(params)
    if abs(rho) >= 1.0:
        raise ValidationError("leverage correlation must satisfy |rho| < 1")
    gamma = _gamma_on_grid(np.asarray(x_times, dtype=float), gamma_path)
    if rho == 0.0:
        return np.zeros_like(gamma)
    scale = model.latent_scale(params)
    alpha = params["alpha0"] + scale * gamma
    sx = model.vol_x(alpha, params)
    inc = rho * sx[:-1] * np.diff(gamma)
    out = np.zeros_like(gamma)
    out[1:] = np.cumsum(inc)
    return out


def leverage_adjust(
    x_path: Path,
    gamma_path: Path,
    params: ParamVector,
    model: ModelSpec,
    direction: str = "forward",
) -> Path:
    """Remove (forward) or restore (inverse) the leverage component.

    Forward maps the observed path X to H = X - adjustment, whose driving
    noise is independent of the latent path; inverse maps H back to X.
    """
    if direction not in ("forward", "inverse"):
        raise ValidationError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    adj = leverage_adjustment(x_path.times, gamma_path, params, model)
    sign = -1.0 if direction == "forward" else 1.0
    return Path(x_path.grid, x_path.values + sign * adj)
