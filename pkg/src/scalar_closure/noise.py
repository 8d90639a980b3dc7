"""Random processes driving the scalar transport models.

Provides reproducible sampling of Brownian paths, stationary
Ornstein-Uhlenbeck paths, and time integrals of geometric Brownian
motion.  Everything here is a pure function of (parameters, grid, seed):
streams are derived from a root seed through ``numpy.random.SeedSequence``
spawn keys, one stream per path index, so ensembles are order-independent
and safe to evaluate concurrently.

Two normalizations of the exponential time integral appear downstream:
``A_t = int_0^t exp(2 B_s + 2 mu s) ds`` (the drifted form, sign +1) and
the amplitude-scaled form ``int_0^t exp(-2 g B_s) ds``.  Both are exposed;
they are linked through Brownian scaling by the identity

    X_t = g * (4 pi A_{g^2 t})^(-1/2),

where ``X_t`` is the peak value of the strain-flow scalar (see
``closure.strain_realization``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GENERATOR_FAMILIES = ("pcg64", "philox")
_DEFAULT_FAMILY = "pcg64"

# exp argument above which float64 overflows
_EXP_OVERFLOW = 709.0


class NoiseParameterError(ValueError):
    """Raised when a grid or process parameter is out of domain."""


def stream_generator(seed: int, *key: int, family: str = _DEFAULT_FAMILY) -> np.random.Generator:
    """Return the generator for stream ``key`` of root ``seed``.

    Distinct keys give statistically independent streams; the mapping
    (seed, key) -> stream is fixed, so ensemble members can be produced
    in any order or in parallel and still be bit-reproducible.
    """
    if family not in GENERATOR_FAMILIES:
        raise NoiseParameterError(f"unknown generator family {family!r}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    bitgen = np.random.PCG64(ss) if family == "pcg64" else np.random.Philox(ss)
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class PathGrid:
    """Uniform time grid t_k = k*dt, k = 0..n_steps."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise NoiseParameterError(f"dt must be positive and finite, got {self.dt}")
        if self.n_steps < 0:
            raise NoiseParameterError(f"n_steps must be >= 0, got {self.n_steps}")

    @property
    def t_final(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class BrownianPath:
    """Sampled standard Brownian motion; values[k] = B(t_k), values[0] = 0."""

    grid: PathGrid
    values: np.ndarray
    seed: int


@dataclass(frozen=True)
class OUParams:
    """Stationary Ornstein-Uhlenbeck process parameters.

    gamma is the damping rate (1/time), sigma the dispersion
    (1/time^(1/2)).  The stationary variance is sigma^2/(2 gamma), the
    covariance sigma^2/(2 gamma) * exp(-gamma |t-s|), and the white-noise
    limit gamma -> infinity at fixed g = sigma/gamma has amplitude g.
    """

    gamma: float
    sigma: float

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise NoiseParameterError(f"gamma must be positive, got {self.gamma}")
        if self.sigma < 0.0:
            raise NoiseParameterError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def g(self) -> float:
        return self.sigma / self.gamma

    @property
    def stationary_var(self) -> float:
        return self.sigma**2 / (2.0 * self.gamma)


@dataclass(frozen=True)
class OUPath:
    """Sampled stationary OU path; values[k] = xi(t_k)."""

    grid: PathGrid
    values: np.ndarray
    params: OUParams
    seed: int


@dataclass(frozen=True)
class GBMIntegralSample:
    """Trapezoid value of an exponential-of-Brownian time integral.

    ``saturated`` marks paths whose integral overflows float64 even after
    factoring out the running maximum of the exponent; ``log_A`` stays
    finite for those and callers accumulating heavy-tailed statistics
    should discard or down-weight flagged samples explicitly.
    """

    A: float
    mu: float
    t: float
    sign: int = 1
    saturated: bool = False
    log_A: float = field(default=float("nan"))


def brownian_path(grid: PathGrid, seed: int, *, family: str = _DEFAULT_FAMILY) -> BrownianPath:
    """Sample B(t_k) on ``grid``; increments ~ Normal(0, dt), values[0] = 0."""
    rng = stream_generator(seed, family=family)
    values = np.empty(grid.n_steps + 1)
    values[0] = 0.0
    if grid.n_steps:
        incr = rng.normal(0.0, math.sqrt(grid.dt), size=grid.n_steps)
        np.cumsum(incr, out=values[1:])
    return BrownianPath(grid=grid, values=values, seed=seed)


def ou_path(params: OUParams, grid: PathGrid, seed: int, *, family: str = _DEFAULT_FAMILY) -> OUPath:
    """Sample the stationary OU process with the exact discrete transition.

    xi(0) ~ N(0, sigma^2/2gamma) and
    xi_{k+1} = xi_k e^(-gamma dt) + N(0, (sigma^2/2gamma)(1 - e^(-2 gamma dt))),
    which has no step-size bias in mean or covariance.
    """
    rng = stream_generator(seed, family=family)
    decay = math.exp(-params.gamma * grid.dt)
    svar = params.stationary_var
    values = np.empty(grid.n_steps + 1)
    values[0] = rng.normal(0.0, math.sqrt(svar)) if svar > 0 else 0.0
    if grid.n_steps:
        kick_sd = math.sqrt(svar * (1.0 - decay * decay))
        kicks = rng.normal(0.0, kick_sd, size=grid.n_steps) if kick_sd > 0 else np.zeros(grid.n_steps)
        x = values[0]
        for k in range(grid.n_steps):
            x = x * decay + kicks[k]
            values[k + 1] = x
    return OUPath(grid=grid, values=values, params=params, seed=seed)


def _trapezoid_exp(exponent: np.ndarray, dt: float) -> tuple[float, float, bool]:
    """Trapezoid integral of exp(exponent(s)) with overflow factored out.

    Returns (A, log_A, saturated).  The running maximum m is pulled out so
    exp never overflows inside the quadrature; saturation only occurs when
    the final value itself exceeds float64 range.
    """
    m = float(np.max(exponent))
    scaled = np.exp(exponent - m)
    integral = float(np.trapezoid(scaled, dx=dt)) if exponent.size > 1 else 0.0
    if integral <= 0.0:
        # horizon zero: degenerate empty integral
        return 0.0, -math.inf, False
    log_a = m + math.log(integral)
    if log_a > _EXP_OVERFLOW:
        return math.inf, log_a, True
    return math.exp(log_a), log_a, False


def gbm_integral(path: BrownianPath, mu: float = 0.0, sign: int = 1) -> GBMIntegralSample:
    """Trapezoid value of int_0^t exp(sign * 2 * (B_s + mu s)) ds.

    sign=+1 gives the drifted integral A_t^(mu); sign=-1 gives the
    reflected form used by the strain-flow realization formula.  The
    trapezoid error is O(dt^2) for a fixed path.
    """
    if sign not in (1, -1):
        raise NoiseParameterError(f"sign must be +1 or -1, got {sign}")
    times = path.grid.times
    exponent = 2.0 * sign * (path.values + mu * times)
    a, log_a, sat = _trapezoid_exp(exponent, path.grid.dt)
    return GBMIntegralSample(A=a, mu=mu, t=path.grid.t_final, sign=sign, saturated=sat, log_A=log_a)


def gbm_integral_scaled(path: BrownianPath, g: float) -> GBMIntegralSample:
    """Trapezoid value of the amplitude-scaled form int_0^t exp(-2 g B_s) ds.

    Equal in law to A_{g^2 t} / g^2 by Brownian scaling, which is how the
    identity X_t = g (4 pi A_{g^2 t})^(-1/2) transfers statistics between
    the two normalizations.
    """
    exponent = -2.0 * g * path.values
    a, log_a, sat = _trapezoid_exp(exponent, path.grid.dt)
    return GBMIntegralSample(A=a, mu=0.0, t=path.grid.t_final, sign=-1, saturated=sat, log_A=log_a)


def ou_white_increments(path: OUPath) -> np.ndarray:
    """Per-step integrals int_{t_k}^{t_{k+1}} xi(s) ds by the trapezoid rule.

    These play the role of the advection increments g*dW in the
    white-noise limit; their total variance approaches g^2 t as
    gamma -> infinity at fixed g = sigma/gamma.
    """
    v = path.values
    return 0.5 * path.grid.dt * (v[1:] + v[:-1])
