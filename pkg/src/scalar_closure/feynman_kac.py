"""Monte Carlo transport: brute-force estimates of the random scalar field.

The scalar value at a probe point is represented as a particle average
over backward stochastic trajectories

    dX(s) = -xi(t-s) v(X(s)) ds + sqrt(2 kappa) dB(s),   X(0) = x,
    T(x, t) = E_B[ T_I(X(t)) ],

and the ensemble mean adds an outer average over realizations of the
advection noise xi.  The drivers here are the oracle against which the
closed moment equations in :mod:`scalar_closure.closure` are checked.

Integrator.  Each step interleaves diffusion kicks with the exact flow
of dx/dtau = v(x) over the step's advection increment (Strang splitting,
via the backend kernels).  The exact-flow substep realizes the
rough-path (Stratonovich) limit directly, so no Ito-correction drift is
needed and the affine catalog flows carry no advection discretization
error.  An Euler-Maruyama stepper with the explicit correction drift
(half of :func:`scalar_closure.fields.advection_drift_correction`) is
provided as an independent cross-check integrator.

Reproducibility.  All randomness derives from ``spec.base_seed`` through
fixed stream keys: realization r draws its advection noise from stream
(seed, r) and its particle kicks from stream (seed, r, 1 + j) where j
indexes the probe group (j = 0 for single-point estimates).  Estimates
are therefore independent of chunking and evaluation order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.signal import lfilter

from . import backend
from .fields import (
    ShearProfile,
    VelocityField,
    advection_drift_correction,
)
from .noise import (
    BrownianPath,
    OUParams,
    OUPath,
    ou_white_increments,
    stream_generator,
)

_kern = backend.get_backend()

_FLAG_LIMIT = 1e-3  # maximum tolerated fraction of flagged samples


class TransportMCError(RuntimeError):
    """Raised for invalid Monte Carlo setups or excessive flagged samples."""


# ---------------------------------------------------------------------------
# noise models


@dataclass(frozen=True)
class WhiteNoise:
    """Gaussian white advection noise with correlation g^2 delta(t-s)."""

    g: float

    def __post_init__(self):
        if not (self.g >= 0.0 and math.isfinite(self.g)):
            raise TransportMCError(f"noise amplitude g must be >= 0, got {self.g}")

    @property
    def kind(self) -> str:
        return "white"

    @property
    def gamma_effective(self) -> float:
        return 0.0


@dataclass(frozen=True)
class OUNoise:
    """Stationary Ornstein-Uhlenbeck advection noise.

    Parameterized by the white-noise-limit amplitude g and the damping
    gamma; the dispersion is sigma = g * gamma so that the correlation
    g^2 (gamma/2) exp(-gamma|t-s|) tends to g^2 delta(t-s) as gamma
    grows.
    """

    g: float
    gamma: float

    def __post_init__(self):
        if not (self.g >= 0.0 and math.isfinite(self.g)):
            raise TransportMCError(f"noise amplitude g must be >= 0, got {self.g}")
        if not self.gamma > 0.0:
            raise TransportMCError(f"gamma must be positive, got {self.gamma}")

    @property
    def kind(self) -> str:
        return "ou"

    @property
    def gamma_effective(self) -> float:
        return self.gamma

    @property
    def params(self) -> OUParams:
        return OUParams(gamma=self.gamma, sigma=self.g * self.gamma)


# ---------------------------------------------------------------------------
# problem and ensemble descriptions


@dataclass(frozen=True)
class TransportProblem:
    """A random advection-diffusion problem posed for Monte Carlo."""

    field: VelocityField
    noise: WhiteNoise | OUNoise
    kappa: float
    initial_condition: object
    horizon: float

    def __post_init__(self):
        if not (self.kappa >= 0.0 and math.isfinite(self.kappa)):
            raise TransportMCError(f"kappa must be >= 0, got {self.kappa}")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise TransportMCError(f"horizon must be positive, got {self.horizon}")


@dataclass(frozen=True)
class EnsembleSpec:
    """Sampling budget: realizations x particles, seed, and step size.

    ``dt = None`` selects min(1e-3, 0.01 / gamma_effective), resolving
    the noise correlation time for OU models.
    """

    n_noise_realizations: int
    n_particles_per_eval: int
    base_seed: int
    dt: float | None = None
    chunk_size: int = 32

    def __post_init__(self):
        if self.n_noise_realizations < 1 or self.n_particles_per_eval < 1:
            raise TransportMCError("realization and particle counts must be >= 1")
        if self.dt is not None and not self.dt > 0.0:
            raise TransportMCError(f"dt must be positive, got {self.dt}")
        if self.chunk_size < 1:
            raise TransportMCError("chunk_size must be >= 1")


@dataclass(frozen=True)
class FieldEstimate:
    """Probe-grid Monte Carlo estimate with realization-level error bars."""

    points: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_flagged: int = 0
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.stderr < 0.0) or not np.all(np.isfinite(self.mean)):
            raise TransportMCError("estimate must have finite means and stderr >= 0")


@dataclass(frozen=True)
class CorrelatorEstimate:
    """Scalar estimate of an N-point product moment E[prod_j T(x_j, t)]."""

    points: np.ndarray
    value: float
    stderr: float
    n_flagged: int = 0
    meta: dict = dc_field(default_factory=dict)


@dataclass(frozen=True)
class DispersionEstimate:
    """Long-time displacement covariance rate (1/2t) Cov[X_t - X_0]."""

    rate: np.ndarray
    stderr: np.ndarray
    times: np.ndarray
    trend: np.ndarray
    meta: dict = dc_field(default_factory=dict)


# ---------------------------------------------------------------------------
# field and IC dispatch


def _flow_params(field: VelocityField) -> tuple[int, np.ndarray]:
    """Map a catalog velocity field to the backend (code, parameters)."""
    kind = field.meta.get("kind")
    if kind == "constant":
        return _kern.FIELD_CONSTANT, np.asarray(field.meta["value"], dtype=float)
    if kind == "linear_shear":
        return _kern.FIELD_LINEAR_SHEAR, np.zeros(0)
    if kind == "strain":
        code = (_kern.FIELD_STRAIN_1D if field.meta["dimension"] == 1
                else _kern.FIELD_STRAIN_2D)
        return code, np.zeros(0)
    if kind == "cellular":
        period = field.meta["period"]
        return _kern.FIELD_CELLULAR, np.array(
            [field.meta["amplitude"], 2.0 * math.pi / period])
    if kind == "general_shear":
        prof: ShearProfile = field.meta["profile"]
        if prof.t_period is not None:
            raise TransportMCError(
                "time-modulated shear profiles are not supported by the "
                "particle kernels")
        scale = prof.t_const
        a0 = scale * (prof.cos_coeffs[0] if prof.cos_coeffs else 0.0)
        a_rest = [scale * a for a in prof.cos_coeffs[1:]]
        b_rest = [scale * b for b in prof.sin_coeffs]
        fp = np.array([2.0 * math.pi / prof.period, a0,
                       len(a_rest), len(b_rest), *a_rest, *b_rest])
        return _kern.FIELD_FOURIER_SHEAR, fp
    raise TransportMCError(f"no particle kernel for field kind {kind!r}")


def ic_callable(ic, dim: int):
    """Return a vectorized T_I evaluator on particle positions (n, d).

    Accepts a callable of the d coordinate arrays, or a dict of kind
    'gaussian' (unit-mass product Gaussian) or 'fourier' (cosine mode;
    requires explicit 'span').  Singular 'delta' sources must be run as
    narrow Gaussians with width extrapolation by the caller.
    """
    if callable(ic):
        return lambda pos: np.asarray(ic(*(pos[..., i] for i in range(dim))), dtype=float)
    if isinstance(ic, dict):
        kind = ic.get("kind")
        if kind == "gaussian":
            center = np.broadcast_to(
                np.atleast_1d(np.asarray(ic.get("center", 0.0), dtype=float)), (dim,))
            width = np.broadcast_to(
                np.atleast_1d(np.asarray(ic.get("width", 1.0), dtype=float)), (dim,))
            if np.any(width <= 0.0):
                raise TransportMCError("gaussian IC widths must be positive")
            norm = float(np.prod(1.0 / np.sqrt(2.0 * math.pi * width**2)))

            def gauss(pos):
                dev = (pos - center) / width
                return norm * np.exp(-0.5 * np.einsum("...d,...d->...", dev, dev))

            return gauss
        if kind == "delta":
            raise TransportMCError(
                "singular delta sources are not sampled directly; use a narrow "
                "gaussian and extrapolate the width to zero")
        if kind == "fourier":
            mode = np.broadcast_to(
                np.atleast_1d(np.asarray(ic.get("mode", 1), dtype=float)), (dim,))
            if "span" not in ic:
                raise TransportMCError("fourier IC requires an explicit 'span'")
            span = np.broadcast_to(
                np.atleast_1d(np.asarray(ic["span"], dtype=float)), (dim,))
            offset = float(ic.get("offset", 0.0))
            freq = 2.0 * math.pi * mode / span

            def fourier(pos):
                return offset + np.cos(pos @ freq)

            return fourier
        raise TransportMCError(f"unknown IC kind {kind!r}")
    raise TransportMCError(f"unsupported IC spec {type(ic)}")


def _gaussian_ic_params(ic, dim):
    """(center, width) arrays if ic is a product-Gaussian dict, else None."""
    if isinstance(ic, dict) and ic.get("kind") == "gaussian":
        center = np.broadcast_to(
            np.atleast_1d(np.asarray(ic.get("center", 0.0), dtype=float)), (dim,))
        width = np.broadcast_to(
            np.atleast_1d(np.asarray(ic.get("width", 1.0), dtype=float)), (dim,))
        if np.any(width <= 0.0):
            raise TransportMCError("gaussian IC widths must be positive")
        return np.array(center), np.array(width)
    return None


# ---------------------------------------------------------------------------
# time grid and random increments


def default_dt(noise) -> float:
    gamma = noise.gamma_effective
    return min(1e-3, 0.01 / gamma) if gamma > 0.0 else 1e-3


def _step_count(horizon: float, dt: float) -> int:
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise TransportMCError(
            f"horizon {horizon} is not an integer multiple of dt {dt}")
    return n


def _sample_advection(noise, n: int, dt: float, rng) -> np.ndarray:
    """Backward per-step advection increments -int xi(t-s) ds for one realization."""
    if noise.kind == "white":
        # white noise is time-reversal invariant: sample the reversed
        # increments directly
        return -noise.g * rng.normal(0.0, math.sqrt(dt), size=n)
    params = noise.params
    decay = math.exp(-params.gamma * dt)
    svar = params.stationary_var
    values = np.empty(n + 1)
    values[0] = rng.normal(0.0, math.sqrt(svar)) if svar > 0 else 0.0
    kick_sd = math.sqrt(max(svar * (1.0 - decay * decay), 0.0))
    kicks = rng.normal(0.0, kick_sd, size=n) if kick_sd > 0 else np.zeros(n)
    # x_{k+1} = decay x_k + kick_k as an IIR filter plus the x_0 transient
    values[1:] = lfilter([1.0], [1.0, -decay], kicks)
    values[1:] += values[0] * decay ** np.arange(1, n + 1)
    w = 0.5 * dt * (values[1:] + values[:-1])  # trapezoid per-step integrals
    return -w[::-1]


def _path_advection(noise, xi_path, horizon: float) -> tuple[np.ndarray, float]:
    """Backward advection increments from an explicit sampled path."""
    if isinstance(xi_path, BrownianPath):
        if noise.kind != "white":
            raise TransportMCError("a Brownian path parameterizes white noise only")
        dt = xi_path.grid.dt
        n = _step_count(horizon, dt)
        if n > xi_path.grid.n_steps:
            raise TransportMCError("path horizon shorter than problem horizon")
        incr = np.diff(xi_path.values[: n + 1])
        return -noise.g * incr[::-1], dt
    if isinstance(xi_path, OUPath):
        if noise.kind != "ou":
            raise TransportMCError("an OU path requires an OU noise model")
        dt = xi_path.grid.dt
        n = _step_count(horizon, dt)
        if n > xi_path.grid.n_steps:
            raise TransportMCError("path horizon shorter than problem horizon")
        w = ou_white_increments(xi_path)[:n]
        return -w[::-1], dt
    raise TransportMCError(f"unsupported path type {type(xi_path)}")


def _kick_scales(n: int, kappa: float, dt: float) -> np.ndarray:
    """Standard deviations for the n+1 kick slots (half, full(s), half)."""
    s = np.full(n + 1, math.sqrt(2.0 * kappa * dt))
    s[0] = s[-1] = math.sqrt(kappa * dt)
    return s


def _sample_kicks(rng, n_particles: int, n: int, d: int, kappa: float,
                  dt: float) -> np.ndarray:
    if kappa == 0.0:
        return np.zeros((n_particles, n + 1, d))
    kicks = rng.standard_normal((n_particles, n + 1, d))
    kicks *= _kick_scales(n, kappa, dt)[None, :, None]
    return kicks


# ---------------------------------------------------------------------------
# per-realization estimate


def solve_one_realization(problem: TransportProblem, xi_path, x, n_particles: int,
                          seed: int) -> float:
    """Particle estimate of T(x, t) for one fixed advection-noise path.

    Particles with non-finite final positions are flagged and excluded
    from the average; an all-flagged population raises.
    """
    if n_particles < 1:
        raise TransportMCError("n_particles must be >= 1")
    d = problem.field.dimension
    b, dt = _path_advection(problem.noise, xi_path, problem.horizon)
    code, fp = _flow_params(problem.field)
    f_ic = ic_callable(problem.initial_condition, d)

    pos = np.tile(np.asarray(x, dtype=float).reshape(1, d), (n_particles, 1))
    rng = stream_generator(seed)
    kicks = _sample_kicks(rng, n_particles, b.shape[0], d, problem.kappa, dt)
    _kern.transport_chunk(code, fp, pos, b, kicks)

    finite = np.all(np.isfinite(pos), axis=1)
    if not finite.any():
        raise TransportMCError("all particles flagged non-finite")
    with np.errstate(invalid="ignore", over="ignore"):
        vals = np.asarray(f_ic(pos[finite]), dtype=float)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise TransportMCError("all particles flagged non-finite")
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# ensemble drivers


def _use_affine_path(problem: TransportProblem, code: int) -> bool:
    return (code in _kern.AFFINE_CODES
            and _gaussian_ic_params(problem.initial_condition,
                                    problem.field.dimension) is not None)


def _chunk_ranges(total: int, chunk: int):
    for lo in range(0, total, chunk):
        yield lo, min(lo + chunk, total)


def _affine_estimates(problem, spec, points, dt, n, *, kick_key=(1,)):
    """Realization-level estimates (R, Q) via the affine fast path."""
    code, fp = _flow_params(problem.field)
    d = problem.field.dimension
    center, width = _gaussian_ic_params(problem.initial_condition, d)
    R, P = spec.n_noise_realizations, spec.n_particles_per_eval
    est = np.empty((R, points.shape[0]))
    for lo, hi in _chunk_ranges(R, spec.chunk_size):
        c = hi - lo
        bs = np.empty((c, n))
        kicks = np.empty((c, P, n + 1, d))
        scales = _kick_scales(n, problem.kappa, dt)[None, :, None]
        for i, r in enumerate(range(lo, hi)):
            bs[i] = _sample_advection(problem.noise, n, dt,
                                      stream_generator(spec.base_seed, r))
            if problem.kappa == 0.0:
                kicks[i] = 0.0
            else:
                rng = stream_generator(spec.base_seed, r, *kick_key)
                kicks[i] = rng.standard_normal((P, n + 1, d))
                kicks[i] *= scales
        est[lo:hi] = _kern.affine_ensemble_chunk(code, fp, bs, kicks, points,
                                                 center, width)
    return est


def _general_estimates(problem, spec, points, dt, n, *, kick_key=(1,)):
    """Realization-level estimates (R, Q): direct particle transport.

    One particle population per realization is reused across probe
    points (correlating probes but leaving each unbiased); flagged
    particle counts are accumulated per probe evaluation.
    """
    code, fp = _flow_params(problem.field)
    d = problem.field.dimension
    f_ic = ic_callable(problem.initial_condition, d)
    R, P = spec.n_noise_realizations, spec.n_particles_per_eval
    Q = points.shape[0]
    # stack all probes into one kernel call when the repeated kick array
    # stays small; otherwise walk the probes one at a time
    stack = Q * P * (n + 1) * d * 8 <= 1 << 27
    est = np.empty((R, Q))
    n_flagged = 0
    for r in range(R):
        b = _sample_advection(problem.noise, n, dt,
                              stream_generator(spec.base_seed, r))
        kicks = _sample_kicks(stream_generator(spec.base_seed, r, *kick_key),
                              P, n, d, problem.kappa, dt)
        if stack:
            pos = np.repeat(points, P, axis=0)
            big = np.broadcast_to(kicks, (Q,) + kicks.shape).reshape(Q * P, n + 1, d)
            if not big.flags.writeable:  # Q == 1 keeps a read-only view
                big = big.copy()
            _kern.transport_chunk(code, fp, pos, b, np.ascontiguousarray(big))
            finite = np.all(np.isfinite(pos), axis=1).reshape(Q, P)
            n_flagged += Q * P - int(finite.sum())
            with np.errstate(invalid="ignore", over="ignore"):
                vals = f_ic(pos).reshape(Q, P)
                sums = np.where(finite, vals, 0.0).sum(axis=1)
            counts = finite.sum(axis=1)
            est[r] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        else:
            for q in range(Q):
                pos = np.tile(points[q].reshape(1, d), (P, 1))
                _kern.transport_chunk(code, fp, pos, b, kicks)
                finite = np.all(np.isfinite(pos), axis=1)
                n_flagged += P - int(finite.sum())
                est[r, q] = np.mean(f_ic(pos[finite])) if finite.any() else np.nan
    return est, n_flagged


def ensemble_mean(problem: TransportProblem, spec: EnsembleSpec,
                  points) -> FieldEstimate:
    """Double Monte Carlo average of T over noise realizations and particles.

    Returns probe-grid means with standard errors computed from the
    realization-level spread (each realization estimate is iid, so the
    spread captures particle noise and flow noise together).  Fails if
    more than 0.1% of samples are flagged non-finite.
    """
    d = problem.field.dimension
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1) if d == 1 else points.reshape(1, -1)
    if points.ndim != 2 or points.shape[1] != d:
        raise TransportMCError(f"points must have shape (Q, {d})")
    dt = spec.dt if spec.dt is not None else default_dt(problem.noise)
    n = _step_count(problem.horizon, dt)
    code, _ = _flow_params(problem.field)

    if _use_affine_path(problem, code):
        est = _affine_estimates(problem, spec, points, dt, n)
        row_ok = np.all(np.isfinite(est), axis=1)
        n_flagged = int((~row_ok).sum())
        frac = n_flagged / est.shape[0]
        method = "affine"
    else:
        est, n_flagged = _general_estimates(problem, spec, points, dt, n)
        row_ok = np.all(np.isfinite(est), axis=1)
        n_flagged += int((~row_ok).sum()) * spec.n_particles_per_eval
        frac = n_flagged / (est.shape[0] * spec.n_particles_per_eval * points.shape[0])
        method = "particles"
    if frac > _FLAG_LIMIT:
        raise TransportMCError(
            f"{100 * frac:.3f}% of samples flagged non-finite (limit 0.1%)")
    good = est[row_ok]
    mean = good.mean(axis=0)
    stderr = (good.std(axis=0, ddof=1) / math.sqrt(good.shape[0])
              if good.shape[0] > 1 else np.zeros(points.shape[0]))
    return FieldEstimate(points=points, mean=mean, stderr=stderr,
                         n_flagged=n_flagged,
                         meta={"dt": dt, "method": method,
                               "n_realizations": spec.n_noise_realizations,
                               "n_particles": spec.n_particles_per_eval,
                               "t": problem.horizon})


def npoint_correlator_mc(problem: TransportProblem, points,
                         spec: EnsembleSpec) -> CorrelatorEstimate:
    """Estimate E[prod_j T(x_j, t)] sharing the noise across the product.

    Within each realization the factors T(x_j, t) are estimated with
    independent particle populations (streams (seed, r, 1 + j)), so the
    product of factor estimates is unbiased for the product of
    conditional means.
    """
    d = problem.field.dimension
    points = np.asarray(points, dtype=float)
    if points.ndim == 1 and (d == 1 or points.size == d):
        points = points.reshape(-1, d)
    if points.ndim != 2 or points.shape[1] != d:
        raise TransportMCError(f"points must have shape (N, {d})")
    N = points.shape[0]
    if N < 1:
        raise TransportMCError("need at least one probe point")
    dt = spec.dt if spec.dt is not None else default_dt(problem.noise)
    n = _step_count(problem.horizon, dt)
    code, _ = _flow_params(problem.field)

    factors = np.empty((spec.n_noise_realizations, N))
    n_flagged = 0
    for j in range(N):
        if _use_affine_path(problem, code):
            factors[:, [j]] = _affine_estimates(problem, spec, points[[j]], dt, n,
                                                kick_key=(1 + j,))
        else:
            est_j, flag_j = _general_estimates(problem, spec, points[[j]], dt, n,
                                               kick_key=(1 + j,))
            factors[:, [j]] = est_j
            n_flagged += flag_j
    prods = np.prod(factors, axis=1)
    ok = np.isfinite(prods)
    n_flagged += int((~ok).sum())
    if (~ok).mean() > _FLAG_LIMIT:
        raise TransportMCError("too many flagged realizations in product estimate")
    good = prods[ok]
    value = float(good.mean())
    stderr = (float(good.std(ddof=1) / math.sqrt(good.size))
              if good.size > 1 else 0.0)
    return CorrelatorEstimate(points=points, value=value, stderr=stderr,
                              n_flagged=n_flagged,
                              meta={"dt": dt, "t": problem.horizon,
                                    "n_realizations": spec.n_noise_realizations,
                                    "n_particles": spec.n_particles_per_eval})


# ---------------------------------------------------------------------------
# Euler-Maruyama cross-check integrator


def em_realization(problem: TransportProblem, xi_path, x, n_particles: int,
                   seed: int) -> float:
    """Euler-Maruyama variant of :func:`solve_one_realization`.

    Steps the Ito form of the backward SDE directly, adding half of
    :func:`scalar_closure.fields.advection_drift_correction` as the
    white-noise-limit conversion drift.  Weak order 1; exists to
    cross-validate the splitting kernels on non-affine fields.
    """
    if n_particles < 1:
        raise TransportMCError("n_particles must be >= 1")
    d = problem.field.dimension
    b, dt = _path_advection(problem.noise, xi_path, problem.horizon)
    f_ic = ic_callable(problem.initial_condition, d)
    g = problem.noise.g
    pos = np.tile(np.asarray(x, dtype=float).reshape(1, d), (n_particles, 1))
    rng = stream_generator(seed)
    sd = math.sqrt(2.0 * problem.kappa * dt)
    for k in range(b.shape[0]):
        vel = problem.field.evaluate(pos)
        drift = 0.5 * advection_drift_correction(problem.field, g, pos)
        pos += drift * dt + b[k] * vel
        if problem.kappa > 0.0:
            pos += sd * rng.standard_normal((n_particles, d))
    finite = np.all(np.isfinite(pos), axis=1)
    if not finite.any():
        raise TransportMCError("all particles flagged non-finite")
    with np.errstate(invalid="ignore", over="ignore"):
        vals = np.asarray(f_ic(pos[finite]), dtype=float)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise TransportMCError("all particles flagged non-finite")
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# effective dispersion


def effective_dispersion_mc(field: VelocityField, pe: float, horizon: float,
                            spec: EnsembleSpec) -> DispersionEstimate:
    """Displacement covariance rate (1/2t) Cov[X(t) - X(0)] at long time.

    Simulates the nondimensional single-particle motion whose generator
    is Laplacian + Pe^2 (v . grad)^2 (advection amplitude sqrt(2) Pe,
    unit diffusivity): every particle carries an independent advection
    noise, so the particle cloud's spreading rate converges to the
    homogenized tensor of the ensemble-averaged equation.  A diagnostic
    warning reports the trend slope when the rate has not settled.
    """
    if field.spatial_period is None or not field.divergence_free:
        raise TransportMCError(
            "effective dispersion requires a periodic divergence-free field")
    if pe < 0.0:
        raise TransportMCError(f"Pe must be >= 0, got {pe}")
    if not horizon > 0.0:
        raise TransportMCError("horizon must be positive")
    code, fp = _flow_params(field)
    d = field.dimension
    dt = spec.dt if spec.dt is not None else 1e-3
    n = _step_count(horizon, dt)
    snap_idx = np.unique(np.maximum(
        np.round(np.array([0.25, 0.5, 1.0]) * n).astype(int), 1))
    times = snap_idx * dt
    g_eff = math.sqrt(2.0) * pe
    span = np.asarray(field.spatial_period, dtype=float)

    n_tot = 0
    s1 = np.zeros((len(snap_idx), d))
    s2 = np.zeros((len(snap_idx), d, d))
    for r in range(spec.n_noise_realizations):
        P = spec.n_particles_per_eval
        rng_b = stream_generator(spec.base_seed, r)
        b = g_eff * rng_b.normal(0.0, math.sqrt(dt), size=(P, n))
        kicks = _sample_kicks(stream_generator(spec.base_seed, r, 1),
                              P, n, d, 1.0, dt)
        x0 = stream_generator(spec.base_seed, r, 2).random((P, d)) * span
        pos = x0.copy()
        snaps = _kern.transport_snapshots_chunk(code, fp, pos, b, kicks, snap_idx)
        disp = snaps - x0[None, :, :]
        n_tot += P
        s1 += disp.sum(axis=1)
        s2 += np.einsum("spi,spj->sij", disp, disp)

    mean = s1 / n_tot
    cov = s2 / (n_tot - 1) - np.einsum(
        "si,sj->sij", mean, mean) * (n_tot / (n_tot - 1))
    trend = cov / (2.0 * times[:, None, None])
    rate = trend[-1]
    t_fin = times[-1]
    # per-entry sampling error of a covariance under the Gaussian approximation
    var_cov = (np.einsum("ii,jj->ij", cov[-1], cov[-1]) + cov[-1] ** 2) / (n_tot - 1)
    stderr = np.sqrt(var_cov) / (2.0 * t_fin)

    if len(times) > 1:
        prev = trend[-2]
        drift_scale = max(np.max(np.abs(np.diag(rate))), 1e-30)
        change = np.max(np.abs(rate - prev)) / drift_scale
        noise_level = 3.0 * np.max(stderr) / drift_scale
        if change > max(0.05, noise_level):
            slope = (rate - prev) / (times[-1] - times[-2])
            warnings.warn(
                "dispersion rate not converged over the horizon: relative "
                f"change {change:.2e} between t={times[-2]:g} and "
                f"t={times[-1]:g}, max trend slope {np.max(np.abs(slope)):.2e}",
                RuntimeWarning, stacklevel=2)
    return DispersionEstimate(rate=rate, stderr=stderr, times=times, trend=trend,
                              meta={"pe": pe, "dt": dt, "n_particles_total": n_tot,
                                    "horizon": horizon})
