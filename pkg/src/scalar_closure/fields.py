"""Deterministic velocity fields with analytic Jacobians.

The catalog covers the fields used across the solvers: linear shear
``(y, 0)``, general shear profiles ``(u(y,t), 0)`` given as finite
Fourier series, the strain flow ``(x, -y)`` (and its 1D reduction
``v(x) = x``), a cellular flow derived from a product-of-sines stream
function, and constant fields.  Shear profiles are spectral on purpose:
every downstream formula needs period averages, and a finite Fourier
series makes those averages exact.

Fields are immutable after construction; ``evaluate`` and ``jacobian``
are pure, vectorized over leading axes of ``x``, and cheap enough to
call inside particle loops (the compiled kernels special-case the
catalog entries instead of calling back into Python).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np


class FieldParameterError(ValueError):
    """Raised for unknown catalog names or malformed parameters."""


@dataclass(frozen=True)
class VelocityField:
    """A deterministic velocity field v(x, t) with its Jacobian.

    ``evaluate(x, t)`` maps points of shape (..., d) to vectors of the
    same shape; ``jacobian(x, t)`` returns (..., d, d) with entries
    J[i, j] = d v_i / d x_j.  ``spatial_period`` is a per-axis tuple for
    periodic fields (None when unbounded), ``temporal_period`` likewise.
    ``max_mode`` bounds the spatial Fourier content per axis so spectral
    consumers can choose exact collocation grids.
    """

    dimension: int
    evaluate: Callable[[np.ndarray, float], np.ndarray]
    jacobian: Callable[[np.ndarray, float], np.ndarray]
    divergence_free: bool
    spatial_period: tuple | None = None
    temporal_period: float | None = None
    max_mode: int | None = None
    meta: dict = dc_field(default_factory=dict)

    def __call__(self, x, t=0.0):
        return self.evaluate(np.asarray(x, dtype=float), t)


@dataclass(frozen=True)
class FieldCatalogEntry:
    """Serializable catalog reference: a name plus its parameter dict."""

    name: str
    parameters: dict = dc_field(default_factory=dict)

    def to_config(self) -> dict:
        return {"name": self.name, **self.parameters}

    @staticmethod
    def from_config(cfg: dict) -> "FieldCatalogEntry":
        cfg = dict(cfg)
        try:
            name = cfg.pop("name")
        except KeyError:
            raise FieldParameterError("field config requires a 'name' key") from None
        return FieldCatalogEntry(name=name, parameters=cfg)


@dataclass(frozen=True)
class ShearProfile:
    """Finite Fourier shear profile u(y, t) = u_s(y) * m(t).

    u_s(y) = cos_coeffs[0] + sum_j cos_coeffs[j] cos(2 pi j y / period)
                           + sum_j sin_coeffs[j-1] sin(2 pi j y / period)
    and m(t) = 1 for steady profiles, otherwise
    m(t) = t_const + t_cos cos(2 pi t / t_period) + t_sin sin(2 pi t / t_period).
    """

    cos_coeffs: tuple
    sin_coeffs: tuple = ()
    period: float = 1.0
    t_const: float = 1.0
    t_cos: float = 0.0
    t_sin: float = 0.0
    t_period: float | None = None

    def __post_init__(self):
        if self.period <= 0:
            raise FieldParameterError("shear profile period must be positive")
        if self.t_period is not None and self.t_period <= 0:
            raise FieldParameterError("temporal period must be positive")
        if self.t_period is None and (self.t_cos or self.t_sin):
            raise FieldParameterError("temporal coefficients require t_period")

    @property
    def max_mode(self) -> int:
        return max(len(self.cos_coeffs) - 1, len(self.sin_coeffs))

    def modulation(self, t: float) -> float:
        if self.t_period is None:
            return self.t_const
        w = 2.0 * math.pi * t / self.t_period
        return self.t_const + self.t_cos * math.cos(w) + self.t_sin * math.sin(w)

    def profile(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        k0 = 2.0 * math.pi / self.period
        out = np.full_like(y, self.cos_coeffs[0] if self.cos_coeffs else 0.0)
        for j, a in enumerate(self.cos_coeffs[1:], start=1):
            out += a * np.cos(j * k0 * y)
        for j, b in enumerate(self.sin_coeffs, start=1):
            out += b * np.sin(j * k0 * y)
        return out

    def profile_deriv(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        k0 = 2.0 * math.pi / self.period
        out = np.zeros_like(y)
        for j, a in enumerate(self.cos_coeffs[1:], start=1):
            out -= a * j * k0 * np.sin(j * k0 * y)
        for j, b in enumerate(self.sin_coeffs, start=1):
            out += b * j * k0 * np.cos(j * k0 * y)
        return out

    def __call__(self, y, t=0.0):
        return self.profile(y) * self.modulation(t)

    # Exact period averages (Parseval); used by the shear shortcut and
    # the N-point tensor blocks.
    def mean_u(self) -> float:
        a0 = self.cos_coeffs[0] if self.cos_coeffs else 0.0
        return a0 * self._mean_mod()

    def mean_u_sq(self) -> float:
        a0 = self.cos_coeffs[0] if self.cos_coeffs else 0.0
        s = a0 * a0
        s += 0.5 * sum(a * a for a in self.cos_coeffs[1:])
        s += 0.5 * sum(b * b for b in self.sin_coeffs)
        return s * self._mean_mod_sq()

    def _mean_mod(self) -> float:
        return self.t_const if self.t_period is not None else self.t_const

    def _mean_mod_sq(self) -> float:
        if self.t_period is None:
            return self.t_const**2
        return self.t_const**2 + 0.5 * (self.t_cos**2 + self.t_sin**2)


def _constant_field(params: dict) -> VelocityField:
    vec = np.asarray(params.get("value", (1.0, 0.0)), dtype=float)
    d = vec.size

    def evaluate(x, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(vec, x.shape).copy()

    def jacobian(x, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (d,))

    return VelocityField(
        dimension=d, evaluate=evaluate, jacobian=jacobian, divergence_free=True,
        spatial_period=(1.0,) * d, max_mode=0,
        meta={"kind": "constant", "value": tuple(vec.tolist())},
    )


def _linear_shear_field() -> VelocityField:
    jac = np.array([[0.0, 1.0], [0.0, 0.0]])

    def evaluate(x, t=0.0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = x[..., 1]
        return out

    def jacobian(x, t=0.0):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(jac, x.shape[:-1] + (2, 2)).copy()

    return VelocityField(
        dimension=2, evaluate=evaluate, jacobian=jacobian, divergence_free=True,
        meta={"kind": "linear_shear"},
    )


def _strain_field(params: dict) -> VelocityField:
    d = int(params.get("dimension", 2))
    if d == 2:
        jac = np.array([[1.0, 0.0], [0.0, -1.0]])

        def evaluate(x, t=0.0):
            x = np.asarray(x, dtype=float)
            out = x.copy()
            out[..., 1] = -out[..., 1]
            return out

        def jacobian(x, t=0.0):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(jac, x.shape[:-1] + (2, 2)).copy()

        div_free = True
    elif d == 1:
        # 1D reduction v(x) = x; not divergence free on its own
        def evaluate(x, t=0.0):
            return np.asarray(x, dtype=float).copy()

        def jacobian(x, t=0.0):
            x = np.asarray(x, dtype=float)
            return np.ones(x.shape + (1,))

        div_free = False
    else:
        raise FieldParameterError(f"strain dimension must be 1 or 2, got {d}")
    return VelocityField(
        dimension=d, evaluate=evaluate, jacobian=jacobian, divergence_free=div_free,
        meta={"kind": "strain", "dimension": d},
    )


def _cellular_field(params: dict) -> VelocityField:
    amp = float(params.get("amplitude", 1.0))
    period = float(params.get("period", 1.0))
    if period <= 0:
        raise FieldParameterError("cellular period must be positive")
    k = 2.0 * math.pi / period

    # stream function (amp/k) sin(kx) sin(ky): v = (d_y psi, -d_x psi)
    def evaluate(x, t=0.0):
        x = np.asarray(x, dtype=float)
        sx, cx = np.sin(k * x[..., 0]), np.cos(k * x[..., 0])
        sy, cy = np.sin(k * x[..., 1]), np.cos(k * x[..., 1])
        out = np.empty_like(x)
        out[..., 0] = amp * sx * cy
        out[..., 1] = -amp * cx * sy
        return out

    def jacobian(x, t=0.0):
        x = np.asarray(x, dtype=float)
        sx, cx = np.sin(k * x[..., 0]), np.cos(k * x[..., 0])
        sy, cy = np.sin(k * x[..., 1]), np.cos(k * x[..., 1])
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = amp * k * cx * cy
        out[..., 0, 1] = -amp * k * sx * sy
        out[..., 1, 0] = amp * k * sx * sy
        out[..., 1, 1] = -amp * k * cx * cy
        return out

    return VelocityField(
        dimension=2, evaluate=evaluate, jacobian=jacobian, divergence_free=True,
        spatial_period=(period, period), max_mode=1,
        meta={"kind": "cellular", "amplitude": amp, "period": period},
    )


def _general_shear_field(params: dict) -> VelocityField:
    profile = params.get("profile")
    if not isinstance(profile, ShearProfile):
        try:
            profile = ShearProfile(
                cos_coeffs=tuple(params.get("cos_coeffs", (0.0,))),
                sin_coeffs=tuple(params.get("sin_coeffs", ())),
                period=float(params.get("period", 1.0)),
                t_const=float(params.get("t_const", 1.0)),
                t_cos=float(params.get("t_cos", 0.0)),
                t_sin=float(params.get("t_sin", 0.0)),
                t_period=params.get("t_period"),
            )
        except TypeError as exc:
            raise FieldParameterError(f"malformed shear coefficients: {exc}") from None

    def evaluate(x, t=0.0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., 0] = profile(x[..., 1], t)
        return out

    def jacobian(x, t=0.0):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 1] = profile.profile_deriv(x[..., 1]) * profile.modulation(t)
        return out

    return VelocityField(
        dimension=2, evaluate=evaluate, jacobian=jacobian, divergence_free=True,
        spatial_period=(profile.period, profile.period),
        temporal_period=profile.t_period, max_mode=profile.max_mode,
        meta={"kind": "general_shear", "profile": profile},
    )


_CATALOG = {
    "constant": lambda p: _constant_field(p),
    "linear_shear": lambda p: _linear_shear_field(),
    "strain": lambda p: _strain_field(p),
    "cellular": lambda p: _cellular_field(p),
    "general_shear": lambda p: _general_shear_field(p),
}


def make_field(entry, **params) -> VelocityField:
    """Construct a catalog velocity field.

    Accepts either a FieldCatalogEntry or a catalog name with the
    entry's parameters as keyword arguments.
    """
    if isinstance(entry, str):
        entry = FieldCatalogEntry(name=entry, parameters=params)
    elif params:
        raise FieldParameterError("pass parameters inside the entry or as kwargs, not both")
    try:
        builder = _CATALOG[entry.name]
    except KeyError:
        raise FieldParameterError(
            f"unknown field {entry.name!r}; catalog: {sorted(_CATALOG)}"
        ) from None
    return builder(entry.parameters)


def lift_npoint(field2d: VelocityField, n_points: int) -> VelocityField:
    """Replicate a 2D field into N independent coordinate pairs.

    The lifted field on R^(2N) moves block j = (x_j, y_j) by the base
    field evaluated at that block only; the Jacobian is block diagonal.
    This is the flow under which products T(x_1)...T(x_N) are transported.
    """
    if field2d.dimension != 2:
        raise FieldParameterError("lift_npoint requires a 2D base field")
    if n_points < 1:
        raise FieldParameterError(f"n_points must be >= 1, got {n_points}")
    if n_points == 1:
        return field2d
    n = n_points

    def evaluate(x, t=0.0):
        x = np.asarray(x, dtype=float)
        blocks = x.reshape(x.shape[:-1] + (n, 2))
        return field2d.evaluate(blocks, t).reshape(x.shape)

    def jacobian(x, t=0.0):
        x = np.asarray(x, dtype=float)
        blocks = x.reshape(x.shape[:-1] + (n, 2))
        jb = field2d.jacobian(blocks, t)  # (..., n, 2, 2)
        out = np.zeros(x.shape[:-1] + (2 * n, 2 * n))
        for j in range(n):
            out[..., 2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = jb[..., j, :, :]
        return out

    period = field2d.spatial_period * n if field2d.spatial_period else None
    return VelocityField(
        dimension=2 * n, evaluate=evaluate, jacobian=jacobian,
        divergence_free=field2d.divergence_free, spatial_period=period,
        temporal_period=field2d.temporal_period, max_mode=field2d.max_mode,
        meta={"kind": "lifted", "n_points": n, "base": field2d.meta},
    )


def advection_drift_correction(field: VelocityField, g: float, x, t: float = 0.0) -> np.ndarray:
    """The product g^2 * jacobian(x,t) @ evaluate(x,t), i.e. g^2 (v.grad)v.

    Note on usage: converting the Stratonovich advection -g v dB to Ito
    form adds the drift (1/2) g^2 (v.grad)v, i.e. HALF this vector; that
    half is what makes the particle generator match
    kappa Lap + (g^2/2)(v.grad)^2.  Integrators consuming this quantity
    apply the 1/2 themselves (and the exact-flow splitting integrator
    absorbs the correction entirely).
    """
    x = np.asarray(x, dtype=float)
    v = field.evaluate(x, t)
    jac = field.jacobian(x, t)
    return g * g * np.einsum("...ij,...j->...i", jac, v)
