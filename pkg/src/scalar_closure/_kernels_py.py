"""Numpy implementations of the hot kernels.

These are the reference implementations; ``scalar_closure._kernels`` is
a compiled mirror with identical call signatures and per-particle
arithmetic (selected at import by :mod:`scalar_closure.backend`).  All
kernels consume pre-generated, pre-scaled random increments so that both
backends see bit-identical inputs and the random stream layout lives in
one place (the drivers in :mod:`scalar_closure.feynman_kac` and
:mod:`scalar_closure.gbm_moments`).

Particle stepping uses a splitting scheme: diffusion kicks alternate
with an advection substep that integrates dx/dtau = v(x) over the random
pseudo-time increment b_k.  For the catalog fields the advection flow is
closed-form (shears translate, strain dilates), so the only splitting
error is the deterministic Strang commutator, giving weak second-order
accuracy for ensemble averages; the cellular flow uses one RK4 step,
whose flow error is O(b^5) = O(dt^{5/2}) per step.  The kick arrays
carry n_steps+1 slots: a half-variance kick before the first advection,
full-variance kicks between advections, and a half-variance kick at the
end (adjacent half kicks are pre-combined into the full slots).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

# field codes shared with the compiled kernel
FIELD_CONSTANT = 0
FIELD_LINEAR_SHEAR = 1
FIELD_STRAIN_2D = 2
FIELD_STRAIN_1D = 3
FIELD_CELLULAR = 4
FIELD_FOURIER_SHEAR = 5

AFFINE_CODES = (FIELD_CONSTANT, FIELD_LINEAR_SHEAR, FIELD_STRAIN_2D, FIELD_STRAIN_1D)


def _cellular_velocity(fp, x):
    amp, k = fp[0], fp[1]
    out = np.empty_like(x)
    sx, cx = np.sin(k * x[..., 0]), np.cos(k * x[..., 0])
    sy, cy = np.sin(k * x[..., 1]), np.cos(k * x[..., 1])
    out[..., 0] = amp * sx * cy
    out[..., 1] = -amp * cx * sy
    return out


def _fourier_shear_profile(fp, y):
    # fp = [k0, a0, n_cos, n_sin, a1..a_ncos, b1..b_nsin]
    k0 = fp[0]
    n_cos = int(fp[2])
    n_sin = int(fp[3])
    u = np.full_like(y, fp[1])
    for j in range(1, n_cos + 1):
        u += fp[3 + j] * np.cos(j * k0 * y)
    for j in range(1, n_sin + 1):
        u += fp[3 + n_cos + j] * np.sin(j * k0 * y)
    return u


def _scale(b, v):
    # multiply per-particle scalars (or a shared scalar) onto vectors
    if np.ndim(b) == 0:
        return b * v
    return np.asarray(b)[:, None] * v


def advect(field_code: int, fp: np.ndarray, x: np.ndarray, b) -> None:
    """In-place advection substep: flow of dx/dtau = v(x) for pseudo-time b.

    ``b`` is a scalar (shared noise) or an (n,) array (per-particle
    noise).  Exact for the affine and shear catalog entries; single RK4
    step for the cellular flow.
    """
    if field_code == FIELD_CONSTANT:
        d = x.shape[-1]
        if np.ndim(b) == 0:
            x += b * fp[:d]
        else:
            x += np.multiply.outer(np.asarray(b), fp[:d])
    elif field_code == FIELD_LINEAR_SHEAR:
        x[..., 0] += b * x[..., 1]
    elif field_code == FIELD_STRAIN_2D:
        e = np.exp(b)
        x[..., 0] *= e
        x[..., 1] /= e
    elif field_code == FIELD_STRAIN_1D:
        x[..., 0] *= np.exp(b)
    elif field_code == FIELD_FOURIER_SHEAR:
        x[..., 0] += b * _fourier_shear_profile(fp, x[..., 1])
    elif field_code == FIELD_CELLULAR:
        k1 = _cellular_velocity(fp, x)
        k2 = _cellular_velocity(fp, x + 0.5 * _scale(b, k1))
        k3 = _cellular_velocity(fp, x + 0.5 * _scale(b, k2))
        k4 = _cellular_velocity(fp, x + _scale(b, k3))
        x += _scale(b, (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0)
    else:
        raise ValueError(f"unknown field code {field_code}")


def transport_chunk(field_code: int, fp: np.ndarray, x: np.ndarray,
                    b: np.ndarray, kicks: np.ndarray) -> None:
    """Evolve particles x (n, d) in place through n_steps splitting steps.

    b: (n_steps,) shared advection increments (signed, amplitude-scaled);
    kicks: (n, n_steps+1, d) pre-scaled diffusion kicks (half/full/half).
    """
    n_steps = b.shape[0]
    x += kicks[:, 0, :]
    for k in range(n_steps):
        advect(field_code, fp, x, b[k])
        x += kicks[:, k + 1, :]


def transport_snapshots_chunk(field_code: int, fp: np.ndarray, x: np.ndarray,
                              b: np.ndarray, kicks: np.ndarray,
                              snap_idx: np.ndarray) -> np.ndarray:
    """Per-particle-noise variant recording positions at snapshot steps.

    b: (n, n_steps) per-particle advection increments.  Positions are
    recorded after the kick slot of each snapshot step; interior
    snapshots therefore carry one extra half-kick variance (a constant
    offset that cancels in displacement-rate differences).
    """
    n_steps = b.shape[1]
    out = np.empty((len(snap_idx), x.shape[0], x.shape[1]))
    snap_pos = {int(s): i for i, s in enumerate(snap_idx)}
    x += kicks[:, 0, :]
    for k in range(n_steps):
        advect(field_code, fp, x, b[:, k])
        x += kicks[:, k + 1, :]
        if (k + 1) in snap_pos:
            out[snap_pos[k + 1]] = x
    return out


def affine_ensemble_chunk(field_code: int, fp: np.ndarray, b: np.ndarray,
                          kicks: np.ndarray, probes: np.ndarray,
                          ic_center: np.ndarray, ic_width: np.ndarray) -> np.ndarray:
    """Per-realization probe estimates for affine advection flows.

    For affine fields the splitting update is an affine map per step, so
    one particle set serves every probe point: evolve the linear part M
    (realization-wise, from the shared increments b of shape (R, n_steps))
    and the particle offsets Z (from kicks (R, P, n_steps+1, d)), then
    average the Gaussian initial condition over particles at M x_q + Z.
    Returns estimates of shape (R, Q) for probes (Q, d).
    """
    if field_code not in AFFINE_CODES:
        raise ValueError(f"field code {field_code} is not affine")
    n_real, n_steps = b.shape
    d = probes.shape[1]

    z = kicks[:, :, 0, :].copy()
    m01 = np.zeros(n_real)      # off-diagonal of the shear map
    scale = np.ones(n_real)     # diagonal of the strain map
    btot = np.zeros(n_real)     # accumulated translation parameter
    for k in range(n_steps):
        bk = b[:, k]
        if field_code == FIELD_LINEAR_SHEAR:
            z[:, :, 0] += bk[:, None] * z[:, :, 1]
            m01 += bk
        elif field_code == FIELD_STRAIN_2D:
            e = np.exp(bk)
            z[:, :, 0] *= e[:, None]
            z[:, :, 1] /= e[:, None]
            scale *= e
        elif field_code == FIELD_STRAIN_1D:
            e = np.exp(bk)
            z[:, :, 0] *= e[:, None]
            scale *= e
        else:  # constant
            # translation commutes with the kicks; applied once via btot
            btot += bk
        z += kicks[:, :, k + 1, :]

    # images of the probe points under the realization's linear map
    n_probe = probes.shape[0]
    mx = np.empty((n_real, n_probe, d))
    if field_code == FIELD_LINEAR_SHEAR:
        mx[:, :, 0] = probes[None, :, 0] + m01[:, None] * probes[None, :, 1]
        mx[:, :, 1] = probes[None, :, 1]
    elif field_code == FIELD_STRAIN_2D:
        mx[:, :, 0] = scale[:, None] * probes[None, :, 0]
        mx[:, :, 1] = probes[None, :, 1] / scale[:, None]
    elif field_code == FIELD_STRAIN_1D:
        mx[:, :, 0] = scale[:, None] * probes[None, :, 0]
    else:  # constant
        mx = probes[None, :, :] + np.multiply.outer(btot, fp[:d])[:, None, :]

    norm = float(np.prod(1.0 / np.sqrt(2.0 * np.pi * ic_width**2)))
    est = np.empty((n_real, n_probe))
    for q in range(n_probe):
        dev = (mx[:, q, None, :] + z - ic_center) / ic_width  # (R, P, d)
        quad = np.einsum("rpd,rpd->rp", dev, dev)
        est[:, q] = norm * np.mean(np.exp(-0.5 * quad), axis=1)
    return est


def gbm_chunk(incr: np.ndarray, dts: np.ndarray, a: float, m: float,
              snap_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Running trapezoid integrals of exp(a B_s + m s) along Brownian paths.

    incr: (n_paths, n_steps) Brownian increments, dts: (n_steps,) step
    sizes (nonuniform allowed).  Returns (A, B): the integral and the
    Brownian value at each snapshot step index, shapes (n_snaps, n_paths).
    """
    n_paths, n_steps = incr.shape
    a_out = np.empty((len(snap_idx), n_paths))
    b_out = np.empty((len(snap_idx), n_paths))
    snap_pos = {int(s): i for i, s in enumerate(snap_idx)}
    bvals = np.zeros(n_paths)
    acc = np.zeros(n_paths)
    e_prev = np.ones(n_paths)  # integrand at s=0
    s = 0.0
    for k in range(n_steps):
        bvals += incr[:, k]
        s += dts[k]
        e_new = np.exp(a * bvals + m * s)
        acc += (0.5 * dts[k]) * (e_prev + e_new)
        e_prev = e_new
        if (k + 1) in snap_pos:
            i = snap_pos[k + 1]
            a_out[i] = acc
            b_out[i] = bvals
    return a_out, b_out
