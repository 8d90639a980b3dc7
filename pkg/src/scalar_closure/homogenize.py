"""Periodic cell problem and effective diffusivity tensors.

On long space/time scales the ensemble-averaged transport equation with
a periodic divergence-free velocity field homogenizes to constant-
coefficient diffusion with tensor

    Lambda = I + Pe^2 < v^T v + v^T (v . grad_y) theta >_{y, tau},

where the auxiliary fields theta_i solve the cell problem

    (d_tau - Lap_y - Pe^2 (v . grad_y)^2) theta_i = Pe^2 (v . grad_y) v_i

on the unit space(-time) torus with zero mean.  This module solves that
problem by a Fourier-Galerkin method and assembles the tensor three
ways: the general cell-solve path, the exact shortcut for shear-type
fields (where theta vanishes identically), and the 2N x 2N block
tensors governing products of N scalar values in two dimensions.

Numerical scheme
----------------
The solution is expanded in complex exponentials over the spatial modes
``[-M..M]^d`` and, for time-periodic fields, temporal modes
``[-Mt..Mt]``.  The advection operator ``D = v . grad_y`` is applied as
an exact spectral convolution onto an enlarged mode set (the field has
finite bandwidth), so the Galerkin matrix for ``-Pe^2 (v.grad)^2`` is
``+Pe^2 D^H D`` -- Hermitian positive semidefinite once the mean mode
is pinned to zero.  Steady problems are solved with conjugate
gradients, time-periodic ones (where ``d_tau`` adds a skew part) with
LGMRES, both to a relative tolerance of 1e-12.  After the solve the
full residual ``L theta - rhs`` is evaluated on the extended mode set
so spectral truncation error is measured, not hidden; it must fall
below 1e-10 relative or the solve is rejected with a suggestion to
raise the mode count.

Conventions
-----------
The tensor uses the Pe^2 prefactor throughout, matching the
nondimensionalized closed equation d_t Psi = (Lap + Pe^2 (v.grad)^2) Psi
and the 2N-point block formulas; a component-form statement of the same
tensor with a bare Pe prefactor appears in some write-ups and is
inconsistent with that scaling, so it is not offered as an option.
Period averages are spectral (exact for the truncated series).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, lgmres

from .fields import VelocityField

__all__ = [
    "HomogenizeError",
    "CellProblem",
    "CellSolution",
    "EffectiveTensor",
    "solve_cell_problem",
    "effective_tensor",
    "shear_shortcut",
    "npoint_tensor",
]

SOLVER_RTOL = 1e-12
RESIDUAL_LIMIT = 1e-10
_PROVENANCES = ("cell-solve", "shear-shortcut", "npoint-assembly")


class HomogenizeError(ValueError):
    """Raised for invalid cell problems or unconverged solves."""


# ---------------------------------------------------------------------------
# problem and result containers


@dataclass(frozen=True)
class CellProblem:
    """Cell problem for a periodic divergence-free field at Peclet Pe.

    ``n_modes`` is the spatial mode cutoff M per axis (modes -M..M);
    ``n_temporal_modes`` the temporal cutoff for time-periodic fields
    (ignored for steady fields, default 6 otherwise).
    """

    field: VelocityField
    pe: float
    n_modes: int = 32
    n_temporal_modes: int | None = None

    def __post_init__(self):
        f = self.field
        if f.spatial_period is None:
            raise HomogenizeError("cell problem requires a periodic field")
        if not f.divergence_free:
            raise HomogenizeError("cell problem requires a divergence-free field")
        if f.dimension not in (1, 2):
            raise HomogenizeError(
                f"base field dimension must be 1 or 2, got {f.dimension}")
        if not self.pe >= 0.0:
            raise HomogenizeError(f"Pe must be >= 0, got {self.pe}")
        bandwidth = int(f.max_mode or 0)
        if self.n_modes < max(bandwidth, 1):
            raise HomogenizeError(
                f"n_modes must be >= the field bandwidth {max(bandwidth, 1)}")
        if self.n_temporal_modes is not None and self.n_temporal_modes < 1:
            raise HomogenizeError("n_temporal_modes must be >= 1")

    @property
    def temporal_modes(self) -> int:
        if self.field.temporal_period is None:
            return 0
        return 6 if self.n_temporal_modes is None else self.n_temporal_modes


@dataclass(frozen=True)
class CellSolution:
    """Fourier coefficients of theta and of (v . grad) theta.

    ``theta_hat[i]`` has shape ``(2*Mt+1, 2*M+1[, 2*M+1])`` over
    temporal-then-spatial modes; ``vgrad_theta_hat[i]`` lives on the
    convolution-extended mode set.  The mean mode of each theta_i is
    exactly zero.  ``residuals`` are the relative full-operator
    residuals measured beyond the Galerkin truncation.
    """

    problem: CellProblem
    vhat: np.ndarray
    theta_hat: np.ndarray
    vgrad_theta_hat: np.ndarray
    residuals: tuple
    meta: dict = dc_field(default_factory=dict)


@dataclass(frozen=True)
class EffectiveTensor:
    """Effective diffusivity matrix with assembly provenance.

    Only the symmetric part is dynamically active in div(Lambda grad);
    the matrix is stored as assembled.
    """

    matrix: np.ndarray
    pe: float
    provenance: str
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", mat)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise HomogenizeError("effective tensor must be a square matrix")
        if not np.all(np.isfinite(mat)):
            raise HomogenizeError("effective tensor entries must be finite")
        if self.provenance not in _PROVENANCES:
            raise HomogenizeError(
                f"provenance must be one of {_PROVENANCES}, got {self.provenance!r}")


# ---------------------------------------------------------------------------
# spectral helpers (modes ordered -M..M per axis, temporal axis first)


def _sample_field_modes(field: VelocityField, bandwidth: int,
                        t_bandwidth: int) -> np.ndarray:
    """Exact Fourier coefficients of v by FFT on a collocation grid.

    Returns ``vhat`` of shape (d, 2*t_bandwidth+1, (2*bandwidth+1,)*d)
    in the e^{+i k.y} convention.  Exact because the catalog fields are
    trigonometric polynomials within the stated bandwidths.
    """
    d = field.dimension
    n_s = 2 * bandwidth + 1
    n_t = 2 * t_bandwidth + 1
    period = np.asarray(field.spatial_period, dtype=float)
    axes = [np.arange(n_s) * (period[a] / n_s) for a in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    t_period = field.temporal_period or 1.0
    samples = np.stack([field.evaluate(grid, l * t_period / n_t)
                        for l in range(n_t)], axis=0)  # (n_t, n_s.., d)
    comps = np.moveaxis(samples, -1, 0)  # (d, n_t, n_s..)
    fft_axes = tuple(range(1, 2 + d))
    vhat = np.fft.fftn(comps, axes=fft_axes) / (n_t * n_s**d)
    vhat = np.fft.fftshift(vhat, axes=fft_axes)
    # drop FFT roundoff so structural zeros (shear, constants) stay exact
    scale = np.abs(vhat).max()
    if scale > 0.0:
        vhat[np.abs(vhat) < 5e-15 * scale] = 0.0
    return vhat


def _detect_t_bandwidth(field: VelocityField, probe: int = 4) -> int:
    """Largest temporal mode with a nonzero coefficient (up to ``probe``)."""
    if field.temporal_period is None:
        return 0
    vhat = _sample_field_modes(field, int(field.max_mode or 0), probe)
    power = np.abs(vhat).max(axis=tuple(i for i in range(vhat.ndim) if i != 1))
    scale = power.max()
    live = np.nonzero(power > 1e-12 * max(scale, 1e-300))[0]
    return int(np.abs(live - probe).max()) if live.size else 0


def _spatial_kappa(m: int, period: np.ndarray) -> np.ndarray:
    """Wavevectors 2 pi k / P over modes [-m..m]^d, shape (n..,d)."""
    axes = [2.0 * math.pi * np.arange(-m, m + 1) / period[a]
            for a in range(len(period))]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _vgrad_apply(vhat: np.ndarray, theta: np.ndarray, kappa_src: np.ndarray,
                 bandwidth: int, t_bandwidth: int) -> np.ndarray:
    """Spectral (v . grad) theta onto the convolution-enlarged mode set."""
    d = vhat.shape[0]
    src_shape = theta.shape
    out_shape = (src_shape[0] + 2 * t_bandwidth,) + tuple(
        n + 2 * bandwidth for n in src_shape[1:])
    out = np.zeros(out_shape, dtype=complex)
    n_t = src_shape[0]
    for r in range(2 * t_bandwidth + 1):
        for q in np.ndindex(*(2 * bandwidth + 1,) * d):
            vvec = np.array([vhat[c][(r,) + q] for c in range(d)])
            if not np.any(vvec):
                continue
            coeff = 1j * (kappa_src @ vvec)  # (n_s..,)
            dst = (slice(r, r + n_t),) + tuple(
                slice(qa, qa + n) for qa, n in zip(q, src_shape[1:]))
            out[dst] += coeff[None] * theta
    return out


def _vgrad_adjoint(vhat: np.ndarray, u: np.ndarray, kappa_src: np.ndarray,
                   bandwidth: int, t_bandwidth: int,
                   src_shape: tuple) -> np.ndarray:
    """Adjoint of :func:`_vgrad_apply`, mapping back to the source modes."""
    d = vhat.shape[0]
    n_t = src_shape[0]
    comp_sums = np.zeros((d,) + src_shape, dtype=complex)
    for r in range(2 * t_bandwidth + 1):
        for q in np.ndindex(*(2 * bandwidth + 1,) * d):
            vvec = np.array([vhat[c][(r,) + q] for c in range(d)])
            if not np.any(vvec):
                continue
            src = (slice(r, r + n_t),) + tuple(
                slice(qa, qa + n) for qa, n in zip(q, src_shape[1:]))
            block = u[src]
            for c in range(d):
                if vvec[c]:
                    comp_sums[c] += np.conj(vvec[c]) * block
    out = np.zeros(src_shape, dtype=complex)
    for c in range(d):
        out += (-1j * kappa_src[..., c])[None] * comp_sums[c]
    return out


def _embed(small: np.ndarray, big_shape: tuple) -> np.ndarray:
    """Center a mode array inside a larger symmetric mode set."""
    out = np.zeros(big_shape, dtype=complex)
    slices = tuple(slice((b - s) // 2, (b - s) // 2 + s)
                   for s, b in zip(small.shape, big_shape))
    out[slices] = small
    return out


def _restrict(big: np.ndarray, small_shape: tuple) -> np.ndarray:
    slices = tuple(slice((b - s) // 2, (b - s) // 2 + s)
                   for s, b in zip(small_shape, big.shape))
    return big[slices]


# ---------------------------------------------------------------------------
# cell solve


def solve_cell_problem(cp: CellProblem) -> CellSolution:
    """Fourier-Galerkin solve of the cell problem, mean mode pinned.

    Raises :class:`HomogenizeError` when the Krylov iteration misses the
    1e-12 tolerance or the full-operator residual (measured on the
    convolution-extended mode set, so truncation error counts) exceeds
    1e-10 relative.
    """
    field = cp.field
    d = field.dimension
    period = np.asarray(field.spatial_period, dtype=float)
    bw = int(field.max_mode or 0)
    t_bw = _detect_t_bandwidth(field)
    m_sp = cp.n_modes
    m_t = cp.temporal_modes
    if t_bw > m_t and field.temporal_period is not None:
        raise HomogenizeError(
            f"n_temporal_modes must be >= the temporal bandwidth {t_bw}")

    vhat = _sample_field_modes(field, bw, t_bw)
    pe2 = cp.pe * cp.pe

    shape_s = (2 * m_t + 1,) + (2 * m_sp + 1,) * d
    mid = tuple(n // 2 for n in shape_s)
    kap_s = _spatial_kappa(m_sp, period)
    k2 = np.einsum("...i,...i->...", kap_s, kap_s)[None]  # (1, n_s..)
    t_per = field.temporal_period or 1.0
    omega = 2.0 * math.pi * np.arange(-m_t, m_t + 1) / t_per
    omega = omega.reshape((-1,) + (1,) * d)
    diag_lin = np.broadcast_to(k2 + 1j * omega, shape_s)

    kap_e1 = _spatial_kappa(m_sp + bw, period)
    n_flat = int(np.prod(shape_s))
    hermitian = m_t == 0

    def matvec(x):
        th = x.reshape(shape_s).copy()
        pinned = th[mid]
        th[mid] = 0.0
        w = _vgrad_apply(vhat, th, kap_s, bw, t_bw)
        out = diag_lin * th + pe2 * _vgrad_adjoint(vhat, w, kap_s, bw, t_bw,
                                                   shape_s)
        out[mid] = pinned
        return out.ravel()

    op = LinearOperator((n_flat, n_flat), matvec=matvec, dtype=complex)

    # Jacobi preconditioner: exact diagonal of the Galerkin matrix
    diag_dd = np.zeros(shape_s[1:])
    for r in range(2 * t_bw + 1):
        for q in np.ndindex(*(2 * bw + 1,) * d):
            vvec = np.array([vhat[c][(r,) + q] for c in range(d)])
            diag_dd += np.abs(kap_s @ vvec) ** 2
    prec = np.sqrt(k2**2 + omega**2) + pe2 * diag_dd[None]
    prec = np.broadcast_to(prec, shape_s).copy()
    prec[mid] = 1.0
    prec_flat = prec.ravel()
    precond = LinearOperator((n_flat, n_flat),
                             matvec=lambda x: x / prec_flat, dtype=complex)

    theta = np.zeros((d,) + shape_s, dtype=complex)
    shape_e1 = (2 * (m_t + t_bw) + 1,) + (2 * (m_sp + bw) + 1,) * d
    vgrad_theta = np.zeros((d,) + shape_e1, dtype=complex)
    residuals = []
    iterations = []
    for i in range(d):
        vhat_i = _embed(vhat[i], shape_s)
        rhs_e1 = pe2 * _vgrad_apply(vhat, vhat_i, kap_s, bw, t_bw)
        rhs_norm = np.linalg.norm(rhs_e1)
        mid_e1 = tuple(n // 2 for n in shape_e1)
        if abs(rhs_e1[mid_e1]) > 1e-10 * max(rhs_norm, 1e-300):
            raise HomogenizeError(
                "solvability violated: (v . grad) v has a nonzero mean")
        rhs = _restrict(rhs_e1, shape_s).copy()
        rhs[mid] = 0.0

        if np.linalg.norm(rhs) == 0.0:
            th = np.zeros(shape_s, dtype=complex)
            iterations.append(0)
        else:
            count = [0]

            def cb(_):
                count[0] += 1

            solver = cg if hermitian else lgmres
            sol_vec, info = solver(op, rhs.ravel(), rtol=SOLVER_RTOL, atol=0.0,
                                   maxiter=10_000, M=precond, callback=cb)
            if info != 0:
                raise HomogenizeError(
                    f"cell solve for component {i} did not reach rtol "
                    f"{SOLVER_RTOL:g} (info={info})")
            th = sol_vec.reshape(shape_s)
            th[mid] = 0.0
            iterations.append(count[0])

        w = _vgrad_apply(vhat, th, kap_s, bw, t_bw)
        # full residual on the twice-extended mode set: truncation shows up
        shape_e2 = (2 * (m_t + 2 * t_bw) + 1,) + (2 * (m_sp + 2 * bw) + 1,) * d
        lin = _embed(diag_lin * th, shape_e2)
        conv2 = _vgrad_apply(vhat, w, kap_e1, bw, t_bw)
        resid = lin - pe2 * conv2 - _embed(rhs_e1, shape_e2)
        rel = np.linalg.norm(resid) / max(rhs_norm, 1e-300)
        if rhs_norm == 0.0:
            rel = np.linalg.norm(resid)
        if rel > RESIDUAL_LIMIT:
            raise HomogenizeError(
                f"cell residual {rel:.3e} exceeds {RESIDUAL_LIMIT:g} for "
                f"component {i}; increase n_modes (try {2 * m_sp})")
        residuals.append(rel)
        theta[i] = th
        vgrad_theta[i] = w

    return CellSolution(
        problem=cp, vhat=vhat, theta_hat=theta, vgrad_theta_hat=vgrad_theta,
        residuals=tuple(residuals),
        meta={"solver": "cg" if hermitian else "lgmres",
              "iterations": tuple(iterations), "n_modes": m_sp,
              "n_temporal_modes": m_t, "field_bandwidth": bw,
              "temporal_bandwidth": t_bw})


def _cell_averages(sol: CellSolution):
    """Spectral period averages feeding the tensor assembly.

    Returns (means m_i = <v_i>, second moments s_ij = <v_i v_j>,
    couplings c_ij = <v_i (v.grad) theta_j>, drift means
    mw_j = <(v.grad) theta_j>), all real by the reality of the fields.
    """
    vhat = sol.vhat
    d = vhat.shape[0]
    w = sol.vgrad_theta_hat
    vhat_e1 = np.stack([_embed(vhat[i], w.shape[1:]) for i in range(d)])
    mid_v = tuple(n // 2 for n in vhat.shape[1:])
    mid_w = tuple(n // 2 for n in w.shape[1:])
    means = np.array([vhat[i][mid_v].real for i in range(d)])
    s = np.einsum("ik,jk->ij", np.conj(vhat).reshape(d, -1),
                  vhat.reshape(d, -1)).real
    c = np.einsum("ik,jk->ij", np.conj(vhat_e1).reshape(d, -1),
                  w.reshape(d, -1)).real
    mw = np.array([w[j][mid_w].real for j in range(d)])
    return means, s, c, mw


def effective_tensor(cp: CellProblem, sol: CellSolution | None = None) -> EffectiveTensor:
    """Assemble Lambda = I + Pe^2 <v^T v + v^T (v.grad) theta>.

    ``sol`` may be omitted, in which case the cell problem is solved
    here.  Period averages are spectral sums, exact for the truncated
    series.
    """
    if sol is None:
        sol = solve_cell_problem(cp)
    elif sol.problem is not cp and sol.problem != cp:
        raise HomogenizeError("cell solution was computed for a different problem")
    _, s, c, _ = _cell_averages(sol)
    d = cp.field.dimension
    mat = np.eye(d) + cp.pe**2 * (s + c)
    return EffectiveTensor(
        matrix=mat, pe=cp.pe, provenance="cell-solve",
        meta={"field": cp.field.meta.get("kind"), "n_modes": cp.n_modes,
              "residuals": sol.residuals})


# ---------------------------------------------------------------------------
# shortcut and N-point assembly


def shear_shortcut(field: VelocityField, pe: float) -> EffectiveTensor:
    """Exact tensor I + Pe^2 <v^T v> for shear-type fields.

    Shear fields (u(y, t), 0) make the cell right-hand side vanish, so
    theta = 0 and the tensor needs only the period average of v^T v;
    constant fields are the degenerate case u = const.  Averages come
    from the exact Fourier coefficients, not quadrature.
    """
    if not pe >= 0.0:
        raise HomogenizeError(f"Pe must be >= 0, got {pe}")
    kind = field.meta.get("kind")
    if kind == "constant":
        vec = np.asarray(field.meta["value"], dtype=float)
        outer = np.outer(vec, vec)
    elif kind == "general_shear":
        profile = field.meta["profile"]
        outer = np.zeros((2, 2))
        outer[0, 0] = profile.mean_u_sq()
    else:
        raise HomogenizeError(
            f"shear shortcut requires a shear-type field, got {kind!r}")
    mat = np.eye(len(outer)) + pe * pe * outer
    return EffectiveTensor(matrix=mat, pe=pe, provenance="shear-shortcut",
                           meta={"field": kind})


def npoint_tensor(field2d: VelocityField, pe: float, n_points: int,
                  n_modes: int = 32,
                  n_temporal_modes: int | None = None) -> EffectiveTensor:
    """2N x 2N block tensor for N-point products of a 2D field.

    The lifted flow moves each coordinate pair by the same 2D field, so
    the single-cell solutions theta_1, theta_2 determine every block:
    diagonal blocks carry the correlated averages
    I + Pe^2 (<v_i v_j> + <v_i (v.grad) theta_j>), off-diagonal blocks
    the products of one-point means
    Pe^2 (<v_i><v_j> + <v_i><(v.grad) theta_j>).  The assembly is
    invariant under simultaneous permutation of the coordinate pairs by
    construction.
    """
    if field2d.dimension != 2:
        raise HomogenizeError("npoint tensor requires a 2D base field")
    if n_points < 1:
        raise HomogenizeError(f"n_points must be >= 1, got {n_points}")
    cp = CellProblem(field=field2d, pe=pe, n_modes=n_modes,
                     n_temporal_modes=n_temporal_modes)
    sol = solve_cell_problem(cp)
    means, s, c, mw = _cell_averages(sol)
    pe2 = pe * pe
    diag_block = np.eye(2) + pe2 * (s + c)
    off_block = pe2 * (np.outer(means, means) + np.outer(means, mw))
    n = n_points
    mat = np.zeros((2 * n, 2 * n))
    for i in range(n):
        for j in range(n):
            mat[2 * i:2 * i + 2, 2 * j:2 * j + 2] = (
                diag_block if i == j else off_block)
    return EffectiveTensor(
        matrix=mat, pe=pe, provenance="npoint-assembly",
        meta={"field": field2d.meta.get("kind"), "n_points": n,
              "n_modes": n_modes, "residuals": sol.residuals})
