"""Closure solvers: exact anchors, cross-checks, and structural properties."""

import math

import numpy as np
import pytest

from scalar_closure import closure as cl
from scalar_closure.fields import ShearProfile, make_field
from scalar_closure.noise import BrownianPath, PathGrid, brownian_path

# frozen independent anchors (30-digit evaluation of the closed form)
STRAIN_X0_T1 = 0.28209479177387814  # 1/(2 sqrt(pi))
STRAIN_X1_T1 = 0.22711259159104971  # exp(-z^2/4)/(2 sqrt(pi)), z = sqrt(2) asinh(1/sqrt 2)
HEAT_X1_T1 = 0.21969564473386122    # exp(-1/4)/(2 sqrt(pi))


def strain_1d():
    return make_field("strain", dimension=1)


def graded_grid(points=301, extent=9.0, hermite_order=None):
    return cl.GridSpec(extents=((-extent, extent),), points=(points,),
                       boundary="truncated-decay", grading=("sinh", math.sqrt(2.0)),
                       hermite_order=hermite_order)


# ---------------------------------------------------------------------------
# strain closed form


def test_strain_exact_anchors():
    assert cl.strain_exact(0.0, 1.0, 1.0, 1.0) == pytest.approx(STRAIN_X0_T1, abs=1e-12)
    assert cl.strain_exact(1.0, 1.0, 1.0, 1.0) == pytest.approx(STRAIN_X1_T1, abs=1e-12)
    z = math.sqrt(2.0) * math.asinh(1.0 / math.sqrt(2.0))
    assert z == pytest.approx(0.931, abs=5e-4)


def test_strain_exact_heat_limit():
    assert cl.strain_exact(1.0, 1.0, 1.0, 0.0) == pytest.approx(HEAT_X1_T1, abs=1e-12)
    # small-g continuity across the series branch
    lo = cl.strain_exact(1.0, 1.0, 1.0, 1e-9)
    hi = cl.strain_exact(1.0, 1.0, 1.0, 1e-7)
    assert lo == pytest.approx(HEAT_X1_T1, abs=1e-12)
    assert hi == pytest.approx(HEAT_X1_T1, abs=1e-10)


def test_strain_exact_parity_and_positivity():
    x = np.linspace(-20.0, 20.0, 4001)
    vals = cl.strain_exact(x, 0.7, 1.3, 0.9)
    np.testing.assert_array_equal(vals, cl.strain_exact(-x, 0.7, 1.3, 0.9)[...])
    assert np.all(vals > 0.0)


def test_strain_exact_domain_errors():
    with pytest.raises(cl.ClosureSolverError):
        cl.strain_exact(0.0, 0.0, 1.0, 1.0)
    with pytest.raises(cl.ClosureSolverError):
        cl.strain_exact(0.0, 1.0, -1.0, 1.0)
    with pytest.raises(cl.ClosureSolverError):
        cl.strain_exact(0.0, 1.0, 1.0, -0.5)


def test_strain_solution_mass_bookkeeping():
    sol = cl.StrainSolution(kappa=1.0, g=1.0)
    # conserved integral in the transformed coordinate reaches 1 from below
    q = sol.conserved_mass(1.0, half_width=10.0 * math.sqrt(2.0))
    assert 1.0 - 1e-6 <= q <= 1.0
    # plain x-mass grows exactly like e^{g^2 t/2}
    for t in (0.5, 1.0):
        m = sol.x_mass(t, half_width=80.0)
        assert m == pytest.approx(math.exp(0.5 * t), rel=1e-3)


def test_strain_realization_zero_path_is_heat_kernel():
    grid = PathGrid(dt=0.01, n_steps=100)
    path = BrownianPath(grid=grid, values=np.zeros(101), seed=0)
    x = np.linspace(-3.0, 3.0, 13)
    got = cl.strain_realization(x, 1.0, 1.0, 1.0, 0.5, path)
    expected = np.exp(-((x - 0.5) ** 2) / 4.0) / math.sqrt(4.0 * math.pi)
    np.testing.assert_allclose(got, expected, rtol=1e-10)


def test_strain_realization_center_value_is_integral_power():
    grid = PathGrid(dt=0.01, n_steps=100)
    path = brownian_path(grid, seed=3)
    integ = np.trapezoid(np.exp(-2.0 * 0.8 * path.values), dx=0.01)
    got = cl.strain_realization(0.0, 1.0, 1.0, 0.8, 0.0, path)
    assert got == pytest.approx((4.0 * math.pi * integ) ** -0.5, rel=1e-12)


def test_strain_realization_requires_aligned_horizon():
    grid = PathGrid(dt=0.01, n_steps=10)
    path = brownian_path(grid, seed=1)
    with pytest.raises(cl.ClosureSolverError):
        cl.strain_realization(0.0, 0.5, 1.0, 1.0, 0.0, path)  # horizon too short
    with pytest.raises(cl.ClosureSolverError):
        cl.strain_realization(0.0, 0.0305, 1.0, 1.0, 0.0, path)  # off-grid t


def test_strain_realization_ensemble_matches_exact():
    # MC oracle for the closed form: 1e5 paths, agreement within 3 SE
    x = np.linspace(-2.0, 2.0, 9)
    mean, se = cl.strain_realization_ensemble(x, 1.0, 1.0, 1.0, 0.0,
                                              n_paths=100_000, seed=42, dt=2e-3)
    exact = cl.strain_exact(x, 1.0, 1.0, 1.0)
    # trapezoid-in-time bias is O(dt^2) and far below the MC band here
    assert np.all(np.abs(mean - exact) <= 3.0 * se + 1e-4)


# ---------------------------------------------------------------------------
# white closure: spectral periodic path


def test_periodic_single_mode_heat_decay():
    f = make_field("constant", value=(1.0, 0.0))
    gen = cl.ClosureGenerator(kappa=1.0, g=0.0, field=f, mode="white")
    grid = cl.GridSpec(extents=((0.0, 1.0), (0.0, 1.0)), points=(16, 16),
                       boundary="periodic")
    sol = cl.solve_white_closure(gen, {"kind": "fourier", "mode": (1, 0)}, grid, t=0.05)
    k2 = (2.0 * math.pi) ** 2
    expected = math.exp(-k2 * 0.05)
    assert sol.values[0, 0] == pytest.approx(expected, abs=1e-8)


def test_periodic_constant_field_enhanced_decay():
    # rigid translation noise only stretches diffusion along the drift axis
    f = make_field("constant", value=(1.0, 0.0))
    gen = cl.ClosureGenerator(kappa=0.3, g=0.7, field=f, mode="white")
    grid = cl.GridSpec(extents=((0.0, 1.0), (0.0, 1.0)), points=(16, 16),
                       boundary="periodic")
    sol = cl.solve_white_closure(gen, {"kind": "fourier", "mode": (1, 0)}, grid, t=0.05)
    k2 = (2.0 * math.pi) ** 2
    expected = math.exp(-(0.3 + 0.5 * 0.49) * k2 * 0.05)
    assert sol.values[0, 0] == pytest.approx(expected, abs=1e-10)


def test_periodic_operator_is_negative_semidefinite_and_conserves_mass():
    f = make_field("cellular", amplitude=1.2, period=1.0)
    gen = cl.ClosureGenerator(kappa=0.4, g=0.9, field=f, mode="white")
    grid = cl.GridSpec(extents=((0.0, 1.0), (0.0, 1.0)), points=(12, 12),
                       boundary="periodic")
    op, _ = cl._periodic_operator(gen, grid)
    eig = np.linalg.eigvals(op)
    assert eig.real.max() <= 1e-10
    np.testing.assert_allclose(op[0, :], 0.0, atol=1e-14)


def test_periodic_mass_conservation_in_time():
    f = make_field("cellular", amplitude=1.2, period=1.0)
    gen = cl.ClosureGenerator(kappa=0.4, g=0.9, field=f, mode="white")
    grid = cl.GridSpec(extents=((0.0, 1.0), (0.0, 1.0)), points=(12, 12),
                       boundary="periodic")
    ic = {"kind": "gaussian", "center": (0.5, 0.5), "width": (0.08, 0.08)}
    sol = cl.solve_white_closure(gen, ic, grid, t=0.2)
    v0 = cl.ic_values(ic, grid.axes())
    assert sol.values.mean() == pytest.approx(v0.mean(), rel=1e-12)


def test_periodic_semigroup():
    f = make_field("cellular", amplitude=1.2, period=1.0)
    gen = cl.ClosureGenerator(kappa=0.4, g=0.9, field=f, mode="white")
    grid = cl.GridSpec(extents=((0.0, 1.0), (0.0, 1.0)), points=(12, 12),
                       boundary="periodic")
    one = cl.solve_white_closure(gen, {"kind": "fourier", "mode": (1, 0)}, grid, t=0.30)
    half = cl.solve_white_closure(gen, {"kind": "fourier", "mode": (1, 0)}, grid, t=0.15)
    two = cl.solve_white_closure(gen, half.values, grid, t=0.15)
    np.testing.assert_allclose(two.values, one.values, atol=1e-8)


def test_periodic_requires_commensurate_box():
    f = make_field("cellular", amplitude=1.0, period=0.7)
    gen = cl.ClosureGenerator(kappa=1.0, g=0.5, field=f, mode="white")
    grid = cl.GridSpec(extents=((0.0, 1.0), (0.0, 1.0)), points=(12, 12),
                       boundary="periodic")
    with pytest.raises(cl.ClosureSolverError):
        cl.solve_white_closure(gen, {"kind": "fourier", "mode": (1, 0)}, grid, t=0.1)


# ---------------------------------------------------------------------------
# white closure: truncated paths


def test_truncated_1d_heat_matches_gaussian():
    f = strain_1d()
    gen = cl.ClosureGenerator(kappa=1.0, g=0.0, field=f, mode="white")
    grid = cl.GridSpec(extents=((-12.0, 12.0),), points=(601,), boundary="truncated-decay")
    t, w = 0.5, 0.5
    sol = cl.solve_white_closure(gen, {"kind": "gaussian", "center": 0.0, "width": w},
                                 grid, t, dt=1e-3)
    x = sol.axes[0]
    var = w * w + 2.0 * t
    exact = np.exp(-0.5 * x * x / var) / math.sqrt(2.0 * math.pi * var)
    assert np.max(np.abs(sol.values - exact)) < 1e-4


def test_strain_profile_meets_module_tolerance():
    # delta IC via width extrapolation plus grid Richardson
    prof = cl.strain_closure_profile(1.0, 1.0, 1.0)
    x = prof.axes[0]
    mask = np.abs(x) <= 5.0
    err = np.max(np.abs(prof.values[mask] - cl.strain_exact(x[mask], 1.0, 1.0, 1.0)))
    assert err < 1e-6


def test_truncated_semigroup_is_exact_in_arithmetic():
    f = strain_1d()
    gen = cl.ClosureGenerator(kappa=1.0, g=1.0, field=f, mode="white")
    grid = graded_grid()
    ic = {"kind": "gaussian", "center": 0.0, "width": 0.7}
    full = cl.solve_white_closure(gen, ic, grid, t=0.4, dt=1e-3)
    half = cl.solve_white_closure(gen, ic, grid, t=0.2, dt=1e-3)
    comp = cl.solve_white_closure(gen, half.values, grid, t=0.2, dt=1e-3)
    np.testing.assert_array_equal(comp.values, full.values)


def test_cn_self_convergence_under_halving():
    f = strain_1d()
    gen = cl.ClosureGenerator(kappa=1.0, g=1.0, field=f, mode="white")
    grid = graded_grid()
    ic = {"kind": "gaussian", "center": 0.0, "width": 0.7}
    a = cl.solve_white_closure(gen, ic, grid, t=0.4, dt=2.5e-4)
    b = cl.solve_white_closure(gen, ic, grid, t=0.4, dt=1.25e-4)
    assert np.max(np.abs(a.values - b.values)) < 1e-8


def test_boundary_decay_guard_raises():
    f = strain_1d()
    gen = cl.ClosureGenerator(kappa=1.0, g=1.0, field=f, mode="white")
    narrow = cl.GridSpec(extents=((-3.0, 3.0),), points=(101,), boundary="truncated-decay")
    with pytest.raises(cl.ClosureSolverError):
        cl.solve_white_closure(gen, {"kind": "gaussian", "center": 0.0, "width": 0.5},
                               narrow, t=0.5, dt=1e-3)


def test_adi_cross_checks_npoint_reduction():
    # same equation, two discretizations: direct 2D ADI vs spectral-in-x
    f = make_field("linear_shear")
    gen = cl.ClosureGenerator(kappa=0.5, g=0.8, field=f, mode="white")
    grid = cl.GridSpec(extents=((-12.0, 12.0), (-9.0, 9.0)), points=(241, 181),
                       boundary="truncated-decay")
    ic = {"kind": "gaussian", "center": (0.0, 0.0), "width": (0.8, 0.8)}
    adi = cl.solve_white_closure(gen, ic, grid, t=0.4, dt=1e-3)
    npt = cl.solve_shear_npoint(0.8, 0.5, 1, "linear", ic, grid, t=0.4, dt=1e-3)
    assert np.max(np.abs(adi.values - npt.values)) < 2e-4


def test_adi_rejects_non_shear_fields():
    f = make_field("strain")
    gen = cl.ClosureGenerator(kappa=0.5, g=0.8, field=f, mode="white")
    grid = cl.GridSpec(extents=((-8.0, 8.0), (-8.0, 8.0)), points=(65, 65),
                       boundary="truncated-decay")
    with pytest.raises(cl.ClosureSolverError):
        cl.solve_white_closure(gen, {"kind": "gaussian", "center": (0, 0), "width": (1, 1)},
                               grid, t=0.1)


# ---------------------------------------------------------------------------
# shear N-point solver


def test_npoint_constant_profile_decay():
    # constant shear is rigid translation noise: anisotropic heat kernel
    prof = ShearProfile(cos_coeffs=(1.0,))
    grid = cl.GridSpec(extents=((-12.0, 12.0), (-9.0, 9.0)), points=(241, 181),
                       boundary="truncated-decay")
    ic = {"kind": "gaussian", "center": (0.0, 0.0), "width": (0.8, 0.8)}
    sol = cl.solve_shear_npoint(0.7, 0.3, 1, prof, ic, grid, t=0.4, dt=1e-3)
    X, Y = np.meshgrid(*grid.axes(), indexing="ij")
    w2 = 0.64
    vx = w2 + 2.0 * (0.3 + 0.5 * 0.49) * 0.4
    vy = w2 + 2.0 * 0.3 * 0.4
    exact = np.exp(-X * X / (2 * vx) - Y * Y / (2 * vy)) / (2 * math.pi * math.sqrt(vx * vy))
    assert np.max(np.abs(sol.values - exact)) < 2e-4


def test_npoint_two_point_tensor_heat():
    # g = 0 decouples the pairs: 4D solution is the product of 1D kernels
    grid = cl.GridSpec(extents=((-8.0, 8.0),) * 2 + ((-8.0, 8.0),) * 2,
                       points=(24, 24, 31, 31), boundary="truncated-decay")
    ic = {"kind": "gaussian", "center": (0, 0, 0, 0), "width": (0.9, 0.9, 0.9, 0.9)}
    sol = cl.solve_shear_npoint(0.0, 0.4, 2, "linear", ic, grid, t=0.2, dt=2e-3)
    ax = grid.axes()
    var = 0.81 + 2.0 * 0.4 * 0.2

    def gs(c):
        return np.exp(-c * c / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)

    ref = (gs(ax[0])[:, None, None, None] * gs(ax[1])[None, :, None, None]
           * gs(ax[2])[None, None, :, None] * gs(ax[3])[None, None, None, :])
    # coarse wiring check: discretization level, not oracle level
    assert np.max(np.abs(sol.values - ref)) < 0.02 * ref.max()


def test_npoint_memory_guard():
    grid = cl.GridSpec(extents=((-8.0, 8.0),) * 3 + ((-6.0, 6.0),) * 3,
                       points=(64, 64, 64, 48, 48, 48), boundary="truncated-decay")
    with pytest.raises(cl.ClosureSolverError, match="budget"):
        cl.solve_shear_npoint(0.0, 0.4, 3, "linear",
                              {"kind": "gaussian", "center": (0,) * 6, "width": (1,) * 6},
                              grid, t=0.1)


def test_npoint_rejects_bad_arguments():
    grid = cl.GridSpec(extents=((-8.0, 8.0), (-8.0, 8.0)), points=(16, 16),
                       boundary="truncated-decay")
    ic = {"kind": "gaussian", "center": (0, 0), "width": (1, 1)}
    with pytest.raises(cl.ClosureSolverError):
        cl.solve_shear_npoint(0.5, 1.0, 4, "linear", ic, grid, t=0.1)
    with pytest.raises(cl.ClosureSolverError):
        cl.solve_shear_npoint(0.5, 1.0, 2, "linear", ic, grid, t=0.1)  # wrong ndim
    with pytest.raises(cl.ClosureSolverError):
        cl.solve_shear_npoint(0.5, 1.0, 1, "quadratic", ic, grid, t=0.1)


# ---------------------------------------------------------------------------
# OU closure


def test_ou_zero_field_equals_heat_for_all_gamma():
    f0 = make_field("constant", value=(0.0,))
    grid = cl.GridSpec(extents=((-10.0, 10.0),), points=(201,),
                       boundary="truncated-decay", hermite_order=8)
    heat_grid = cl.GridSpec(extents=((-10.0, 10.0),), points=(201,),
                            boundary="truncated-decay")
    ic = {"kind": "gaussian", "center": 0.0, "width": 1.0}
    genw = cl.ClosureGenerator(kappa=1.0, g=0.0, field=f0, mode="white")
    heat = cl.solve_white_closure(genw, ic, heat_grid, t=0.3, dt=1e-3)
    for gamma in (10.0, 1000.0):
        gen = cl.ClosureGenerator(kappa=1.0, g=0.9, field=f0, mode="ou", gamma=gamma)
        ou = cl.solve_ou_closure(gen, ic, grid, t=0.3, dt=1e-3)
        np.testing.assert_array_equal(ou.coeffs[0], heat.values)
        assert np.max(np.abs(ou.coeffs[1:])) == 0.0


def test_ou_hermite_self_convergence():
    f = strain_1d()
    ic = {"kind": "gaussian", "center": 0.0, "width": 0.7}
    gen = cl.ClosureGenerator(kappa=1.0, g=0.7, field=f, mode="ou", gamma=50.0)
    a = cl.solve_ou_closure(gen, ic, graded_grid(241, hermite_order=16), t=0.3, dt=5e-4)
    b = cl.solve_ou_closure(gen, ic, graded_grid(241, hermite_order=20), t=0.3, dt=5e-4)
    assert np.max(np.abs(a.coeffs[0] - b.coeffs[0])) < 1e-8


def test_ou_truncation_guard_suggests_larger_order():
    f = strain_1d()
    ic = {"kind": "gaussian", "center": 0.0, "width": 0.7}
    # slow damping and strong coupling overload a tiny Hermite basis
    gen = cl.ClosureGenerator(kappa=1.0, g=2.0, field=f, mode="ou", gamma=4.0)
    with pytest.raises(cl.HermiteTruncationError) as err:
        cl.solve_ou_closure(gen, ic, graded_grid(241, hermite_order=4), t=0.3, dt=1e-3)
    assert err.value.suggested > 4


def test_ou_gap_ladder_slopes():
    gaps = [cl.ou_white_gap_shear(1.0, gamma) for gamma in (10.0, 100.0, 1000.0)]
    lg = np.log([r["gamma"] for r in gaps])
    slope_resolved = np.polyfit(lg, np.log([r["gap_resolved"] for r in gaps]), 1)[0]
    slope_avg = np.polyfit(lg, np.log([r["gap_averaged"] for r in gaps]), 1)[0]
    # z-resolved deviation carries the gamma^{-1/2} term
    assert slope_resolved == pytest.approx(-0.5, abs=0.1)
    # the z-average cancels the odd term and converges one order faster
    assert slope_avg == pytest.approx(-1.0, abs=0.15)


def test_ou_requires_order_and_mode():
    f = strain_1d()
    gen = cl.ClosureGenerator(kappa=1.0, g=0.5, field=f, mode="ou", gamma=10.0)
    with pytest.raises(cl.ClosureSolverError):
        cl.solve_ou_closure(gen, {"kind": "gaussian", "width": 1.0},
                            graded_grid(241), t=0.1)
    genw = cl.ClosureGenerator(kappa=1.0, g=0.5, field=f, mode="white")
    with pytest.raises(cl.ClosureSolverError):
        cl.solve_ou_closure(genw, {"kind": "gaussian", "width": 1.0},
                            graded_grid(241, hermite_order=8), t=0.1)
    with pytest.raises(cl.ClosureSolverError):
        cl.ClosureGenerator(kappa=1.0, g=0.5, field=f, mode="ou")  # missing gamma


# ---------------------------------------------------------------------------
# grids and ICs


def test_grid_spec_validation():
    with pytest.raises(cl.ClosureSolverError):
        cl.GridSpec(extents=((0.0, 1.0),), points=(4,))
    with pytest.raises(cl.ClosureSolverError):
        cl.GridSpec(extents=((0.0, 1.0),), points=(16, 16))
    with pytest.raises(cl.ClosureSolverError):
        cl.GridSpec(extents=((0.0, 1.0),), points=(16,), boundary="absorbing")
    with pytest.raises(cl.ClosureSolverError):
        cl.GridSpec(extents=((0.0, 1.0), (0.0, 1.0)), points=(16, 16),
                    grading=("sinh", 1.0))


def test_sinh_grading_concentrates_near_origin():
    grid = graded_grid(101, extent=5.0)
    x = grid.axes()[0]
    inner = np.diff(x)[49]
    outer = np.diff(x)[-1]
    assert inner < outer / 5.0
    assert x[0] == pytest.approx(-math.sqrt(2.0) * math.sinh(5.0 / math.sqrt(2.0)))


def test_ic_values_forms_agree():
    grid = cl.GridSpec(extents=((-4.0, 4.0), (-4.0, 4.0)), points=(33, 33),
                       boundary="truncated-decay")
    axes = grid.axes()
    d = cl.ic_values({"kind": "gaussian", "center": (0.5, -0.5), "width": (0.7, 1.1)}, axes)

    def f(x, y):
        return (np.exp(-0.5 * ((x - 0.5) / 0.7) ** 2) / math.sqrt(2 * math.pi * 0.49)
                * np.exp(-0.5 * ((y + 0.5) / 1.1) ** 2) / math.sqrt(2 * math.pi * 1.21))

    c = cl.ic_values(f, axes)
    np.testing.assert_allclose(d, c, rtol=1e-12)
    arr = cl.ic_values(c, axes)
    np.testing.assert_array_equal(arr, c)
    with pytest.raises(cl.ClosureSolverError):
        cl.ic_values(np.zeros((3, 3)), axes)
    with pytest.raises(cl.ClosureSolverError):
        cl.ic_values({"kind": "ring"}, axes)


def test_scalar_field_node_lookup():
    grid = cl.GridSpec(extents=((-2.0, 2.0),), points=(9,), boundary="truncated-decay")
    field = cl.ScalarField(axes=grid.axes(), values=np.arange(9.0))
    assert field.value_at(-1.0) == 2.0
    with pytest.raises(cl.ClosureSolverError):
        field.value_at(-1.01)
