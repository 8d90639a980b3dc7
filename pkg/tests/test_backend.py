"""Backend selection and compiled/pure-Python kernel agreement."""

import math

import numpy as np
import pytest

from scalar_closure import backend
from scalar_closure import _kernels_py as pyk

HAS_COMPILED = "compiled" in backend.available_backends()

needs_compiled = pytest.mark.skipif(not HAS_COMPILED, reason="no compiled extension")


def test_python_backend_always_available():
    assert "python" in backend.available_backends()
    assert backend.get_backend("python").BACKEND_NAME == "python"


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        backend.get_backend("fortran")


def test_env_override(monkeypatch):
    monkeypatch.setenv("SCALAR_CLOSURE_BACKEND", "python")
    assert backend.get_backend().BACKEND_NAME == "python"


@needs_compiled
def test_compiled_selected_by_default():
    assert backend.get_backend().BACKEND_NAME == "compiled"


def _transport_inputs(field_code, fp, d, seed=0, n=64, n_steps=12):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, size=(n, d))
    b = rng.normal(0.0, 0.05, size=n_steps)
    kicks = rng.normal(0.0, 0.03, size=(n, n_steps + 1, d))
    return x, b, kicks


@needs_compiled
@pytest.mark.parametrize("field_code,fp,d", [
    (pyk.FIELD_CONSTANT, np.array([1.0, -0.5]), 2),
    (pyk.FIELD_LINEAR_SHEAR, np.zeros(1), 2),
    (pyk.FIELD_STRAIN_2D, np.zeros(1), 2),
    (pyk.FIELD_STRAIN_1D, np.zeros(1), 1),
    (pyk.FIELD_CELLULAR, np.array([1.2, 2.0 * math.pi]), 2),
    (pyk.FIELD_FOURIER_SHEAR, np.array([2.0 * math.pi, 0.3, 1.0, 1.0, 0.8, 0.5]), 2),
])
def test_transport_chunk_agreement(field_code, fp, d):
    comp = backend.get_backend("compiled")
    x_py, b, kicks = _transport_inputs(field_code, fp, d)
    x_c = x_py.copy()
    pyk.transport_chunk(field_code, fp, x_py, b, kicks)
    comp.transport_chunk(field_code, fp, x_c, b, kicks)
    np.testing.assert_allclose(x_c, x_py, rtol=0.0, atol=1e-12)


@needs_compiled
def test_transport_snapshots_agreement():
    comp = backend.get_backend("compiled")
    rng = np.random.default_rng(5)
    n, n_steps = 40, 20
    x0 = rng.normal(size=(n, 2))
    b = rng.normal(0.0, 0.04, size=(n, n_steps))
    kicks = rng.normal(0.0, 0.02, size=(n, n_steps + 1, 2))
    snaps = np.array([5, 12, 20])
    fp = np.array([0.9, 2.0 * math.pi])
    out_py = pyk.transport_snapshots_chunk(pyk.FIELD_CELLULAR, fp, x0.copy(), b, kicks, snaps)
    out_c = comp.transport_snapshots_chunk(pyk.FIELD_CELLULAR, fp, x0.copy(), b, kicks, snaps)
    np.testing.assert_allclose(out_c, out_py, rtol=0.0, atol=1e-12)


@needs_compiled
def test_affine_ensemble_agreement():
    comp = backend.get_backend("compiled")
    rng = np.random.default_rng(6)
    R, P, n_steps, d, Q = 6, 50, 15, 2, 9
    b = rng.normal(0.0, 0.06, size=(R, n_steps))
    kicks = rng.normal(0.0, 0.03, size=(R, P, n_steps + 1, d))
    probes = rng.normal(0.0, 1.0, size=(Q, d))
    for code in (pyk.FIELD_LINEAR_SHEAR, pyk.FIELD_STRAIN_2D, pyk.FIELD_CONSTANT):
        fp = np.array([0.4, -0.2]) if code == pyk.FIELD_CONSTANT else np.zeros(1)
        out_py = pyk.affine_ensemble_chunk(code, fp, b, kicks, probes, np.zeros(d), np.full(d, 0.5))
        out_c = comp.affine_ensemble_chunk(code, fp, b, kicks, probes, np.zeros(d), np.full(d, 0.5))
        np.testing.assert_allclose(out_c, out_py, rtol=1e-12, atol=1e-14)


@needs_compiled
def test_gbm_chunk_agreement():
    comp = backend.get_backend("compiled")
    rng = np.random.default_rng(7)
    n_paths, n_steps = 200, 150
    dts = np.full(n_steps, 2e-3)
    incr = rng.normal(0.0, math.sqrt(2e-3), size=(n_paths, n_steps))
    snaps = np.array([50, 100, 150])
    a_py, b_py = pyk.gbm_chunk(incr, dts, -1.6, 0.1, snaps)
    a_c, b_c = comp.gbm_chunk(incr, dts, -1.6, 0.1, snaps)
    np.testing.assert_allclose(a_c, a_py, rtol=1e-12)
    np.testing.assert_allclose(b_c, b_py, rtol=0.0, atol=1e-12)


def test_transport_zero_noise_pure_diffusion():
    # with zero advection parameter the update is the sum of the kicks
    x = np.zeros((5, 2))
    kicks = np.random.default_rng(8).normal(size=(5, 4, 2))
    b = np.zeros(3)
    pyk.transport_chunk(pyk.FIELD_LINEAR_SHEAR, np.zeros(1), x, b, kicks)
    np.testing.assert_allclose(x, kicks.sum(axis=1), atol=1e-14)


def test_advect_exact_flows():
    # shear translates x by b*y; strain scales (e^b, e^-b); constant
    # translates by b*value
    x = np.array([[1.0, 2.0]])
    pyk.advect(pyk.FIELD_LINEAR_SHEAR, np.zeros(1), x, 0.5)
    np.testing.assert_allclose(x, [[2.0, 2.0]])
    x = np.array([[1.0, 2.0]])
    pyk.advect(pyk.FIELD_STRAIN_2D, np.zeros(1), x, 0.3)
    np.testing.assert_allclose(x, [[math.exp(0.3), 2.0 * math.exp(-0.3)]])
    x = np.array([[1.0, 2.0]])
    pyk.advect(pyk.FIELD_CONSTANT, np.array([2.0, -1.0]), x, 0.25)
    np.testing.assert_allclose(x, [[1.5, 1.75]])


def test_cellular_advect_is_volume_preserving_flow():
    # one RK4 step of a divergence-free field: Jacobian determinant of
    # the map stays 1 to the scheme's order for small steps
    fp = np.array([1.0, 2.0 * math.pi])
    h = 1e-3
    base = np.array([[0.3, 0.4]])
    grad = np.zeros((2, 2))
    for i in range(2):
        for s, col in ((h, 1.0), (-h, -1.0)):
            x = base.copy()
            x[0, i] += s
            pyk.advect(pyk.FIELD_CELLULAR, fp, x, 0.05)
            grad[:, i] += col * x[0] / (2.0 * h)
    det = np.linalg.det(grad)
    # dominated by the FD Jacobian estimate (third derivatives ~ (2 pi)^3)
    assert det == pytest.approx(1.0, abs=1e-4)
