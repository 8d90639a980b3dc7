"""Experiment drivers and reproducibility manifests for the CLI runner.

Each experiment composes the library modules into a deterministic
cross-check: it derives every random stream from the configured base
seed, writes CSV artifacts plus a ``manifest.yaml`` into the output
directory, and records one pass/fail row per tolerance gate.  Identical
(configuration, base seed) pairs reproduce identical artifact bytes; the
manifest stores a configuration hash and per-file checksums so
``report`` can audit a finished run without recomputing anything.

Check rows use a single convention: a check passes when
``|measured - expected| <= tolerance`` (``tolerance == 0`` demands exact
equality, used for identities that hold in floating-point arithmetic).
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import closure as cl
from . import feynman_kac as fk
from . import gbm_moments as gm
from . import homogenize as hg
from . import propagator as pg
from .fields import make_field
from .noise import stream_generator

__all__ = [
    "EXPERIMENTS",
    "CheckRow",
    "ExperimentConfig",
    "ExperimentError",
    "RunManifest",
    "default_params",
    "load_manifest",
    "render_report",
    "report",
    "run",
]

MANIFEST_NAME = "manifest.yaml"

EXPERIMENTS = (
    "strain",
    "mc-vs-closure",
    "ou-limit",
    "propagator-check",
    "homogenize",
    "gbm-moments",
    "intermittency",
)


class ExperimentError(ValueError):
    """Configuration or artifact-consistency problem (CLI exit code 2)."""


# ---------------------------------------------------------------------------
# configuration

# Every physical and budget parameter an experiment consumes, with its
# default value.  A configuration may override any subset; unknown keys
# are rejected so typos cannot silently fall back to defaults.
_DEFAULTS: dict = {
    "strain": {
        "t": 1.0,
        "kappa": 1.0,
        "g": 1.0,
        "x_window": 5.0,
        "eta_extent": 10.0,
        "points": 1501,
        "mc_paths": 100_000,
        "mc_dt": 1e-3,
        "mc_probe_span": 3.0,
        "mc_probe_count": 9,
    },
    "mc-vs-closure": {
        "n_noise": 10_000,
        "n_particles": 1000,
        "mc_dt": 4e-3,
        "horizon": 0.4,
        "shear_g": 1.0,
        "shear_kappa": 0.5,
        "shear_ic_width": 0.8,
        "shear_probe_y": 0.5,
        "strain_g": 0.8,
        "strain_kappa": 1.0,
        "strain_ic_width": 0.6,
    },
    "ou-limit": {
        "g": 1.0,
        "gammas": [10.0, 100.0, 1000.0],
    },
    "propagator-check": {
        "n_families": 10,
        "dim": 4,
        "max_order": 5,
        "t": 0.3,
        "g": 0.7,
    },
    "homogenize": {
        "pe_values": [0.5, 1.0, 2.0],
        "cellular_pe": 1.0,
        "n_modes": 32,
        "mc_noise": 8,
        "mc_particles": 2000,
        "mc_horizon": 2.0,
        "mc_dt": 1e-3,
    },
    "gbm-moments": {
        "times": [0.5, 1.0, 2.0, 5.0],
        "expansion_t": 2.0,
        "recurrence_order": 2.0,
        "asymptotic_t": 400.0,
        "mc_paths": 200_000,
    },
    "intermittency": {
        "g": 3.0,
        "t_min": 1.0,
        "t_max": 100.0,
        "n_times": 7,
        "n_paths": 1_000_000,
        "chunk_size": 20_000,
    },
}


def default_params(experiment: str) -> dict:
    """Return a copy of the full default parameter block for ``experiment``."""
    if experiment not in _DEFAULTS:
        raise ExperimentError(
            f"unknown experiment {experiment!r}; choose one of {', '.join(EXPERIMENTS)}")
    return dict(_DEFAULTS[experiment])


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved run request: experiment, parameters, seed, output dir."""

    experiment: str
    params: dict = field(default_factory=dict)
    base_seed: int = 0
    out_dir: str = ""

    def __post_init__(self):
        defaults = default_params(self.experiment)
        unknown = sorted(set(self.params) - set(defaults))
        if unknown:
            raise ExperimentError(
                f"unknown parameter(s) for {self.experiment!r}: {', '.join(unknown)}")
        if not isinstance(self.base_seed, int) or isinstance(self.base_seed, bool):
            raise ExperimentError("base_seed must be an integer")
        if self.base_seed < 0:
            raise ExperimentError("base_seed must be >= 0")
        for key, value in self.params.items():
            ref = defaults[key]
            if isinstance(ref, (list, tuple)):
                if not isinstance(value, (list, tuple)) or not value:
                    raise ExperimentError(f"parameter {key!r} must be a non-empty list")
                if any(not isinstance(v, (int, float)) or isinstance(v, bool)
                       for v in value):
                    raise ExperimentError(f"parameter {key!r} must hold numbers")
            elif not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ExperimentError(f"parameter {key!r} must be a number")
        object.__setattr__(self, "out_dir",
                           str(self.out_dir) if self.out_dir else f"runs/{self.experiment}")

    def resolved_params(self) -> dict:
        merged = default_params(self.experiment)
        merged.update(self.params)
        return {k: (list(v) if isinstance(v, (list, tuple)) else v)
                for k, v in merged.items()}


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the resolved configuration (experiment, parameters, seed).

    The output directory is excluded so relocating a run does not change
    its identity.
    """
    payload = {
        "experiment": config.experiment,
        "base_seed": config.base_seed,
        "params": config.resolved_params(),
    }
    text = yaml.safe_dump(payload, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class CheckRow:
    """One tolerance gate: passes when |measured - expected| <= tolerance."""

    name: str
    measured: float
    expected: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.measured - self.expected) <= self.tolerance


@dataclass(frozen=True)
class RunManifest:
    """Audit record of one finished experiment run."""

    experiment: str
    base_seed: int
    config_hash: str
    artifact_version: str
    wall_time_s: float
    resolved_params: dict
    outputs: dict
    checks: tuple

    @property
    def all_passed(self) -> bool:
        return all(row.passed for row in self.checks)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "base_seed": self.base_seed,
            "config_hash": self.config_hash,
            "artifact_version": self.artifact_version,
            "wall_time_s": float(self.wall_time_s),
            "resolved_params": dict(self.resolved_params),
            "outputs": dict(self.outputs),
            "checks": [
                {
                    "name": row.name,
                    "measured": float(row.measured),
                    "expected": float(row.expected),
                    "tolerance": float(row.tolerance),
                    "passed": bool(row.passed),
                }
                for row in self.checks
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        required = {"experiment", "base_seed", "config_hash", "artifact_version",
                    "wall_time_s", "resolved_params", "outputs", "checks"}
        if not isinstance(data, dict) or not required.issubset(data):
            missing = sorted(required - set(data)) if isinstance(data, dict) else []
            raise ExperimentError(
                "manifest is malformed" + (f": missing {', '.join(missing)}" if missing else ""))
        checks = tuple(
            CheckRow(name=row["name"], measured=float(row["measured"]),
                     expected=float(row["expected"]), tolerance=float(row["tolerance"]))
            for row in data["checks"])
        return cls(experiment=data["experiment"], base_seed=int(data["base_seed"]),
                   config_hash=data["config_hash"],
                   artifact_version=data["artifact_version"],
                   wall_time_s=float(data["wall_time_s"]),
                   resolved_params=dict(data["resolved_params"]),
                   outputs=dict(data["outputs"]), checks=checks)


# ---------------------------------------------------------------------------
# CSV artifacts

def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _csv_bytes(header, rows) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ExperimentError("CSV row width does not match its header")
        lines.append(",".join(_format_cell(v) for v in row))
    return ("\n".join(lines) + "\n").encode()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# experiment drivers
#
# Each driver maps (params, base_seed) to (tables, checks) where tables
# is {filename: (header, rows)}.  Drivers must be deterministic: all
# randomness flows through stream_generator/base_seed-derived integer
# seeds, never through global RNG state.

def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ExperimentError(message)


def _require_positive(p: dict, *keys: str) -> None:
    for key in keys:
        if not p[key] > 0:
            raise ExperimentError(f"parameter {key!r} must be positive")


def _run_strain(p: dict, base_seed: int):
    _require_positive(p, "t", "kappa", "g", "x_window", "eta_extent",
                      "mc_dt", "mc_probe_span")
    _require(int(p["points"]) >= 9, "parameter 'points' must be >= 9")
    _require(int(p["mc_paths"]) >= 2, "parameter 'mc_paths' must be >= 2")
    _require(int(p["mc_probe_count"]) >= 2,
             "parameter 'mc_probe_count' must be >= 2")
    t, kappa, g = p["t"], p["kappa"], p["g"]
    prof = cl.strain_closure_profile(kappa, g, t, eta_extent=p["eta_extent"],
                                     points=int(p["points"]))
    x = prof.axes[0]
    exact = cl.strain_exact(x, t, kappa, g)
    err = np.abs(prof.values - exact)
    window = np.abs(x) <= p["x_window"]
    linf = float(err[window].max())

    center = float(prof.values[len(x) // 2])
    anchor_center = 1.0 / (2.0 * math.sqrt(math.pi))
    # x = 1 is not a grid node on the graded axis; linear interpolation
    # contributes O(h^2) ~ 1e-6 here, well inside the anchor tolerance
    at_unit = float(np.interp(1.0, x, prof.values))
    anchor_unit = 0.22711259159104971

    probe = np.linspace(-p["mc_probe_span"], p["mc_probe_span"],
                        int(p["mc_probe_count"]))
    mc_mean, mc_err = cl.strain_realization_ensemble(
        probe, t, kappa, g, 0.0, int(p["mc_paths"]), base_seed + 11,
        dt=p["mc_dt"])
    mc_exact = cl.strain_exact(probe, t, kappa, g)
    mc_z = np.abs(mc_mean - mc_exact) / mc_err

    tables = {
        "strain_profile.csv": (
            ("x", "closure", "exact", "abs_error"),
            [(float(xi), float(vi), float(ei), float(ai))
             for xi, vi, ei, ai in zip(x, prof.values, exact, err)],
        ),
        "strain_mc.csv": (
            ("x", "mc_mean", "mc_stderr", "exact", "z_score"),
            [(float(a), float(b), float(c), float(d), float(e))
             for a, b, c, d, e in zip(probe, mc_mean, mc_err, mc_exact, mc_z)],
        ),
    }
    checks = (
        CheckRow("strain-closure-linf", linf, 0.0, 1e-5),
        CheckRow("strain-anchor-center", center, anchor_center, 1e-5),
        CheckRow("strain-anchor-unit", at_unit, anchor_unit, 1e-5),
        CheckRow("strain-mc-max-z", float(mc_z.max()), 0.0, 4.0),
    )
    return tables, checks


def _shear_reference(p: dict, xs: np.ndarray):
    ic = {"kind": "gaussian", "center": (0.0, 0.0),
          "width": (p["shear_ic_width"], p["shear_ic_width"])}
    grid = cl.GridSpec(extents=((-12.0, 12.0), (-9.0, 9.0)), points=(481, 361))
    sol = cl.solve_shear_npoint(p["shear_g"], p["shear_kappa"], 1, "linear", ic,
                                grid, p["horizon"], dt=5e-4)
    y = p["shear_probe_y"]
    return ic, np.array([sol.value_at((float(xi), y)) for xi in xs])


def _strain_reference(p: dict):
    ic = {"kind": "gaussian", "center": 0.0, "width": p["strain_ic_width"]}
    f1 = make_field("strain", dimension=1)
    gen = cl.ClosureGenerator(kappa=p["strain_kappa"], g=p["strain_g"], field=f1,
                              mode="white")
    a = math.sqrt(2.0 * p["strain_kappa"]) / p["strain_g"]
    grid = cl.GridSpec(extents=((-9.0, 9.0),), points=(1201,),
                       boundary="truncated-decay", grading=("sinh", a))
    sol = cl.solve_white_closure(gen, ic, grid, p["horizon"], dt=5e-4)
    axis = sol.axes[0]
    idx = len(axis) // 2 + 8 * np.arange(-16, 17)
    probe = axis[idx]
    return ic, f1, probe, np.array([sol.value_at((float(xi),)) for xi in probe])


def _run_mc_vs_closure(p: dict, base_seed: int):
    _require_positive(p, "mc_dt", "horizon", "shear_g", "shear_kappa",
                      "shear_ic_width", "strain_g", "strain_kappa",
                      "strain_ic_width")
    _require(int(p["n_noise"]) >= 2, "parameter 'n_noise' must be >= 2")
    _require(int(p["n_particles"]) >= 1, "parameter 'n_particles' must be >= 1")
    spec = fk.EnsembleSpec(n_noise_realizations=int(p["n_noise"]),
                           n_particles_per_eval=int(p["n_particles"]),
                           base_seed=base_seed + 101, dt=p["mc_dt"])

    xs = np.linspace(-1.6, 1.6, 33)
    shear_ic, shear_ref = _shear_reference(p, xs)
    shear_prob = fk.TransportProblem(field=make_field("linear_shear"),
                                     noise=fk.WhiteNoise(g=p["shear_g"]),
                                     kappa=p["shear_kappa"],
                                     initial_condition=shear_ic,
                                     horizon=p["horizon"])
    pts = np.column_stack([xs, np.full_like(xs, p["shear_probe_y"])])
    shear_est = fk.ensemble_mean(shear_prob, spec, pts)
    shear_diff = np.abs(shear_est.mean - shear_ref)
    shear_pooled = float(np.sqrt(np.mean(shear_est.stderr ** 2)))

    strain_ic, strain_field, probe, strain_ref = _strain_reference(p)
    strain_prob = fk.TransportProblem(field=strain_field,
                                      noise=fk.WhiteNoise(g=p["strain_g"]),
                                      kappa=p["strain_kappa"],
                                      initial_condition=strain_ic,
                                      horizon=p["horizon"])
    strain_spec = fk.EnsembleSpec(n_noise_realizations=int(p["n_noise"]),
                                  n_particles_per_eval=int(p["n_particles"]),
                                  base_seed=base_seed + 202, dt=p["mc_dt"])
    strain_est = fk.ensemble_mean(strain_prob, strain_spec, probe)
    strain_diff = np.abs(strain_est.mean - strain_ref)
    strain_pooled = float(np.sqrt(np.mean(strain_est.stderr ** 2)))

    tables = {
        "mc_vs_closure_shear.csv": (
            ("x", "y", "mc_mean", "mc_stderr", "closure", "abs_diff"),
            [(float(a), p["shear_probe_y"], float(b), float(c), float(d), float(e))
             for a, b, c, d, e in zip(xs, shear_est.mean, shear_est.stderr,
                                      shear_ref, shear_diff)],
        ),
        "mc_vs_closure_strain.csv": (
            ("x", "mc_mean", "mc_stderr", "closure", "abs_diff"),
            [(float(a), float(b), float(c), float(d), float(e))
             for a, b, c, d, e in zip(probe, strain_est.mean, strain_est.stderr,
                                      strain_ref, strain_diff)],
        ),
    }
    checks = (
        CheckRow("mc-closure-shear-linf", float(shear_diff.max()), 0.0,
                 3.0 * shear_pooled),
        CheckRow("mc-closure-strain-linf", float(strain_diff.max()), 0.0,
                 3.0 * strain_pooled),
    )
    return tables, checks


def _run_ou_limit(p: dict, base_seed: int):
    del base_seed  # fully deterministic
    _require_positive(p, "g")
    gammas = [float(gv) for gv in p["gammas"]]
    _require(len(gammas) >= 2, "gammas must hold at least two rates")
    _require(all(gv > 0 for gv in gammas), "gammas must be positive")
    rows = []
    for gamma in gammas:
        gap = cl.ou_white_gap_shear(p["g"], gamma)
        rows.append((gamma, gap["gap_resolved"], gap["gap_averaged"],
                     gap["t"], gap["dt"], gap["hermite_order"]))
    lg = np.log10(gammas)
    slope_resolved = float(np.polyfit(lg, np.log10([r[1] for r in rows]), 1)[0])
    slope_averaged = float(np.polyfit(lg, np.log10([r[2] for r in rows]), 1)[0])
    tables = {
        "ou_gap.csv": (
            ("gamma", "gap_resolved", "gap_averaged", "t", "dt", "hermite_order"),
            rows,
        ),
        "ou_slopes.csv": (
            ("quantity", "slope"),
            [("gap_resolved", slope_resolved), ("gap_averaged", slope_averaged)],
        ),
    }
    checks = (
        CheckRow("ou-resolved-slope", slope_resolved, -0.5, 0.1),
        CheckRow("ou-averaged-slope", slope_averaged, -1.0, 0.15),
    )
    return tables, checks


def _random_operator_family(rng: np.random.Generator, dim: int, g: float,
                            t: float, piecewise: bool) -> pg.OperatorFamily:
    if piecewise:
        splits = (t / 3.0, 2.0 * t / 3.0)
        cs = [rng.normal(scale=0.6, size=(dim, dim)) for _ in range(3)]
        vs = [rng.normal(scale=0.6, size=(dim, dim)) for _ in range(3)]
        return pg.OperatorFamily(
            c_op=pg.MatrixPolynomial.piecewise_constant(splits, cs),
            v_op=pg.MatrixPolynomial.piecewise_constant(splits, vs), g=g)
    return pg.OperatorFamily(c_op=rng.normal(scale=0.6, size=(dim, dim)),
                             v_op=rng.normal(scale=0.6, size=(dim, dim)), g=g)


def _run_propagator_check(p: dict, base_seed: int):
    _require_positive(p, "t", "g")
    n_families, dim = int(p["n_families"]), int(p["dim"])
    max_order, t, g = int(p["max_order"]), p["t"], p["g"]
    _require(n_families >= 1, "parameter 'n_families' must be >= 1")
    _require(1 <= dim <= 64, "parameter 'dim' must lie in [1, 64]")
    _require(2 <= max_order <= 8, "parameter 'max_order' must lie in [2, 8]")
    family_rows = []
    identity_worst = 0.0
    for k in range(n_families):
        rng = stream_generator(base_seed, 500 + k)
        piecewise = bool(k % 2)
        fam = _random_operator_family(rng, dim, g, t, piecewise)
        series = pg.averaged_series(fam, t, max_order)
        raw = pg.raw_wick_expansion(fam, t, max_order)
        for order in range(1, max_order + 1):
            diff = float(np.abs(raw.by_expansion_order[order]
                                - series.by_expansion_order[order]).max())
            identity_worst = max(identity_worst, diff)
            family_rows.append((k, "piecewise" if piecewise else "constant",
                                order, diff))

    # every non-adjacent pairing must integrate to the exact zero matrix
    zero_rng = stream_generator(base_seed, 900)
    zero_fam = _random_operator_family(zero_rng, dim, g, t, piecewise=False)
    nonadjacent_worst = 0.0
    n_nonadjacent = 0
    for order in range(2, max_order + 1):
        for term in pg.enumerate_pairings(order):
            if term.is_adjacent or not term.pairs:
                continue
            val = pg.simplex_integrate_term(zero_fam, term, t)
            nonadjacent_worst = max(nonadjacent_worst, float(np.abs(val).max()))
            n_nonadjacent += 1

    # commuting constant family: the averaged series must reproduce
    # exp(t (C + (g^2/2) V^2)) to its own truncation estimate
    diag_rng = stream_generator(base_seed, 901)
    fam_c = pg.OperatorFamily(c_op=np.diag(diag_rng.normal(scale=0.5, size=dim)),
                              v_op=np.diag(diag_rng.normal(scale=0.5, size=dim)),
                              g=g)
    series_c = pg.averaged_series(fam_c, t, max_order + 1)
    expm_diff = float(np.abs(series_c.total - pg.averaged_generator_expm(fam_c, t)).max())

    tables = {
        "propagator_families.csv": (
            ("family", "kind", "order", "raw_vs_averaged_max_abs_diff"),
            family_rows,
        ),
        "propagator_structure.csv": (
            ("quantity", "value"),
            [("nonadjacent_terms_checked", n_nonadjacent),
             ("nonadjacent_max_abs", nonadjacent_worst),
             ("commuting_expm_max_abs_diff", expm_diff),
             ("commuting_truncation_estimate", float(series_c.truncation_estimate))],
        ),
    }
    checks = (
        CheckRow("cluster-raw-vs-averaged", identity_worst, 0.0, 1e-12),
        CheckRow("cluster-nonadjacent-zero", nonadjacent_worst, 0.0, 0.0),
        CheckRow("cluster-commuting-expm", expm_diff, 0.0,
                 float(series_c.truncation_estimate)),
    )
    return tables, checks


def _run_homogenize(p: dict, base_seed: int):
    _require_positive(p, "mc_horizon", "mc_dt")
    _require(p["cellular_pe"] >= 0, "parameter 'cellular_pe' must be >= 0")
    _require(int(p["n_modes"]) >= 2, "parameter 'n_modes' must be >= 2")
    _require(int(p["mc_noise"]) >= 2, "parameter 'mc_noise' must be >= 2")
    _require(int(p["mc_particles"]) >= 1, "parameter 'mc_particles' must be >= 1")
    pe_values = [float(v) for v in p["pe_values"]]
    _require(all(v >= 0 for v in pe_values), "pe_values must be non-negative")
    shear = make_field("general_shear", cos_coeffs=(0.0,), sin_coeffs=(1.0,))
    shear_rows = []
    shear_worst = 0.0
    for pe in pe_values:
        closed = 1.0 + 0.5 * pe * pe
        lam = hg.effective_tensor(hg.CellProblem(field=shear, pe=pe, n_modes=8))
        sc = hg.shear_shortcut(shear, pe)
        d_general = abs(float(lam.matrix[0, 0]) - closed)
        d_shortcut = abs(float(sc.matrix[0, 0]) - closed)
        shear_worst = max(shear_worst, d_general, d_shortcut)
        shear_rows.append((pe, float(lam.matrix[0, 0]), float(sc.matrix[0, 0]),
                           closed, d_general, d_shortcut))

    cellular = make_field("cellular")
    cell_pe = p["cellular_pe"]
    lam_cell = hg.effective_tensor(hg.CellProblem(field=cellular, pe=cell_pe,
                                                  n_modes=int(p["n_modes"])))
    spec = fk.EnsembleSpec(n_noise_realizations=int(p["mc_noise"]),
                           n_particles_per_eval=int(p["mc_particles"]),
                           base_seed=base_seed + 21, dt=p["mc_dt"])
    est = fk.effective_dispersion_mc(cellular, cell_pe, p["mc_horizon"], spec)
    rel = np.abs(np.diag(est.rate) - np.diag(lam_cell.matrix)) / np.diag(lam_cell.matrix)
    cell_rows = [(axis, float(np.diag(lam_cell.matrix)[i]),
                  float(np.diag(est.rate)[i]), float(np.diag(est.stderr)[i]),
                  float(rel[i]))
                 for i, axis in enumerate(("x", "y"))]

    lam2 = hg.npoint_tensor(cellular, cell_pe, 2, n_modes=int(p["n_modes"])).matrix
    swap = np.zeros((4, 4))
    for i, j in enumerate((1, 0)):
        swap[2 * i, 2 * j] = swap[2 * i + 1, 2 * j + 1] = 1.0
    perm_gap = 0.0 if np.array_equal(swap @ lam2 @ swap.T, lam2) else float(
        np.abs(swap @ lam2 @ swap.T - lam2).max())
    block_rows = [(i, j, float(lam2[i, j])) for i in range(4) for j in range(4)]

    tables = {
        "homogenize_shear.csv": (
            ("pe", "lambda_xx_general", "lambda_xx_shortcut", "closed_form",
             "abs_diff_general", "abs_diff_shortcut"),
            shear_rows,
        ),
        "homogenize_cellular.csv": (
            ("axis", "lambda_diag", "mc_rate", "mc_stderr", "rel_error"),
            cell_rows,
        ),
        "homogenize_two_point_blocks.csv": (
            ("row", "col", "value"),
            block_rows,
        ),
    }
    checks = (
        CheckRow("homogenize-shear-closed-form", shear_worst, 0.0, 1e-12),
        CheckRow("homogenize-cellular-mc", float(rel.max()), 0.0, 0.05),
        CheckRow("homogenize-permutation", perm_gap, 0.0, 0.0),
    )
    return tables, checks


def _run_gbm_moments(p: dict, base_seed: int):
    _require_positive(p, "expansion_t", "asymptotic_t")
    _require(p["recurrence_order"] > 1,
             "parameter 'recurrence_order' must exceed 1")
    _require(int(p["mc_paths"]) >= 2, "parameter 'mc_paths' must be >= 2")
    times = [float(t) for t in p["times"]]
    _require(all(t > 0 for t in times), "times must be positive")
    entries = []
    anchor_worst = 0.0
    half_worst = 0.0
    for t in times:
        q_half = gm.MomentQuery(r=-0.5, mu=0.0, t=t, method="dufresne")
        e_half = gm.evaluate_moment_query(q_half)
        anchor_worst = max(anchor_worst, abs(e_half.value * math.sqrt(t) - 1.0))
        q_inv = gm.MomentQuery(r=-1.0, mu=0.0, t=t, method="dufresne")
        e_inv = gm.evaluate_moment_query(q_inv)
        q_coth = gm.MomentQuery(r=-1.0, mu=0.0, t=t, method="coth")
        e_coth = gm.evaluate_moment_query(q_coth)
        # the doubled-integral functional at r = -1 must equal half the
        # coth-kernel value: E[(2A)^{-1}] = (1/2) E[A^{-1}]
        half_worst = max(half_worst,
                         abs(gm.dufresne_moment(-1.0, 0.0, t) - 0.5 * e_coth.value))
        entries.extend([e_half, e_inv, e_coth])

    t_exp = p["expansion_t"]
    coth_at = gm.inverse_moment_coth(t_exp)
    three_term = gm.inverse_moment_asymptotic(t_exp, n_terms=3)
    dropped = (math.pi ** 3.5) / (120.0 * math.sqrt(2.0) * t_exp ** 2.5)
    expansion_gap = abs(coth_at - three_term)

    entries.append(gm.evaluate_moment_query(
        gm.MomentQuery(r=-p["recurrence_order"], mu=0.0, t=1.0, method="recurrence")))
    entries.append(gm.evaluate_moment_query(
        gm.MomentQuery(r=-1.0, mu=0.0, t=p["asymptotic_t"], method="asymptotic")))
    mc_entry = gm.evaluate_moment_query(
        gm.MomentQuery(r=-1.0, mu=0.0, t=1.0, method="monte-carlo"),
        n_paths=int(p["mc_paths"]), seed=base_seed + 31)
    entries.append(mc_entry)
    mc_ref = gm.inverse_moment_coth(1.0)
    mc_gap = abs(mc_entry.value - mc_ref)

    table = gm.MomentTable(entries=tuple(entries))
    tables = {
        "gbm_moments.csv": (gm.MomentTable.COLUMNS, list(table.rows())),
        "gbm_expansion.csv": (
            ("t", "kernel_value", "three_term_expansion", "abs_gap",
             "dropped_term_magnitude"),
            [(t_exp, coth_at, three_term, expansion_gap, dropped)],
        ),
    }
    checks = (
        CheckRow("gbm-anchor-inverse-sqrt", anchor_worst, 0.0, 1e-8),
        CheckRow("gbm-expansion-window", expansion_gap, 0.0, dropped),
        CheckRow("gbm-half-identity", half_worst, 0.0, 1e-8),
        CheckRow("gbm-mc-band", mc_gap, 0.0, 3.5 * mc_entry.error),
    )
    return tables, checks


def _run_intermittency(p: dict, base_seed: int):
    _require_positive(p, "g")
    _require(int(p["n_paths"]) >= 2, "parameter 'n_paths' must be >= 2")
    _require(int(p["chunk_size"]) >= 1, "parameter 'chunk_size' must be >= 1")
    n_times = int(p["n_times"])
    _require(n_times >= 3, "n_times must be >= 3")
    _require(p["t_max"] > p["t_min"] > 0, "need t_max > t_min > 0")
    t_grid = np.logspace(math.log10(p["t_min"]), math.log10(p["t_max"]), n_times)
    stats = gm.simulate_x_stats(p["g"], t_grid, n_paths=int(p["n_paths"]),
                                seed=base_seed, chunk_size=int(p["chunk_size"]))
    ratio = stats.mean * np.sqrt(4.0 * math.pi * stats.times)
    ratio_err = stats.mean_stderr * np.sqrt(4.0 * math.pi * stats.times)
    skew = stats.skewness
    kurt = stats.kurtosis
    fit3 = gm.intermittency_exponent(3, p["g"], t_grid, stats=stats)
    fit4 = gm.intermittency_exponent(4, p["g"], t_grid, stats=stats)

    i1 = int(np.argmin(np.abs(stats.times - 1.0)))
    i10 = int(np.argmin(np.abs(stats.times - 10.0)))

    tables = {
        "intermittency_stats.csv": (
            ("t", "mean", "mean_stderr", "mean_ratio", "mean_ratio_stderr",
             "skewness", "kurtosis"),
            [(float(stats.times[i]), float(stats.mean[i]),
              float(stats.mean_stderr[i]), float(ratio[i]), float(ratio_err[i]),
              float(skew[i]), float(kurt[i]))
             for i in range(len(stats.times))],
        ),
        "intermittency_fits.csv": (
            ("order", "exponent", "expected_exponent", "r_squared"),
            [(3, fit3.exponent, fit3.expected, fit3.r_squared),
             (4, fit4.exponent, fit4.expected, fit4.r_squared)],
        ),
    }
    checks = (
        CheckRow("intermittency-mean-t1", float(ratio[i1]), 1.0, 0.01),
        CheckRow("intermittency-mean-t10", float(ratio[i10]), 1.0, 0.01),
        CheckRow("intermittency-skewness-exponent", fit3.exponent, 0.25, 0.05),
        CheckRow("intermittency-kurtosis-exponent", fit4.exponent, 0.50, 0.05),
    )
    return tables, checks


_RUNNERS = {
    "strain": _run_strain,
    "mc-vs-closure": _run_mc_vs_closure,
    "ou-limit": _run_ou_limit,
    "propagator-check": _run_propagator_check,
    "homogenize": _run_homogenize,
    "gbm-moments": _run_gbm_moments,
    "intermittency": _run_intermittency,
}


# ---------------------------------------------------------------------------
# run / report

def run(config: ExperimentConfig) -> RunManifest:
    """Execute one experiment and write its artifacts.

    All CSV files and ``manifest.yaml`` land in ``config.out_dir``.
    Nothing is written until the experiment finishes, so an invalid
    configuration or a solver failure leaves no partial outputs behind.
    Tolerance failures are recorded in the manifest (see
    ``RunManifest.all_passed``) rather than raised, so artifacts from a
    failing run remain available for inspection.
    """
    params = config.resolved_params()
    started = time.perf_counter()
    tables, checks = _RUNNERS[config.experiment](params, config.base_seed)
    wall = time.perf_counter() - started

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for name in sorted(tables):
        header, rows = tables[name]
        data = _csv_bytes(header, rows)
        (out_dir / name).write_bytes(data)
        outputs[name] = _sha256(data)

    manifest = RunManifest(experiment=config.experiment, base_seed=config.base_seed,
                           config_hash=config_hash(config),
                           artifact_version=__version__, wall_time_s=wall,
                           resolved_params=params, outputs=outputs, checks=checks)
    (out_dir / MANIFEST_NAME).write_text(
        yaml.safe_dump(manifest.to_dict(), sort_keys=True))
    return manifest


def load_manifest(out_dir) -> RunManifest:
    """Read ``manifest.yaml`` from a run directory and audit its artifacts.

    Raises ExperimentError if the manifest is missing or malformed, if a
    recorded output file is absent, or if any checksum disagrees with
    the bytes on disk.
    """
    path = Path(out_dir) / MANIFEST_NAME
    if not path.is_file():
        raise ExperimentError(f"no {MANIFEST_NAME} found in {out_dir}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ExperimentError(f"manifest is not valid YAML: {exc}") from exc
    manifest = RunManifest.from_dict(data)
    for name, digest in manifest.outputs.items():
        fpath = Path(out_dir) / name
        if not fpath.is_file():
            raise ExperimentError(f"recorded output {name!r} is missing")
        actual = _sha256(fpath.read_bytes())
        if actual != digest:
            raise ExperimentError(
                f"checksum mismatch for {name!r}: manifest {digest[:12]}, "
                f"file {actual[:12]}")
    return manifest


def render_report(manifest: RunManifest) -> str:
    """Deterministic text summary of a manifest: one line per check.

    The text depends only on the manifest contents (wall time excluded),
    so re-rendering the same manifest is byte-identical.
    """
    lines = [
        f"experiment: {manifest.experiment}",
        f"version: {manifest.artifact_version}",
        f"config: {manifest.config_hash[:12]}  seed: {manifest.base_seed}",
        f"artifacts: {', '.join(sorted(manifest.outputs))}",
        "",
    ]
    width = max((len(row.name) for row in manifest.checks), default=0)
    for row in manifest.checks:
        mark = "✓" if row.passed else "✗"
        lines.append(
            f"{mark} {row.name.ljust(width)}  measured={row.measured:.9g}"
            f"  expected={row.expected:.9g}  tol={row.tolerance:.3g}")
    lines.append("")
    lines.append("overall: PASS" if manifest.all_passed else "overall: FAIL")
    return "\n".join(lines) + "\n"


def report(out_dir) -> tuple[str, bool]:
    """Audit a finished run directory: returns (report text, all passed)."""
    manifest = load_manifest(out_dir)
    return render_report(manifest), manifest.all_passed
