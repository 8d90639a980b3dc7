"""Experiment drivers: configuration, manifests, determinism, auditing."""

import math

import numpy as np
import pytest
import yaml

from scalar_closure import experiments as ex


# ---------------------------------------------------------------------------
# configuration validation


def test_unknown_experiment_rejected():
    with pytest.raises(ex.ExperimentError, match="unknown experiment"):
        ex.ExperimentConfig("warp-drive")
    with pytest.raises(ex.ExperimentError, match="unknown experiment"):
        ex.default_params("warp-drive")


def test_unknown_parameter_rejected():
    with pytest.raises(ex.ExperimentError, match="unknown parameter"):
        ex.ExperimentConfig("strain", params={"gg": 1.0})


def test_parameter_type_validation():
    with pytest.raises(ex.ExperimentError, match="must be a number"):
        ex.ExperimentConfig("strain", params={"t": "soon"})
    with pytest.raises(ex.ExperimentError, match="must be a number"):
        ex.ExperimentConfig("strain", params={"t": True})
    with pytest.raises(ex.ExperimentError, match="non-empty list"):
        ex.ExperimentConfig("ou-limit", params={"gammas": 7.0})
    with pytest.raises(ex.ExperimentError, match="non-empty list"):
        ex.ExperimentConfig("ou-limit", params={"gammas": []})
    with pytest.raises(ex.ExperimentError, match="hold numbers"):
        ex.ExperimentConfig("ou-limit", params={"gammas": [10.0, "big"]})


def test_base_seed_validation():
    with pytest.raises(ex.ExperimentError, match="integer"):
        ex.ExperimentConfig("strain", base_seed=1.5)
    with pytest.raises(ex.ExperimentError, match="integer"):
        ex.ExperimentConfig("strain", base_seed=True)
    with pytest.raises(ex.ExperimentError, match=">= 0"):
        ex.ExperimentConfig("strain", base_seed=-1)


def test_default_out_dir_and_param_merge():
    cfg = ex.ExperimentConfig("ou-limit")
    assert cfg.out_dir == "runs/ou-limit"
    named = ex.ExperimentConfig("ou-limit", out_dir="elsewhere")
    assert named.out_dir == "elsewhere"
    merged = ex.ExperimentConfig("ou-limit", params={"g": 0.5}).resolved_params()
    assert merged["g"] == 0.5
    assert merged["gammas"] == [10.0, 100.0, 1000.0]


def test_default_params_returns_a_copy():
    one = ex.default_params("strain")
    one["t"] = 99.0
    assert ex.default_params("strain")["t"] == 1.0


def test_driver_positivity_guards(tmp_path):
    bad = [
        ("strain", {"t": -2.0}),
        ("strain", {"mc_paths": 1}),
        ("mc-vs-closure", {"horizon": 0.0}),
        ("ou-limit", {"gammas": [10.0]}),
        ("ou-limit", {"gammas": [10.0, -3.0]}),
        ("propagator-check", {"dim": 65}),
        ("propagator-check", {"max_order": 1}),
        ("homogenize", {"cellular_pe": -1.0}),
        ("gbm-moments", {"recurrence_order": 0.5}),
        ("intermittency", {"t_min": 5.0, "t_max": 2.0}),
        ("intermittency", {"n_times": 2}),
    ]
    for name, params in bad:
        cfg = ex.ExperimentConfig(name, params=params, out_dir=str(tmp_path / "x"))
        with pytest.raises(ex.ExperimentError):
            ex.run(cfg)
    assert not (tmp_path / "x").exists()  # invalid configs write nothing


# ---------------------------------------------------------------------------
# hashing and manifest round-trips


def test_config_hash_ignores_out_dir_but_tracks_content():
    a = ex.config_hash(ex.ExperimentConfig("strain", out_dir="here"))
    b = ex.config_hash(ex.ExperimentConfig("strain", out_dir="there"))
    c = ex.config_hash(ex.ExperimentConfig("strain", params={"t": 2.0}))
    d = ex.config_hash(ex.ExperimentConfig("strain", base_seed=5))
    assert a == b
    assert len({a, c, d}) == 3


def test_check_row_pass_semantics():
    assert ex.CheckRow("x", 1.0, 1.0, 0.0).passed
    assert ex.CheckRow("x", 1.05, 1.0, 0.1).passed
    assert not ex.CheckRow("x", 1.2, 1.0, 0.1).passed
    assert not ex.CheckRow("x", float("nan"), 1.0, 0.1).passed


def test_manifest_round_trip_and_malformed_rejection():
    manifest = ex.RunManifest(
        experiment="strain", base_seed=3, config_hash="ab" * 32,
        artifact_version="0.1.0", wall_time_s=1.25,
        resolved_params={"t": 1.0}, outputs={"a.csv": "00" * 32},
        checks=(ex.CheckRow("gate", 0.5, 0.5, 0.1),))
    back = ex.RunManifest.from_dict(manifest.to_dict())
    assert back == manifest
    assert back.all_passed
    with pytest.raises(ex.ExperimentError, match="malformed"):
        ex.RunManifest.from_dict({"experiment": "strain"})
    with pytest.raises(ex.ExperimentError, match="malformed"):
        ex.RunManifest.from_dict("not a mapping")


def test_csv_formatting_rules():
    data = ex._csv_bytes(("a", "b", "c"), [(1, 0.1, "tag")])
    assert data == b"a,b,c\n1,0.10000000000000001,tag\n"
    with pytest.raises(ex.ExperimentError, match="width"):
        ex._csv_bytes(("a",), [(1, 2)])


# ---------------------------------------------------------------------------
# real runs at reduced budget (seeded, deterministic)


def test_strain_run_writes_consistent_artifacts(tmp_path):
    cfg = ex.ExperimentConfig(
        "strain",
        params={"points": 601, "mc_paths": 4000, "mc_probe_count": 5},
        base_seed=1, out_dir=str(tmp_path / "run"))
    manifest = ex.run(cfg)
    assert set(manifest.outputs) == {"strain_mc.csv", "strain_profile.csv"}
    assert (tmp_path / "run" / "manifest.yaml").is_file()
    audited = ex.load_manifest(tmp_path / "run")
    assert audited == manifest
    names = [row.name for row in manifest.checks]
    assert names == ["strain-closure-linf", "strain-anchor-center",
                     "strain-anchor-unit", "strain-mc-max-z"]
    # the closed-form gates do not depend on the Monte-Carlo budget
    assert manifest.checks[0].passed
    assert manifest.checks[1].passed
    assert manifest.checks[2].passed


def test_rerun_reproduces_artifact_bytes(tmp_path):
    params = {"points": 601, "mc_paths": 3000, "mc_probe_count": 5}
    runs = {}
    for tag in ("one", "two"):
        cfg = ex.ExperimentConfig("strain", params=params, base_seed=4,
                                  out_dir=str(tmp_path / tag))
        runs[tag] = ex.run(cfg)
    assert runs["one"].outputs == runs["two"].outputs
    assert runs["one"].config_hash == runs["two"].config_hash
    for name in runs["one"].outputs:
        assert (tmp_path / "one" / name).read_bytes() == \
            (tmp_path / "two" / name).read_bytes()


def test_seed_changes_mc_artifacts_only(tmp_path):
    params = {"points": 601, "mc_paths": 3000, "mc_probe_count": 5}
    a = ex.run(ex.ExperimentConfig("strain", params=params, base_seed=4,
                                   out_dir=str(tmp_path / "a")))
    b = ex.run(ex.ExperimentConfig("strain", params=params, base_seed=5,
                                   out_dir=str(tmp_path / "b")))
    assert a.outputs["strain_profile.csv"] == b.outputs["strain_profile.csv"]
    assert a.outputs["strain_mc.csv"] != b.outputs["strain_mc.csv"]


def test_ou_limit_run_recovers_both_slopes(tmp_path):
    manifest = ex.run(ex.ExperimentConfig("ou-limit",
                                          out_dir=str(tmp_path / "ou")))
    assert manifest.all_passed
    by_name = {row.name: row for row in manifest.checks}
    assert by_name["ou-resolved-slope"].measured == pytest.approx(-0.5, abs=0.1)
    assert by_name["ou-averaged-slope"].measured == pytest.approx(-1.0, abs=0.15)
    text = (tmp_path / "ou" / "ou_gap.csv").read_text().splitlines()
    assert text[0] == "gamma,gap_resolved,gap_averaged,t,dt,hermite_order"
    assert len(text) == 4


def test_propagator_run_all_identities(tmp_path):
    manifest = ex.run(ex.ExperimentConfig("propagator-check",
                                          out_dir=str(tmp_path / "pg")))
    assert manifest.all_passed
    by_name = {row.name: row for row in manifest.checks}
    assert by_name["cluster-raw-vs-averaged"].measured == 0.0
    assert by_name["cluster-nonadjacent-zero"].measured == 0.0
    assert by_name["cluster-nonadjacent-zero"].tolerance == 0.0
    rows = (tmp_path / "pg" / "propagator_families.csv").read_text().splitlines()
    assert len(rows) == 1 + 10 * 5  # header + families x orders
    assert rows[1].startswith("0,constant,1,")
    assert rows[6].startswith("1,piecewise,1,")


def test_homogenize_run_reduced_mc_budget(tmp_path):
    cfg = ex.ExperimentConfig("homogenize",
                              params={"mc_noise": 4, "mc_particles": 500},
                              out_dir=str(tmp_path / "hg"))
    manifest = ex.run(cfg)
    assert manifest.all_passed  # observed cellular rel err 0.89% vs 5% gate
    blocks = np.loadtxt(tmp_path / "hg" / "homogenize_two_point_blocks.csv",
                        delimiter=",", skiprows=1)
    lam = blocks[:, 2].reshape(4, 4)
    assert np.allclose(lam, lam.T, atol=0.0)


def test_gbm_moments_run_table_and_gates(tmp_path):
    cfg = ex.ExperimentConfig("gbm-moments", params={"mc_paths": 3000},
                              base_seed=0, out_dir=str(tmp_path / "gbm"))
    manifest = ex.run(cfg)
    assert manifest.all_passed
    rows = (tmp_path / "gbm" / "gbm_moments.csv").read_text().splitlines()
    assert rows[0] == "order,t,method,value,error"
    # four probe times x three entries, plus recurrence/asymptotic/mc rows
    assert len(rows) == 1 + 4 * 3 + 3
    by_name = {row.name: row for row in manifest.checks}
    assert by_name["gbm-anchor-inverse-sqrt"].measured < 1e-10
    assert by_name["gbm-half-identity"].measured < 1e-10


def test_intermittency_small_budget_records_honest_failure(tmp_path):
    # 3e3 paths cannot meet the 1% mean gates; the run must still finish,
    # write artifacts, and record the failure rather than raise
    cfg = ex.ExperimentConfig(
        "intermittency",
        params={"n_paths": 3000, "chunk_size": 1000, "n_times": 5},
        base_seed=0, out_dir=str(tmp_path / "int"))
    manifest = ex.run(cfg)
    assert not manifest.all_passed
    assert (tmp_path / "int" / "intermittency_stats.csv").is_file()
    fits = (tmp_path / "int" / "intermittency_fits.csv").read_text().splitlines()
    assert fits[0] == "order,exponent,expected_exponent,r_squared"
    assert fits[1].startswith("3,")
    assert fits[2].startswith("4,")
    by_name = {row.name: row for row in manifest.checks}
    assert by_name["intermittency-skewness-exponent"].expected == 0.25
    assert by_name["intermittency-kurtosis-exponent"].expected == 0.5
    assert manifest.resolved_params["g"] == 3.0
    # the normalized mean stays statistically compatible with 1 even at
    # this tiny budget (observed max |z| = 1.8)
    stats = np.loadtxt(tmp_path / "int" / "intermittency_stats.csv",
                       delimiter=",", skiprows=1)
    ratio, ratio_err = stats[:, 3], stats[:, 4]
    assert np.all(np.abs(ratio - 1.0) < 4.0 * ratio_err)


# ---------------------------------------------------------------------------
# auditing and reporting


def _tiny_manifest(tmp_path, passed=True):
    measured = 0.5 if passed else 0.9
    data = ex._csv_bytes(("a",), [(1.0,)])
    (tmp_path / "tiny.csv").write_bytes(data)
    manifest = ex.RunManifest(
        experiment="strain", base_seed=0, config_hash="cd" * 32,
        artifact_version="0.1.0", wall_time_s=0.0, resolved_params={},
        outputs={"tiny.csv": ex._sha256(data)},
        checks=(ex.CheckRow("gate", measured, 0.5, 0.1),))
    (tmp_path / "manifest.yaml").write_text(
        yaml.safe_dump(manifest.to_dict(), sort_keys=True))
    return manifest


def test_report_round_trip_is_byte_identical(tmp_path):
    _tiny_manifest(tmp_path)
    text1, ok1 = ex.report(tmp_path)
    text2, ok2 = ex.report(tmp_path)
    assert text1 == text2
    assert ok1 and ok2
    assert "✓ gate" in text1
    assert text1.endswith("overall: PASS\n")


def test_report_flags_breaches(tmp_path):
    _tiny_manifest(tmp_path, passed=False)
    text, ok = ex.report(tmp_path)
    assert not ok
    assert "✗ gate" in text
    assert text.endswith("overall: FAIL\n")


def test_report_rejects_missing_and_tampered_artifacts(tmp_path):
    with pytest.raises(ex.ExperimentError, match="no manifest.yaml"):
        ex.report(tmp_path)
    _tiny_manifest(tmp_path)
    (tmp_path / "tiny.csv").write_bytes(b"a\n2.0\n")
    with pytest.raises(ex.ExperimentError, match="checksum mismatch"):
        ex.report(tmp_path)
    (tmp_path / "tiny.csv").unlink()
    with pytest.raises(ex.ExperimentError, match="missing"):
        ex.report(tmp_path)
    (tmp_path / "manifest.yaml").write_text("{unbalanced")
    with pytest.raises(ex.ExperimentError, match="not valid YAML"):
        ex.report(tmp_path)


def test_render_report_lists_sorted_artifacts():
    manifest = ex.RunManifest(
        experiment="strain", base_seed=0, config_hash="ef" * 32,
        artifact_version="0.1.0", wall_time_s=3.5, resolved_params={},
        outputs={"b.csv": "11" * 32, "a.csv": "22" * 32},
        checks=(ex.CheckRow("gate", 0.0, 0.0, 1.0),))
    text = ex.render_report(manifest)
    assert "artifacts: a.csv, b.csv" in text
    assert "seed: 0" in text
    # wall time is excluded so re-rendering stays reproducible
    assert "3.5" not in text
