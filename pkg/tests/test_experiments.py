import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from barrier_eki.ensemble import Ensemble
from barrier_eki.errors import ConfigError, InvalidInputError, UndefinedRateError
from barrier_eki.experiments import (COLUMNS, TheoryConstants, TrajectoryRecord, collapse_bound,
                                     collapse_bound_overlay, config_hash, fixed_tau_variant,
                                     get_preset, grad_flow_error, grad_flow_error_scaling,
                                     load_config, make_config, preset_names, rate_estimate,
                                     run_experiment)
from barrier_eki.experiments.cli import main
from barrier_eki.potentials import LinearModel, PseudolinearModel

TINY = {"integrator": {"t_final": 1.0, "checkpoints": 20}, "reference": {"enabled": False}}


def record_from(t, **cols):
    rec = TrajectoryRecord()
    for i, ti in enumerate(t):
        row = {c: 0.0 for c in COLUMNS}
        row["t"] = ti
        row.update({k: v[i] for k, v in cols.items()})
        rec.append(row)
    return rec


# -- config -------------------------------------------------------------------------


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="integrator.tfinal"):
        make_config({"integrator": {"tfinal": 3}})


@pytest.mark.parametrize("override", [
    {"model": "navier-stokes"},
    {"ensemble": {"J": 1}},
    {"constraint": {"kind": "norm-ball", "radius": -1.0}},
    {"reference": {"target": "best"}},
    {"integrator": 5},
    {"truth_seed": 1.5},
])
def test_invalid_config(override):
    with pytest.raises(ConfigError):
        make_config(override)


def test_config_hash_ignores_output_dir():
    a = get_preset("darcy", desk=True)
    b = make_config({"output": {"dir": "/somewhere"}}, base=a)
    c = make_config({"lambda": 0.02}, base=a)
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_load_config_from_preset(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("preset: darcy\nlambda: 0.5\nintegrator:\n  rtol: 1.0e-5\n")
    cfg = load_config(p)
    assert cfg["model"] == "darcy2d" and cfg["lambda"] == 0.5
    assert cfg["integrator"]["rtol"] == 1e-5
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_presets():
    assert set(preset_names()) == {"pseudolinear", "pseudolinear-log", "darcy", "adaptive-tau",
                                   "norm-ball-control"}
    darcy = get_preset("darcy")
    assert darcy["darcy2d"]["n"] == 32 and darcy["penalty"]["tau0"] == 1e4
    ad = get_preset("adaptive-tau")
    assert ad["darcy2d"]["n"] == 6 and ad["inflation"]["rho0"] == 0.7
    assert ad["penalty"]["kind"] == "linear" and ad["integrator"]["t_final"] == 1e5
    fixed = fixed_tau_variant(ad, 100)
    assert fixed["penalty"] == {"kind": "constant", "tau0": 100.0}
    with pytest.raises(ConfigError):
        get_preset("nope")


# -- record -------------------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(st.lists(st.tuples(*[finite] * (len(COLUMNS) - 1)), min_size=1, max_size=8))
def test_record_roundtrip(rows):
    rec = TrajectoryRecord()
    for i, vals in enumerate(rows):
        rec.append(dict(zip(COLUMNS, (float(i),) + vals)), steps={"accepted": i})
    rec.columns["margin"][0] = -math.inf
    rec.meta = {"x": math.nan}
    back_j = TrajectoryRecord.from_json(rec.to_json())
    back_c = TrajectoryRecord.from_csv(rec.to_csv())
    for c in COLUMNS:
        assert back_j.columns[c] == rec.columns[c]
        assert back_c.columns[c] == rec.columns[c]
    assert back_j.steps == rec.steps


def test_record_rejects_bad_rows():
    rec = record_from([0.0, 1.0])
    with pytest.raises(InvalidInputError):
        rec.append({c: 1.0 for c in COLUMNS})
    with pytest.raises(InvalidInputError):
        rec.append({"t": 3.0})
    with pytest.raises(InvalidInputError):
        TrajectoryRecord.from_csv("t,V_e\n1,2\n")


# -- theory -------------------------------------------------------------------------


@pytest.mark.parametrize("power", [1, 2])
def test_rate_estimate_power_law(power):
    t = np.logspace(-2, 6, 200)
    rec = record_from(t, V_e=3.0 / t ** power, err_param=t ** -0.5)
    assert rate_estimate(rec) == pytest.approx(-power, abs=1e-3)
    assert rate_estimate(rec, "error") == pytest.approx(-0.5, abs=1e-3)


def test_rate_estimate_undefined():
    t = np.logspace(-2, 2, 20)
    with pytest.raises(UndefinedRateError):
        rate_estimate(record_from(t, V_e=np.zeros(20)))
    with pytest.raises(UndefinedRateError):
        rate_estimate(record_from(t[:5], V_e=np.ones(5)))


def test_collapse_bound_overlay():
    k = TheoryConstants(sigma_min=0.5, sigma_max=2.0, lambda_max=1.0, J=10, V0=4.0)
    assert collapse_bound(0.0, k) == pytest.approx(4.0)
    t = np.concatenate([[0.0], np.logspace(-2, 4, 50)])
    ok = collapse_bound_overlay(record_from(t, V_e=collapse_bound(t, k)), k)
    assert ok.violations == 0 and ok.max_ratio == pytest.approx(1.0)
    flat = collapse_bound_overlay(record_from(t, V_e=np.full(t.size, 4.0)), k)
    assert flat.violations > 0
    assert flat.value[0] <= flat.bound[0]
    with pytest.raises(InvalidInputError):
        collapse_bound_overlay(TrajectoryRecord(), k)


def test_theory_constants_validation():
    with pytest.raises(InvalidInputError):
        TheoryConstants(0.0, 1.0, 1.0, 10, 1.0)
    k = TheoryConstants(0.5, 2.0, 1.0, 10, 4.0, lam=0.1, beta=0.5)
    assert k.sigma_provable == pytest.approx(0.025)


def test_grad_flow_error_cases(rng):
    A = rng.standard_normal((4, 4))
    data = dict(y=rng.standard_normal(4), Gamma=np.eye(4), C0=np.eye(4))
    ens = Ensemble(rng.standard_normal((5, 4)))
    assert grad_flow_error(ens, LinearModel(A, **data)) <= 1e-12
    pl = PseudolinearModel(A, 0.1, **data)
    assert grad_flow_error(ens, pl) > 1e-6
    assert grad_flow_error(Ensemble(np.ones((3, 4))), pl) == 0.0


def test_grad_flow_scaling_synthetic():
    V = np.logspace(0, -6, 40)
    fit = grad_flow_error_scaling(0.3 * V ** 1.5, V, np.ones(40))
    assert fit.exponent == pytest.approx(1.5)
    assert fit.max_ratio == pytest.approx(0.3)


# -- runner and CLI -----------------------------------------------------------------


def test_run_experiment_deterministic(tmp_path):
    cfg = get_preset("darcy", desk=True, **TINY)
    a = run_experiment(cfg, outdir=tmp_path / "a")
    b = run_experiment(cfg)
    assert a.record.completed and len(a.record) == 21
    for c in COLUMNS:
        assert a.record.columns[c] == b.record.columns[c]
    assert max(a.record.columns["margin"]) < 0
    assert {p.name for p in (tmp_path / "a").iterdir()} >= {"record.csv", "record.json",
                                                            "config.json"}


def test_cli_presets():
    out = io.StringIO()
    assert main(["presets"], out=out) == 0
    assert "adaptive-tau" in out.getvalue()


@pytest.mark.parametrize("argv", [
    ["export", "/nonexistent/record.json", "--format", "csv"],
    ["run", "darcy", "--bogus"],
    ["frobnicate"],
    ["run", "not-a-preset-or-file"],
    ["run", "darcy", "--set", "integrator.tfinal=3"],
    ["verify", "--only", "A99"],
])
def test_cli_usage_errors(argv):
    assert main(argv, out=io.StringIO()) == 64


def test_cli_infeasible_start_aborts(tmp_path):
    argv = ["run", "darcy", "--desk", "--out", str(tmp_path),
            "--set", "ensemble.pre_project=false", "--set", "constraint.lower=0.5",
            "--set", "constraint.upper=1.0", "--set", "reference.enabled=false"]
    out = io.StringIO()
    assert main(argv, out=out) == 1
    abort = json.loads((tmp_path / "abort.json").read_text())
    assert abort["reason"] == "infeasible-start"
    assert "aborted" in out.getvalue()


def test_cli_run_and_export_roundtrip(tmp_path):
    argv = ["run", "darcy", "--desk", "--out", str(tmp_path / "run")]
    for k, v in (("integrator.t_final", 1.0), ("integrator.checkpoints", 10),
                 ("reference.enabled", "false")):
        argv += ["--set", f"{k}={v}"]
    assert main(argv, out=io.StringIO()) == 0
    csv_path = tmp_path / "out.csv"
    assert main(["export", str(tmp_path / "run"), "--format", "csv", "--output", str(csv_path)],
                out=io.StringIO()) == 0
    out = io.StringIO()
    assert main(["export", str(csv_path), "--format", "json"], out=out) == 0
    orig = TrajectoryRecord.read(tmp_path / "run")
    back = TrajectoryRecord.from_json(out.getvalue())
    for c in COLUMNS:  # without a reference the error columns are nan
        np.testing.assert_array_equal(back.array(c), orig.array(c))


def test_cli_verify_single_criterion():
    out = io.StringIO()
    assert main(["verify", "--only", "a9"], out=out) == 0
    assert out.getvalue().startswith("A9   PASS")
