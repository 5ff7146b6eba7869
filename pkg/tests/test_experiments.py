import csv
import json
import math

import numpy as np
import pytest

from amptune.experiments import (
    KINDS,
    ConfigError,
    ExperimentIOError,
    ExperimentSpec,
    builtin_experiments,
    get_preset,
    load_spec,
    mse_compare,
    replicate_seeds,
    run_experiment,
    threshold_gap,
)
from amptune.problem_gen import GenConfig, SignalPrior
from amptune.shrinkage import optimal_tau


def _tiny(kind="amp", **params):
    params = params or {"policy": "chi", "chi": 1.5, "max_iters": 5}
    return ExperimentSpec("tiny", kind, GenConfig(200, 0.5, 0.2, sigma_w=0.1, seed=3), params, replicates=3)


def test_presets_cover_every_family():
    names = {s.name for s in builtin_experiments()}
    for prefix in ("risk-vs-p", "bisection-snapshots", "delta-sensitivity", "mse-compare", "lasso-path", "se-lambda-path", "greedy-vs-joint"):
        assert any(n.startswith(prefix) for n in names)
    assert len(names) == len(builtin_experiments())


def test_preset_values():
    c2 = get_preset("risk-vs-p-case2").gen
    assert (c2.delta, c2.rho, c2.sigma_w) == (0.85, 0.25, 0.5)
    c3 = get_preset("risk-vs-p-case3").gen
    assert (c3.delta, c3.rho, c3.sigma_w) == (0.2, 0.1, 0.1)
    assert get_preset("risk-vs-p-case1").params["p_list"] == [200, 600, 4000, 10000]
    fig2 = get_preset("lasso-path-active-set").gen
    assert (fig2.n, fig2.k) == (1000, 100) and fig2.sigma_w == pytest.approx(math.sqrt(0.7 / 1000))


@pytest.mark.parametrize("spec", builtin_experiments(), ids=lambda s: s.name)
def test_presets_round_trip(spec):
    again = ExperimentSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again == spec and again.config_hash() == spec.config_hash()


def test_spec_validation():
    good = _tiny().to_dict()
    for mutate in (
        lambda d: d.update(kind="nope"),
        lambda d: d.update(replicates=0),
        lambda d: d.update(extra=1),
        lambda d: d.pop("gen"),
        lambda d: d.update(name="bad name"),
        lambda d: d["gen"].update(delta=2.0),
        lambda d: d.update(params=[1]),
    ):
        d = json.loads(json.dumps(good))
        mutate(d)
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict(d)
    with pytest.raises(ConfigError):
        get_preset("does-not-exist")


def test_load_spec_errors(tmp_path):
    with pytest.raises(ExperimentIOError):
        load_spec(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_spec(bad)


def test_replicate_seeds_isolated_and_stable():
    a = replicate_seeds(get_preset("bisection-snapshots-noiseless"))
    b = replicate_seeds(get_preset("bisection-snapshots-noisy"))
    assert a == replicate_seeds(get_preset("bisection-snapshots-noiseless"))
    assert not set(a) & set(b)
    assert len(set(a)) == len(a)
    # more replicates extend, never reshuffle, the seed list
    spec = _tiny()
    spec3, spec5 = replicate_seeds(spec), replicate_seeds(ExperimentSpec(**{**spec.__dict__, "replicates": 5}))
    assert spec5[:3] == spec3


def test_run_writes_tables_and_manifest(tmp_path):
    spec = _tiny()
    m = run_experiment(spec, tmp_path / "a")
    assert m["files"] == ["trajectory.csv"] and not m["failures"]
    rows = list(csv.DictReader((tmp_path / "a" / "trajectory.csv").open()))
    kinds = {r["kind"] for r in rows}
    assert kinds == {"replicate", "median", "q25", "q75"}
    assert sum(r["kind"] == "replicate" for r in rows) == 3 * 6
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seeds"] == replicate_seeds(spec)
    assert manifest["config_hash"] == spec.config_hash()
    assert {"amptune", "numpy", "python"} <= set(manifest["software"])


def test_runs_are_byte_identical_and_thread_independent(tmp_path):
    spec = _tiny()
    run_experiment(spec, tmp_path / "a", threads=1)
    run_experiment(spec, tmp_path / "b", threads=3)
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_manifest_reproduces_outputs(tmp_path):
    run_experiment(_tiny(), tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    spec = ExperimentSpec.from_dict(manifest["experiment"])
    run_experiment(spec, tmp_path / "b")
    for f in manifest["files"]:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_json_output(tmp_path):
    m = run_experiment(_tiny(), tmp_path, fmt="json")
    rows = json.loads((tmp_path / m["files"][0]).read_text())
    assert rows[0]["kind"] == "replicate"


def test_failing_replicate_is_recorded(tmp_path):
    spec = _tiny(policy="bogus")
    m = run_experiment(spec, tmp_path)
    assert len(m["failures"]) == 3 and "ConfigError" in m["failures"][0]["error"]
    assert m["files"] == []


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ExperimentIOError):
        run_experiment(_tiny(), blocker / "sub")


def test_risk_vs_p_emits_one_curve_per_p(tmp_path):
    spec = ExperimentSpec(
        "rvp", "risk_vs_p", GenConfig(400, 0.85, 0.25, seed=0), {"p_list": [200, 400], "iterations": [1, 2], "gammas": [0.1, 3, 5]}, 1
    )
    m = run_experiment(spec, tmp_path)
    assert m["files"] == ["curve_p200.csv", "curve_p400.csv", "sup_deviation.csv"]


def test_mse_compare_columns():
    res = mse_compare(GenConfig(400, 0.85, 0.25, seed=0), max_iters=8, chi_grid=[1.0, 1.5])
    assert len(res["sure"]) == len(res["maximin"]) == len(res["grid_constant"]) == 9
    assert res["chi_grid_best"] in (1.0, 1.5)


@pytest.mark.parametrize("kind", ["se_lambda_path", "greedy_vs_joint", "delta_sensitivity", "bisection_snapshots"])
def test_other_kinds_run(tmp_path, kind):
    params = {"se_lambda_path": {"num": 20}, "greedy_vs_joint": {"T": 2, "grid_size": 5}, "delta_sensitivity": {"deltas": [0.1]}, "bisection_snapshots": {"iterations": [1, 2]}}[kind]
    spec = ExperimentSpec("k", kind, GenConfig(300, 0.85, 0.25, sigma_w=0.2, seed=1), params, 1)
    m = run_experiment(spec, tmp_path)
    assert not m["failures"] and m["files"]
    assert kind in KINDS


def test_threshold_gap_zero_at_optimum():
    prior = SignalPrior.point_mass(1.0, 0.2)
    t = optimal_tau(prior, 0.3)
    g, gap = threshold_gap(prior, 0.3, t)
    assert g == pytest.approx(t / 0.3) and abs(gap) < 1e-12
    assert threshold_gap(prior, 0.3, 2 * t)[1] > 0
