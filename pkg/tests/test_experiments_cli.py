import filecmp
import json
import os

import numpy as np
import pytest
import yaml

from adaptive_ac.cli import main
from adaptive_ac.errors import ConfigError
from adaptive_ac.experiments import (
    ExperimentConfig,
    aggregate,
    read_curve,
    run_experiment,
    run_garnet_repeat,
)

SMALL = ["--states", "6", "--actions", "2", "--branching", "2", "--features", "2"]


def run_cli(tmp_path, name, *args):
    out = tmp_path / name
    code = main(["run", "--output", str(out), *args])
    return code, out


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    assert not cmp.left_only and not cmp.right_only
    for f in cmp.common_files:
        with open(os.path.join(a, f), "rb") as fa, open(os.path.join(b, f), "rb") as fb:
            assert fa.read() == fb.read(), f
    for d in cmp.common_dirs:
        same_tree(os.path.join(a, d), os.path.join(b, d))


# ---------------------------------------------------------------------------
# config

def test_defaults_resolve_per_kind():
    g = ExperimentConfig().resolved()
    assert (g.num_states, g.num_actions, g.branching, g.sigma) == (30, 4, 2, 0.1)
    assert (g.num_features, g.horizon, g.repeats, g.eval_interval) == (4, 200_000, 20, 1000)
    car = ExperimentConfig(kind="mountain-car").resolved()
    assert (car.num_features, car.horizon, car.repeats) == (16, 5000, 10)


@pytest.mark.parametrize("bad", [
    dict(kind="other"), dict(algorithm="q-learning"), dict(repeats=0), dict(horizon=-1),
    dict(algorithm="sarsa"), dict(num_features=40), dict(branching=31), dict(workers=0),
    dict(schedule={"coefficients": [1, 1, 1, 1], "offsets": [1, 1, 1, 1], "exponents": [0.7] * 4}),
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad).resolved()


def test_unknown_keys_rejected(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("kind: garnet\nbogus: 1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml(p)


def test_flags_override_file(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"kind": "garnet", "repeats": 7, "horizon": 100}))
    assert main(["show-config", "--config", str(p), "--repeats", "3"]) == 0
    shown = yaml.safe_load(capsys.readouterr().out)
    assert shown["repeats"] == 3 and shown["horizon"] == 100


def test_schedule_flags(capsys):
    assert main(["show-config", "--coefficients", "2,5,10,64"]) == 0
    shown = yaml.safe_load(capsys.readouterr().out)
    assert shown["schedule"]["coefficients"] == [2.0, 5.0, 10.0, 64.0]
    assert shown["schedule"]["offsets"] == [1000.0, 1000.0, 1000.0, 50000.0]


# ---------------------------------------------------------------------------
# schedule-check

def test_schedule_check_default_passes(capsys):
    assert main(["schedule-check"]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True


def test_schedule_check_broken_rejected(capsys):
    code = main(["schedule-check", "--raw", "--coefficients", "1,1,1,1", "--offsets", "1,1,1,1",
                 "--exponents", "0.7,0.7,0.7,0.7"])
    assert code == 1
    assert json.loads(capsys.readouterr().out)["ok"] is False


def test_schedule_check_raw_needs_all_parts():
    assert main(["schedule-check", "--raw", "--coefficients", "1,1,1,1"]) == 1


def test_bad_float_list():
    with pytest.raises(SystemExit):
        main(["schedule-check", "--coefficients", "1,2"])


# ---------------------------------------------------------------------------
# run

def test_horizon_zero_gives_headers_only(tmp_path):
    code, out = run_cli(tmp_path, "z", "--repeats", "1", "--horizon", "0", *SMALL)
    assert code == 0
    text = (out / "curve_000.csv").read_text().splitlines()
    assert text[0].startswith("# adaptive-ac curve v1 kind=garnet algorithm=abtd repeat=0")
    assert text[1] == "step,eta_estimate,exact_eta,mse,msbe,mspbe,mstde,s_0"
    assert len(text) == 2
    assert len((out / "aggregate.csv").read_text().splitlines()) == 2
    m = json.loads((out / "manifest.json").read_text())
    assert m["valid"] and m["variants"]["default"]["repeats"][0]["status"] == "ok"


def test_curve_columns_and_cadence(tmp_path):
    code, out = run_cli(tmp_path, "c", "--repeats", "2", "--horizon", "3000", "--eval-interval", "1000", *SMALL)
    assert code == 0
    cols, data = read_curve(out / "curve_001.csv")
    assert data[:, 0].tolist() == [0, 1000, 2000, 3000]
    exact = data[:, cols.index("exact_eta")]
    assert np.all(np.isfinite(exact))
    assert np.all(data[:, cols.index("mspbe")] <= 2 * data[:, cols.index("msbe")] + 1e-12)


def test_aggregate_recomputed_independently(tmp_path):
    code, out = run_cli(tmp_path, "a", "--repeats", "3", "--horizon", "2000", *SMALL)
    assert code == 0
    curves = [read_curve(out / f"curve_{i:03d}.csv")[1] for i in range(3)]
    cols, agg = read_curve(out / "aggregate.csv")
    stack = np.stack(curves)
    assert np.array_equal(agg[:, 0], stack[0, :, 0])
    for k in range(1, stack.shape[2]):
        mean = stack[:, :, k].mean(axis=0)
        se = stack[:, :, k].std(axis=0, ddof=1) / np.sqrt(3)
        assert np.allclose(agg[:, 2 * k - 1], mean, rtol=1e-12, atol=1e-15)
        assert np.allclose(agg[:, 2 * k], se, rtol=1e-10, atol=1e-15)


def test_rerun_byte_identical(tmp_path):
    args = ["--repeats", "2", "--horizon", "2000", "--seed", "5", *SMALL]
    _, a = run_cli(tmp_path, "r1", *args)
    _, b = run_cli(tmp_path, "r2", *args)
    same_tree(a, b)


def test_worker_count_does_not_change_output(tmp_path):
    args = ["--repeats", "3", "--horizon", "2000", *SMALL]
    _, a = run_cli(tmp_path, "w1", *args, "--workers", "1")
    _, b = run_cli(tmp_path, "w2", *args, "--workers", "2")
    same_tree(a, b)


def test_different_seed_changes_output(tmp_path):
    _, a = run_cli(tmp_path, "s1", "--repeats", "1", "--horizon", "2000", "--seed", "1", *SMALL)
    _, b = run_cli(tmp_path, "s2", "--repeats", "1", "--horizon", "2000", "--seed", "2", *SMALL)
    assert (a / "curve_000.csv").read_bytes() != (b / "curve_000.csv").read_bytes()


@pytest.mark.parametrize("alg", ["abbe", "abpbe", "static-ac"])
def test_other_algorithms_run(tmp_path, alg):
    code, out = run_cli(tmp_path, alg, "--algorithm", alg, "--repeats", "1", "--horizon", "3000", *SMALL)
    assert code == 0
    cols, data = read_curve(out / "curve_000.csv")
    if alg == "static-ac":
        assert np.all(data[:, cols.index("s_0")] == 0.5)


def test_mts_vs_sts_layout(tmp_path):
    code, out = run_cli(tmp_path, "m", "--kind", "mts-vs-sts", "--repeats", "1", "--horizon", "2000", *SMALL)
    assert code == 0
    assert (out / "mts" / "curve_000.csv").exists() and (out / "sts" / "aggregate.csv").exists()
    m = json.loads((out / "manifest.json").read_text())
    assert set(m["variants"]) == {"mts", "sts"}
    assert "variant=sts" in (out / "sts" / "curve_000.csv").read_text().splitlines()[0]


@pytest.mark.parametrize("alg", ["abtd", "static-ac", "sarsa"])
def test_mountain_car_runs(tmp_path, alg):
    code, out = run_cli(tmp_path, "car" + alg, "--kind", "mountain-car", "--algorithm", alg,
                        "--repeats", "1", "--horizon", "3", "--max-episode-steps", "300")
    assert code == 0
    cols, data = read_curve(out / "curve_000.csv")
    assert cols[:3] == ["episode", "step", "steps_to_goal"]
    assert data.shape[0] == 3 and np.all((data[:, 2] >= 1) & (data[:, 2] <= 300))


def test_divergence_quorum(tmp_path):
    code, out = run_cli(tmp_path, "d", "--repeats", "2", "--horizon", "5000",
                        "--coefficients", "1,5,1e12,64", *SMALL)
    assert code == 3
    m = json.loads((out / "manifest.json").read_text())
    v = m["variants"]["default"]
    assert v["failed"] == 2 and not v["aggregate_valid"] and not m["valid"]
    assert all(r["status"] == "failed" and r["error"] for r in v["repeats"])
    assert "status=failed" in (out / "curve_000.csv").read_text().splitlines()[0]


def test_failed_repeats_excluded_from_aggregate():
    cfg = ExperimentConfig(num_states=6, num_actions=2, branching=2, num_features=2,
                           horizon=2000, repeats=2).resolved()
    good = run_garnet_repeat(cfg, 0)
    bad = run_garnet_repeat(cfg, 1)
    bad.failed = True
    bad.rows = [[0] * len(r) for r in bad.rows]
    _, rows = aggregate([good, bad])
    assert rows[-1][1] == good.rows[-1][1] and rows[-1][2] == 0.0


def test_config_error_exit_code(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "e", "--repeats", "0")
    assert code == 1
    assert "config error" in capsys.readouterr().err


def test_validate_kind_not_runnable():
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(kind="validate"))


# ---------------------------------------------------------------------------
# validate

def test_validate_command(tmp_path, capsys):
    report = tmp_path / "rep.json"
    assert main(["validate", "--instances", "2", "--report", str(report)]) == 0
    assert json.loads(report.read_text())["ok"] is True
    assert "PASS  overall" in capsys.readouterr().out


@pytest.mark.parametrize("fault,section", [("abbe-sign", "gradient_audits"), ("phase-table", "basis_jacobian")])
def test_validate_fault_hooks(capsys, fault, section):
    assert main(["validate", "--instances", "2", "--fault", fault]) == 2
    assert f"FAIL  {section}" in capsys.readouterr().out
