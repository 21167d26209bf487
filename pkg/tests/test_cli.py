import filecmp
import json
import os

import numpy as np
import pytest
import yaml

from ileqg.cli import (
    EXIT_CONFIG,
    EXIT_EARLY_STOP,
    EXIT_OK,
    ExperimentConfig,
    ConfigError,
    load_config,
    main,
)
from ileqg.presets import PRESETS, get_preset


def tiny_pendulum_config(**overrides):
    cfg = get_preset("pendulum-fig4")
    cfg["costs"]["horizon_steps"] = 30
    cfg["costs"]["horizon_time"] = 1.5
    cfg["solver"]["iterations"] = 4
    cfg["solver"]["step"] = {"policy": "constant", "gamma": 2.0}
    cfg["risk"]["theta"] = 2.0
    cfg["risk"]["sigma"] = 0.1
    cfg["mc"]["samples"] = 40
    cfg["mc"]["runs"] = 2
    cfg["mc"]["test_simulations"] = 30
    cfg["mc"]["sigma_test"] = [0.0, 1.0, 2.0]
    cfg["mc"]["per_iteration_gradients"] = True
    for key, val in overrides.items():
        cfg[key] = val
    return cfg


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    path = os.path.join(tmp_path, name)
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh)
    return path


# ---------------------------------------------------------------------------
# configuration handling
# ---------------------------------------------------------------------------


def test_all_presets_validate():
    for name in PRESETS:
        cfg = ExperimentConfig.from_tree(get_preset(name))
        cfg.build_system()
        cfg.build_costs()
        cfg.solver_config()
        assert cfg.sigma > 0 and cfg.sigma0 > 0


def test_fig4_preset_carries_the_stated_setting():
    cfg = get_preset("pendulum-fig4")
    assert cfg["costs"]["lam1"] == 0.1
    assert cfg["costs"]["lam2"] == 0.01
    assert cfg["costs"]["horizon_time"] == 5.0
    assert cfg["costs"]["horizon_steps"] == 100
    assert cfg["risk"]["theta"] == 4.0
    assert cfg["solver"]["step"] == {"policy": "grid", "exponents": [-5, 10], "burn_in": 5}


def test_robust_presets_carry_the_stated_setting():
    pend = get_preset("pendulum-robust")
    assert (pend["costs"]["lam1"], pend["costs"]["lam2"]) == (10.0, 1e-3)
    assert pend["solver"]["step"]["exponents"] == [-5, 5]
    assert pend["solver"]["step"]["burn_in"] == 10
    assert pend["solver"]["iterations"] == 50
    arm = get_preset("arm-robust")
    assert (arm["costs"]["lam1"], arm["costs"]["lam2"]) == (1e-2, 1e-3)


def test_config_errors_are_reported(tmp_path):
    bad = tiny_pendulum_config()
    bad["risk"]["sigma"] = -1.0
    path = write_cfg(str(tmp_path), bad)
    assert main(["solve", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--preset", "no-such", "--out", str(tmp_path)]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        load_config(None, None, None)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_tree({"schema": 99})


def test_seed_override():
    cfg = ExperimentConfig.from_tree(tiny_pendulum_config(), seed_override=777)
    assert cfg.seed == 777


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def test_solve_outputs_and_determinism(tmp_path):
    path = write_cfg(str(tmp_path), tiny_pendulum_config())
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["solve", "--config", path, "--out", out1]) == EXIT_OK
    assert main(["solve", "--config", path, "--out", out2]) == EXIT_OK
    for fname in (
        "regileqg_trace.csv",
        "ileqg_trace.csv",
        "regileqg_best.csv",
        "summary.json",
    ):
        assert filecmp.cmp(os.path.join(out1, fname), os.path.join(out2, fname),
                           shallow=False), fname

    with open(os.path.join(out1, "regileqg_trace.csv")) as fh:
        header = fh.readline().strip().split(",")
        first = fh.readline().strip().split(",")
    assert header == [
        "iter", "surrogate_value", "mc_value", "mc_stderr", "trunc_grad_norm",
        "mc_grad_norm", "gamma", "backtracks", "feasible", "wall_ms",
    ]
    assert len(first) == len(header)
    # floats carry 17 significant digits and round-trip exactly
    val = first[1]
    assert val == "%.17g" % float(val)
    assert len(val.replace(".", "").replace("-", "").lstrip("0")) >= 16

    summary = json.load(open(os.path.join(out1, "summary.json")))
    assert set(summary["algorithms"]) == {"regileqg", "ileqg"}
    assert summary["paper_tuned_steps"] == {"regileqg": 16.0, "ileqg": 0.5}

    # the MC estimate tracks the surrogate on these mild iterates
    rows = np.genfromtxt(os.path.join(out1, "regileqg_trace.csv"),
                         delimiter=",", names=True)
    gap = np.abs(rows["surrogate_value"] - rows["mc_value"])
    assert np.all(gap <= 5 * rows["mc_stderr"] + 1e-6)
    # best-so-far series is the running minimum
    best = np.genfromtxt(os.path.join(out1, "regileqg_best.csv"),
                         delimiter=",", names=True)
    assert np.allclose(best["best_surrogate"],
                       np.minimum.accumulate(rows["surrogate_value"]))


def test_zero_iteration_solve_writes_single_row(tmp_path):
    cfg = tiny_pendulum_config()
    cfg["solver"]["iterations"] = 0
    cfg["solver"]["algorithm"] = "regileqg"
    path = write_cfg(str(tmp_path), cfg)
    out = str(tmp_path / "zero")
    assert main(["solve", "--config", path, "--out", out]) == EXIT_OK
    lines = open(os.path.join(out, "regileqg_trace.csv")).read().strip().splitlines()
    assert len(lines) == 2  # header plus the initial point


def test_solve_early_stop_exit_code(tmp_path):
    cfg = tiny_pendulum_config()
    cfg["costs"]["horizon_steps"] = 100
    cfg["costs"]["horizon_time"] = 5.0
    cfg["risk"]["theta"] = 4.0
    cfg["risk"]["sigma"] = 1.0
    cfg["solver"]["algorithm"] = "regileqg"
    cfg["solver"]["step"] = {"policy": "constant", "gamma": 16.0}
    cfg["solver"]["iterations"] = 10
    cfg["mc"]["per_iteration_gradients"] = False
    path = write_cfg(str(tmp_path), cfg)
    out = str(tmp_path / "stop")
    assert main(["solve", "--config", path, "--out", out]) == EXIT_EARLY_STOP
    summary = json.load(open(os.path.join(out, "summary.json")))
    assert summary["algorithms"]["regileqg"]["termination"] == "infeasible"


# ---------------------------------------------------------------------------
# approx-compare
# ---------------------------------------------------------------------------


def test_approx_compare_on_saved_iterates(tmp_path):
    cfg = tiny_pendulum_config()
    cfg["solver"]["algorithm"] = "regileqg"
    path = write_cfg(str(tmp_path), cfg)
    out = str(tmp_path / "run")
    assert main(["solve", "--config", path, "--out", out]) == EXIT_OK
    assert main(["approx-compare", "--config", path, "--out", out]) == EXIT_OK
    rows = np.genfromtxt(os.path.join(out, "approx_compare.csv"),
                         delimiter=",", names=True)
    assert rows.size == 5  # 4 iterations + initial point
    gap = np.abs(rows["surrogate_value"] - rows["mc_value"])
    assert np.all(gap <= 3 * rows["mc_value_stderr"] + 5e-2)


def test_approx_compare_empty_iterates(tmp_path):
    cfg = tiny_pendulum_config()
    path = write_cfg(str(tmp_path), cfg)
    out = str(tmp_path / "empty")
    os.makedirs(out)
    empty = os.path.join(out, "none.npy")
    np.save(empty, np.empty((0, 30, 1)))
    assert main([
        "approx-compare", "--config", path, "--out", out, "--iterates", empty
    ]) == EXIT_OK
    text = open(os.path.join(out, "approx_compare.csv")).read()
    assert text.splitlines()[0].startswith("iter,surrogate_value")
    assert len(text.strip().splitlines()) == 1


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------


def test_robustness_zero_kick_column_equals_noiseless_cost(tmp_path):
    cfg = tiny_pendulum_config()
    cfg["solver"]["algorithm"] = "regileqg"
    cfg["risk"]["theta_list"] = [0.0, 1.0]
    path = write_cfg(str(tmp_path), cfg)
    out = str(tmp_path / "rob")
    assert main(["robustness", "--config", path, "--out", out]) == EXIT_OK
    rows = np.genfromtxt(os.path.join(out, "robustness.csv"),
                         delimiter=",", names=True)
    assert set(np.unique(rows["theta"])) == {0.0, 1.0}
    zero = rows[rows["sigma_test"] == 0.0]
    assert np.all(zero["stderr"] == 0.0)

    # recompute the noiseless state cost of each trained controller
    import ileqg
    from ileqg import rollout

    config = ExperimentConfig.from_tree(tiny_pendulum_config(), None)
    config.raw["solver"]["algorithm"] = "regileqg"
    system = config.build_system()
    costs = config.build_costs()
    summary = json.load(open(os.path.join(out, "summary.json")))
    for theta in (0.0, 1.0):
        trace = ileqg.run_regileqg(system, costs, config.solver_config(theta))
        vals = trace.surrogate_series()
        best = int(np.argmin(np.where(np.isfinite(vals), vals, np.inf)))
        exact = float(costs.state_total(rollout(system, trace.records[best].controls)))
        row = zero[zero["theta"] == theta]
        assert abs(float(row["mean_test_cost"]) - exact) < 1e-12
        assert summary["controllers"]["%g" % theta]["trained"]


def test_robustness_threads_do_not_change_bytes(tmp_path):
    cfg = tiny_pendulum_config()
    cfg["solver"]["algorithm"] = "regileqg"
    cfg["risk"]["theta_list"] = [0.0, 1.0]
    path = write_cfg(str(tmp_path), cfg)
    out1, out2 = str(tmp_path / "t1"), str(tmp_path / "t2")
    assert main(["robustness", "--config", path, "--out", out1, "--threads", "1"]) == EXIT_OK
    assert main(["robustness", "--config", path, "--out", out2, "--threads", "3"]) == EXIT_OK
    assert filecmp.cmp(os.path.join(out1, "robustness.csv"),
                       os.path.join(out2, "robustness.csv"), shallow=False)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def test_validate_passes_and_reports(capsys):
    assert main(["validate", "--seed", "3"]) == EXIT_OK
    outp = capsys.readouterr().out
    assert outp.count("[PASS]") >= 6
    assert "tolerance" in outp and "worst error" in outp


def test_validate_detects_sabotaged_recursion(capsys):
    assert main(["validate", "--seed", "3", "--sabotage", "dp-step"]) == EXIT_EARLY_STOP
    outp = capsys.readouterr().out
    assert "[FAIL]" in outp
