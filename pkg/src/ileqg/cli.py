"""Experiment harness: solve / approx-compare / robustness / validate.

The harness reads one YAML config per experiment (or a named preset),
validates it fully before any compute, and emits machine-readable CSV/JSON.
Plotting is out of scope by design; the column contract below replaces it.

Outputs of ``solve`` per algorithm A in {regileqg, ileqg}:

* ``A_trace.csv`` with columns
  iter, surrogate_value, mc_value, mc_stderr, trunc_grad_norm, mc_grad_norm,
  gamma, backtracks, feasible, wall_ms
* ``A_best.csv`` with columns iter, best_surrogate (the running minimum)
* ``A_iterates.npy`` holding the command at every iteration
* ``summary.json``

``approx-compare`` re-evaluates a saved iterate sequence, pairing the
closed-form surrogate value/gradient with seeded Monte-Carlo estimates;
``robustness`` trains one controller per risk weight in ``risk.theta_list``
and sweeps the impulse-disturbance test cost; ``validate`` runs the
cross-solver equivalence suite.

Floats are written with 17 significant digits and files atomically, so a
given (config, seed) reproduces outputs byte for byte.  Wall-clock columns
are zero unless ``--timings`` is passed, keeping the default output
deterministic.  Exit codes: 0 clean, 2 early termination or failed checks,
64 config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import yaml

from . import presets as presets_mod
from .montecarlo import mc_risk_gradient, mc_risk_value, test_cost
from .solver import (
    BacktrackingStep,
    ConstantStep,
    GridBurnIn,
    IterateTrace,
    SolverConfig,
    run_ileqg,
    run_regileqg,
)
from .surrogate import surrogate_value, truncated_gradient
from .systems import (
    ArmParameters,
    DynamicalSystem,
    StageCosts,
    pendulum_costs,
    pendulum_system,
    two_link_arm_costs,
    two_link_arm_system,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_EARLY_STOP = 2
EXIT_CONFIG = 64

CLEAN_TERMINATIONS = ("max_iterations", "tolerance")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config loading and validation
# ---------------------------------------------------------------------------


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _as_float(tree: dict, key: str, lo=None, hi=None) -> float:
    _require(key in tree, f"missing field {key!r}")
    val = tree[key]
    _require(isinstance(val, (int, float)) and not isinstance(val, bool),
             f"field {key!r} must be a number, got {val!r}")
    val = float(val)
    _require(lo is None or val >= lo, f"field {key!r} must be >= {lo}")
    _require(hi is None or val <= hi, f"field {key!r} must be <= {hi}")
    return val


def _as_int(tree: dict, key: str, lo=None) -> int:
    val = _as_float(tree, key, lo=lo)
    _require(float(val).is_integer(), f"field {key!r} must be an integer")
    return int(val)


@dataclass
class ExperimentConfig:
    """Validated experiment description; builds the concrete objects on demand."""

    raw: dict
    seed: int

    @classmethod
    def from_tree(cls, tree: dict, seed_override: Optional[int] = None) -> "ExperimentConfig":
        _require(isinstance(tree, dict), "config must be a mapping")
        _require(tree.get("schema") == SCHEMA_VERSION,
                 f"config schema must be {SCHEMA_VERSION}")
        for section in ("system", "costs", "risk", "solver", "mc"):
            _require(isinstance(tree.get(section), dict), f"missing section {section!r}")

        sysd = tree["system"]
        name = sysd.get("name")
        _require(name in ("pendulum", "two-link-arm"),
                 f"system.name must be 'pendulum' or 'two-link-arm', got {name!r}")
        cost = tree["costs"]
        _as_float(cost, "lam1", lo=0.0)
        _as_float(cost, "lam2", lo=0.0)
        T = _as_float(cost, "horizon_time", lo=1e-12)
        tau = _as_int(cost, "horizon_steps", lo=1)
        state_dim = 2 if name == "pendulum" else 4
        start = sysd.get("start", [0.0] * state_dim)
        _require(
            isinstance(start, (list, tuple)) and len(start) == state_dim,
            f"system.start must have {state_dim} entries",
        )
        if name == "two-link-arm":
            target = sysd.get("target")
            _require(
                isinstance(target, (list, tuple)) and len(target) == 2,
                "system.target (joint angles) required for the arm",
            )

        risk = tree["risk"]
        _as_float(risk, "theta", lo=0.0)
        _require(isinstance(risk.get("theta_list", []), (list, tuple)),
                 "risk.theta_list must be a list")
        for val in risk.get("theta_list", []):
            _require(isinstance(val, (int, float)) and val >= 0,
                     "risk.theta_list entries must be nonnegative numbers")
        for key in ("sigma", "sigma0"):
            val = risk.get(key)
            ok = val == "inertia" or (isinstance(val, (int, float)) and val > 0)
            _require(ok, f"risk.{key} must be positive or 'inertia'")
            _require(val != "inertia" or name == "two-link-arm",
                     "'inertia' noise scaling is the arm convention")

        sol = tree["solver"]
        _require(sol.get("algorithm") in ("regileqg", "ileqg", "both"),
                 "solver.algorithm must be regileqg | ileqg | both")
        _as_int(sol, "iterations", lo=0)
        _as_float(sol, "tolerance", lo=0.0)
        _as_int(sol, "mc_samples", lo=1)
        step = sol.get("step")
        _require(isinstance(step, dict) and step.get("policy") in
                 ("constant", "backtracking", "grid"),
                 "solver.step.policy must be constant | backtracking | grid")
        if step["policy"] == "constant":
            _as_float(step, "gamma", lo=1e-300)
        elif step["policy"] == "backtracking":
            _as_float(step, "gamma0", lo=1e-300)
        else:
            exps = step.get("exponents")
            _require(isinstance(exps, (list, tuple)) and len(exps) >= 2,
                     "grid step needs exponents [lo, hi] or an explicit list")
            _as_int(step, "burn_in", lo=1)

        mc = tree["mc"]
        _as_int(mc, "samples", lo=1)
        _as_int(mc, "runs", lo=1)
        _as_int(mc, "test_simulations", lo=1)
        _require(isinstance(mc.get("sigma_test"), (list, tuple)) and mc["sigma_test"],
                 "mc.sigma_test must be a nonempty list")
        for val in mc["sigma_test"]:
            _require(isinstance(val, (int, float)) and val >= 0,
                     "mc.sigma_test entries must be nonnegative")

        seed = tree.get("seed", 0)
        _require(isinstance(seed, int) and 0 <= seed < 2**64, "seed must be a u64")
        if seed_override is not None:
            seed = seed_override
        return cls(raw=tree, seed=seed)

    # -- builders ----------------------------------------------------------

    @property
    def delta(self) -> float:
        return self.raw["costs"]["horizon_time"] / self.raw["costs"]["horizon_steps"]

    @property
    def horizon(self) -> int:
        return int(self.raw["costs"]["horizon_steps"])

    def build_system(self) -> DynamicalSystem:
        sysd = self.raw["system"]
        if sysd["name"] == "pendulum":
            return pendulum_system(
                mass=float(sysd.get("mass", 1.0)),
                length=float(sysd.get("length", 1.0)),
                friction=float(sysd.get("friction", 0.01)),
                gravity=float(sysd.get("gravity", 9.81)),
                delta=self.delta,
                horizon=self.horizon,
                x0=np.asarray(sysd.get("start", (0.0, 0.0)), dtype=float),
            )
        return two_link_arm_system(
            ArmParameters(),
            delta=self.delta,
            horizon=self.horizon,
            x0=np.asarray(sysd.get("start", (0.0,) * 4), dtype=float),
        )

    def build_costs(self) -> StageCosts:
        sysd = self.raw["system"]
        cost = self.raw["costs"]
        kwargs = dict(
            delta=self.delta,
            horizon=self.horizon,
            scale_control_by_dt=bool(cost.get("scale_control_by_dt", True)),
        )
        if sysd["name"] == "pendulum":
            return pendulum_costs(cost["lam1"], cost["lam2"], **kwargs)
        return two_link_arm_costs(
            np.asarray(sysd["target"], dtype=float), cost["lam1"], cost["lam2"], **kwargs
        )

    def _resolve_scale(self, value) -> float:
        if value == "inertia":
            theta2 = float(self.raw["system"].get("start", [0, 0, 0, 0])[1])
            Minv = ArmParameters().inertia_inverse(theta2)
            return 1.0 / float(np.linalg.norm(Minv, 2))
        return float(value)

    @property
    def sigma(self) -> float:
        return self._resolve_scale(self.raw["risk"]["sigma"])

    @property
    def sigma0(self) -> float:
        return self._resolve_scale(self.raw["risk"]["sigma0"])

    def step_policy(self):
        step = self.raw["solver"]["step"]
        if step["policy"] == "constant":
            return ConstantStep(float(step["gamma"]))
        if step["policy"] == "backtracking":
            return BacktrackingStep(
                gamma0=float(step["gamma0"]),
                shrink=float(step.get("shrink", 0.5)),
                grow=float(step.get("grow", 2.0)),
                gamma_min=float(step.get("gamma_min", 2.0**-20)),
                gamma_max=float(step.get("gamma_max", 2.0**20)),
                max_trials=int(step.get("max_trials", 40)),
            )
        exps = step["exponents"]
        if len(exps) == 2:
            exps = range(int(exps[0]), int(exps[1]) + 1)
        return GridBurnIn(tuple(int(e) for e in exps), int(step["burn_in"]))

    def solver_config(self, theta: Optional[float] = None) -> SolverConfig:
        sol = self.raw["solver"]
        return SolverConfig(
            theta=self.raw["risk"]["theta"] if theta is None else float(theta),
            sigma=self.sigma,
            step=self.step_policy(),
            max_iterations=int(sol["iterations"]),
            tolerance=float(sol["tolerance"]),
            seed=self.seed,
            mc_samples=int(sol["mc_samples"]),
        )


def load_config(
    path: Optional[str], preset: Optional[str], seed_override: Optional[int]
) -> ExperimentConfig:
    if (path is None) == (preset is None):
        raise ConfigError("give exactly one of --config PATH or --preset NAME")
    if preset is not None:
        try:
            tree = presets_mod.get_preset(preset)
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                tree = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_tree(tree, seed_override)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def write_atomic(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]):
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    write_atomic(path, "\n".join(lines) + "\n")


def write_json(path: str, payload: dict):
    write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _thread_count(arg: Optional[int]) -> int:
    env = os.environ.get("ILEQG_THREADS")
    if env is not None:
        return max(1, int(env))
    return max(1, arg or 1)


def _map_ordered(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

TRACE_HEADER = (
    "iter",
    "surrogate_value",
    "mc_value",
    "mc_stderr",
    "trunc_grad_norm",
    "mc_grad_norm",
    "gamma",
    "backtracks",
    "feasible",
    "wall_ms",
)


def _mc_columns(system, costs, config: ExperimentConfig, trace: IterateTrace,
                algo: str, threads: int, with_gradients: bool):
    mc = config.raw["mc"]
    theta = trace.theta
    sigma = trace.sigma
    offset = 0 if algo == "regileqg" else 10_000_019

    def one(item):
        idx, rec = item
        seed = (config.seed * 1_000_003 + 7919 * idx + offset) % 2**63
        try:
            est = mc_risk_value(
                system, costs, rec.controls, theta, sigma,
                int(mc["samples"]), seed, runs=int(mc["runs"]),
            )
            value, stderr = est.value, est.stderr
        except Exception:
            value, stderr = np.nan, np.nan
        gnorm = np.nan
        if with_gradients:
            try:
                grad, _ = mc_risk_gradient(
                    system, costs, rec.controls, theta, sigma, int(mc["samples"]), seed
                )
                gnorm = float(np.linalg.norm(grad))
            except Exception:
                gnorm = np.nan
        return value, stderr, gnorm

    return _map_ordered(one, list(enumerate(trace.records)), threads)


def cmd_solve(config: ExperimentConfig, out: str, threads: int = 1,
              timings: bool = False) -> int:
    system = config.build_system()
    costs = config.build_costs()
    algos = (
        ("regileqg", "ileqg")
        if config.raw["solver"]["algorithm"] == "both"
        else (config.raw["solver"]["algorithm"],)
    )
    with_grad = bool(config.raw["mc"].get("per_iteration_gradients", False))
    summary: dict = {"experiment": "solve", "seed": config.seed, "algorithms": {}}
    if "paper_tuned_steps" in config.raw:
        summary["paper_tuned_steps"] = config.raw["paper_tuned_steps"]
    status = EXIT_OK

    for algo in algos:
        runner = run_regileqg if algo == "regileqg" else run_ileqg
        trace = runner(system, costs, config.solver_config())
        mc_cols = _mc_columns(system, costs, config, trace, algo, threads, with_grad)
        rows = []
        for rec, (mc_v, mc_se, mc_g) in zip(trace.records, mc_cols):
            rows.append(
                (
                    rec.index,
                    rec.surrogate,
                    mc_v,
                    mc_se,
                    rec.grad_norm,
                    mc_g,
                    rec.gamma,
                    rec.backtracks,
                    rec.feasible,
                    rec.wall_ms if timings else 0.0,
                )
            )
        write_csv(os.path.join(out, f"{algo}_trace.csv"), TRACE_HEADER, rows)

        best = trace.best_so_far()
        write_csv(
            os.path.join(out, f"{algo}_best.csv"),
            ("iter", "best_surrogate"),
            [(rec.index, b) for rec, b in zip(trace.records, best)],
        )
        stack = np.stack([rec.controls for rec in trace.records])
        tmp = os.path.join(out, f".{algo}_iterates.tmp")
        with open(tmp, "wb") as fh:
            np.save(fh, stack)
        os.replace(tmp, os.path.join(out, f"{algo}_iterates.npy"))

        finite = best[np.isfinite(best)]
        summary["algorithms"][algo] = {
            "termination": trace.termination,
            "iterations": len(trace.records) - 1,
            "tuned_gamma": trace.tuned_gamma,
            "initial_surrogate": None if not np.isfinite(trace.records[0].surrogate)
            else trace.records[0].surrogate,
            "best_surrogate": None if finite.size == 0 else float(finite.min()),
        }
        if trace.termination not in CLEAN_TERMINATIONS:
            status = EXIT_EARLY_STOP
    write_json(os.path.join(out, "summary.json"), summary)
    return status


# ---------------------------------------------------------------------------
# approx-compare
# ---------------------------------------------------------------------------

APPROX_HEADER = (
    "iter",
    "surrogate_value",
    "surrogate_grad_norm",
    "mc_value",
    "mc_value_stderr",
    "mc_grad_norm",
    "mc_grad_norm_stderr",
)


def cmd_approx_compare(config: ExperimentConfig, out: str, iterates: str,
                       threads: int = 1) -> int:
    system = config.build_system()
    costs = config.build_costs()
    theta = float(config.raw["risk"]["theta"])
    sigma = config.sigma
    mc = config.raw["mc"]
    U_seq = np.load(iterates) if os.path.exists(iterates) else np.empty((0, 0, 0))

    def one(item):
        idx, U = item
        try:
            ev = surrogate_value(system, costs, U, theta, sigma)
            grad = truncated_gradient(system, costs, U, theta, sigma)
            s_val, s_gn = ev.value, float(np.linalg.norm(grad))
        except Exception:
            s_val, s_gn = np.nan, np.nan
        vals, gnorms = [], []
        for run in range(int(mc["runs"])):
            seed = (config.seed * 1_000_003 + 7919 * idx + 104_729 * run) % 2**63
            try:
                est = mc_risk_value(system, costs, U, theta, sigma, int(mc["samples"]), seed)
                grad, _ = mc_risk_gradient(
                    system, costs, U, theta, sigma, int(mc["samples"]), seed
                )
                vals.append(est.value)
                gnorms.append(float(np.linalg.norm(grad)))
            except Exception:
                continue
        if vals:
            n = len(vals)
            mc_v = float(np.mean(vals))
            mc_v_se = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            mc_g = float(np.mean(gnorms))
            mc_g_se = float(np.std(gnorms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        else:
            mc_v = mc_v_se = mc_g = mc_g_se = np.nan
        return (idx, s_val, s_gn, mc_v, mc_v_se, mc_g, mc_g_se)

    rows = _map_ordered(one, list(enumerate(U_seq)), threads)
    write_csv(os.path.join(out, "approx_compare.csv"), APPROX_HEADER, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------

ROBUST_HEADER = (
    "theta",
    "sigma_test",
    "mean_test_cost",
    "stderr",
    "n_simulations",
    "n_diverged",
)


def cmd_robustness(config: ExperimentConfig, out: str, threads: int = 1) -> int:
    system = config.build_system()
    costs = config.build_costs()
    mc = config.raw["mc"]
    thetas = [float(t) for t in config.raw["risk"].get("theta_list", [])]
    if not thetas:
        thetas = [0.0, float(config.raw["risk"]["theta"])]
    algo = config.raw["solver"]["algorithm"]
    runner = run_ileqg if algo == "ileqg" else run_regileqg

    def train(theta: float):
        trace = runner(system, costs, config.solver_config(theta))
        vals = trace.surrogate_series()
        finite = np.where(np.isfinite(vals), vals, np.inf)
        if not np.isfinite(finite.min()):
            return None
        best = int(np.argmin(finite))
        return trace.records[best].controls, trace

    trained = _map_ordered(train, thetas, threads)
    rows = []
    summary: dict = {"experiment": "robustness", "seed": config.seed, "controllers": {}}
    any_trained = False
    for theta, item in zip(thetas, trained):
        key = "%g" % theta
        if item is None:
            summary["controllers"][key] = {"trained": False}
            continue
        any_trained = True
        controls, trace = item
        summary["controllers"][key] = {
            "trained": True,
            "termination": trace.termination,
            "tuned_gamma": trace.tuned_gamma,
            "best_surrogate": float(np.nanmin(trace.surrogate_series())),
        }
        for j, s_test in enumerate(mc["sigma_test"]):
            seed = (config.seed * 1_000_003 + 15_485_863 * j + int(theta * 1e6)) % 2**63
            res = test_cost(
                system,
                costs,
                controls,
                float(s_test),
                int(mc["test_simulations"]),
                seed,
                sigma0=config.sigma0,
                scale_by_sigma0=bool(config.raw["risk"].get("test_scale_by_sigma0", True)),
            )
            rows.append(
                (theta, s_test, res.mean, res.stderr, res.n_simulations, res.n_diverged)
            )
    write_csv(os.path.join(out, "robustness.csv"), ROBUST_HEADER, rows)
    write_json(os.path.join(out, "summary.json"), summary)
    return EXIT_OK if any_trained else EXIT_EARLY_STOP


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(seed: int = 0, sabotage: Optional[str] = None) -> int:
    from .validate import run_checks

    results = run_checks(seed=seed, sabotage=sabotage)
    for res in results:
        print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_EARLY_STOP


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ileqg", description="risk-sensitive trajectory optimization experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="path to a YAML experiment config")
        p.add_argument("--preset", help="named preset (see ileqg.presets)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (env ILEQG_THREADS overrides)")
        if needs_out:
            p.add_argument("--out", default="results", help="output directory")

    p = sub.add_parser("solve", help="run the iterative solvers, write traces")
    common(p)
    p.add_argument("--timings", action="store_true",
                   help="record wall-clock times (makes outputs nondeterministic)")

    p = sub.add_parser("approx-compare",
                       help="surrogate vs Monte-Carlo along saved iterates")
    common(p)
    p.add_argument("--iterates", default=None,
                   help="npy file of commands (default: OUT/regileqg_iterates.npy)")

    p = sub.add_parser("robustness", help="train per risk weight, sweep test cost")
    common(p)

    p = sub.add_parser("validate", help="run the cross-solver equivalence checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sabotage", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(seed=args.seed, sabotage=args.sabotage)
    try:
        config = load_config(args.config, args.preset, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    threads = _thread_count(args.threads)
    if args.command == "solve":
        return cmd_solve(config, args.out, threads, timings=args.timings)
    if args.command == "approx-compare":
        iterates = args.iterates or os.path.join(args.out, "regileqg_iterates.npy")
        return cmd_approx_compare(config, args.out, iterates, threads)
    if args.command == "robustness":
        return cmd_robustness(config, args.out, threads)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
