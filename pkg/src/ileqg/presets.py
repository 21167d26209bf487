"""Named experiment configurations for the bundled benchmark studies.

Each preset is a full config tree (see :mod:`ileqg.cli` for the schema).
Values marked "assumed" fill gaps the benchmark description leaves open:
the start states, the reaching target for the arm, and the noise level of
the training runs.  Noise levels were chosen so the step-size grid search
reproduces the reported tuned steps (16 / 0.5 on the pendulum, 8 on the
arm); at sigma = 1 the risk weight theta = 4 puts the zero-command start
outside the feasible region and no constant-step run gets off the ground.
``sigma0`` stays at the stated test-cost normalization.
"""

from __future__ import annotations

import copy
import math

PRESETS: dict[str, dict] = {
    # Convergence study: RegILEQG vs ILEQG on the swing-up task.
    "pendulum-fig4": {
        "schema": 1,
        "system": {
            "name": "pendulum",
            "mass": 1.0,
            "length": 1.0,
            "friction": 0.01,
            "gravity": 9.81,
            "start": [0.0, 0.0],  # assumed: hanging down at rest
        },
        "costs": {
            "lam1": 0.1,
            "lam2": 0.01,
            "horizon_time": 5.0,
            "horizon_steps": 100,
            "scale_control_by_dt": True,
        },
        "risk": {
            "theta": 4.0,
            "theta_list": [0.0, 4.0],
            "sigma": 0.04,  # assumed, see module docstring
            "sigma0": 1.0,
            "test_scale_by_sigma0": True,
        },
        "solver": {
            "algorithm": "both",
            "step": {"policy": "grid", "exponents": [-5, 10], "burn_in": 5},
            "iterations": 100,
            "tolerance": 0.0,
            "mc_samples": 100,
        },
        "mc": {
            "samples": 100,
            "runs": 10,
            "test_simulations": 100,
            "sigma_test": [0.0, 0.5, 1.0, 2.0, 4.0],
            "per_iteration_gradients": True,
        },
        "seed": 0,
        "paper_tuned_steps": {"regileqg": 16.0, "ileqg": 0.5},
    },
    # Robustness study: expected-cost baseline vs risk-sensitive controller
    # under an impulse disturbance.
    "pendulum-robust": {
        "schema": 1,
        "system": {
            "name": "pendulum",
            "mass": 1.0,
            "length": 1.0,
            "friction": 0.01,
            "gravity": 9.81,
            "start": [0.0, 0.0],
        },
        "costs": {
            "lam1": 10.0,
            "lam2": 1e-3,
            "horizon_time": 5.0,
            "horizon_steps": 100,
            "scale_control_by_dt": True,
        },
        "risk": {
            "theta": 0.5,
            "theta_list": [0.0, 0.5],
            "sigma": 0.1,  # assumed, see module docstring
            "sigma0": 1.0,
            "test_scale_by_sigma0": True,
        },
        "solver": {
            "algorithm": "regileqg",
            "step": {"policy": "grid", "exponents": [-5, 5], "burn_in": 10},
            "iterations": 50,
            "tolerance": 0.0,
            "mc_samples": 100,
        },
        "mc": {
            "samples": 100,
            "runs": 10,
            "test_simulations": 100,
            "sigma_test": [0.0, 0.5, 1.0, 2.0, 4.0],
            "per_iteration_gradients": False,
        },
        "seed": 0,
    },
    # Two-link arm convergence study (same cost weights as the pendulum one).
    "arm-conv": {
        "schema": 1,
        "system": {
            "name": "two-link-arm",
            "start": [0.0, 0.0, 0.0, 0.0],  # assumed
            "target": [math.pi / 4, math.pi / 4],  # assumed reaching target
        },
        "costs": {
            "lam1": 0.1,
            "lam2": 0.01,
            "horizon_time": 5.0,
            "horizon_steps": 100,
            "scale_control_by_dt": True,
        },
        "risk": {
            "theta": 4.0,
            "theta_list": [0.0, 4.0],
            "sigma": "inertia",  # 1/|M(theta_start)^-1|, the arm convention
            "sigma0": "inertia",
            "test_scale_by_sigma0": True,
        },
        "solver": {
            "algorithm": "both",
            "step": {"policy": "grid", "exponents": [-5, 10], "burn_in": 5},
            "iterations": 100,
            "tolerance": 0.0,
            "mc_samples": 100,
        },
        "mc": {
            "samples": 100,
            "runs": 10,
            "test_simulations": 100,
            "sigma_test": [0.0, 0.5, 1.0, 2.0, 4.0],
            "per_iteration_gradients": False,
        },
        "seed": 0,
        "paper_tuned_steps": {"regileqg": 8.0, "ileqg": 0.5},
    },
    "arm-robust": {
        "schema": 1,
        "system": {
            "name": "two-link-arm",
            "start": [0.0, 0.0, 0.0, 0.0],
            "target": [math.pi / 4, math.pi / 4],
        },
        "costs": {
            "lam1": 1e-2,
            "lam2": 1e-3,
            "horizon_time": 5.0,
            "horizon_steps": 100,
            "scale_control_by_dt": True,
        },
        "risk": {
            "theta": 4.0,
            "theta_list": [0.0, 4.0],
            "sigma": "inertia",
            "sigma0": "inertia",
            "test_scale_by_sigma0": True,
        },
        "solver": {
            "algorithm": "regileqg",
            "step": {"policy": "grid", "exponents": [-5, 5], "burn_in": 10},
            "iterations": 50,
            "tolerance": 0.0,
            "mc_samples": 100,
        },
        "mc": {
            "samples": 100,
            "runs": 10,
            "test_simulations": 100,
            "sigma_test": [0.0, 0.5, 1.0, 2.0, 4.0],
            "per_iteration_gradients": False,
        },
        "seed": 0,
    },
}


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r}; available: {known}")
    return copy.deepcopy(PRESETS[name])
