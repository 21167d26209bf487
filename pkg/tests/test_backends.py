"""The numba kernels and the pure-numpy reference path must agree closely;
the env flag and the runtime switch select between them."""

import os
import subprocess
import sys

import numpy as np
import pytest

from ileqg import (
    backend_name,
    linearize,
    pendulum_costs,
    pendulum_system,
    rollout,
    rollout_batch,
    solve_leqg,
    use_backend,
)
from ileqg._backend import HAVE_NUMBA
from ileqg.montecarlo import noise_panel
from ileqg.validate import feasible_theta, random_lq_model

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


@needs_numba
def test_leqg_passes_agree_across_backends(rng):
    for _ in range(10):
        tau = int(rng.integers(2, 8))
        model = random_lq_model(rng, tau, 3, 2, 2)
        theta = feasible_theta(model, 1.0, 0.5)
        with use_backend("numba"):
            a = solve_leqg(model, theta, 1.0, 0.25, y0=model.x0)
        with use_backend("numpy"):
            b = solve_leqg(model, theta, 1.0, 0.25, y0=model.x0)
        assert a.feasible and b.feasible
        scale = max(1.0, np.abs(b.v_opt).max())
        assert np.abs(a.v_opt - b.v_opt).max() < 1e-12 * scale
        assert np.abs(a.w_opt - b.w_opt).max() < 1e-12 * scale
        assert abs(a.value - b.value) < 1e-12 * max(1.0, abs(b.value))


@needs_numba
def test_euler_rollout_and_linearize_agree_across_backends(rng):
    sysm = pendulum_system(delta=0.05, horizon=60)
    costs = pendulum_costs(0.1, 0.01, delta=0.05, horizon=60)
    U = 0.4 * rng.standard_normal((60, 1))
    W = 0.1 * rng.standard_normal((60, 1))
    with use_backend("numba"):
        Xa = rollout(sysm, U, W)
        ma = linearize(sysm, costs, U)
    with use_backend("numpy"):
        Xb = rollout(sysm, U, W)
        mb = linearize(sysm, costs, U)
    assert np.abs(Xa - Xb).max() < 1e-13
    assert np.abs(ma.A - mb.A).max() < 1e-13
    assert np.abs(ma.B - mb.B).max() < 1e-13


@needs_numba
def test_batched_rollout_agrees_across_backends(rng):
    sysm = pendulum_system(delta=0.05, horizon=40)
    U = 0.2 * rng.standard_normal((40, 1))
    Wb = noise_panel(3, 64, 40, 1, 0.2)
    with use_backend("numba"):
        a = rollout_batch(sysm, U, Wb)
    with use_backend("numpy"):
        b = rollout_batch(sysm, U, Wb)
    assert np.abs(a - b).max() < 1e-13


def test_infeasible_stage_agrees_across_backends(rng):
    # far past the boundary: every backend must refuse at the same stage
    model = random_lq_model(rng, 4, 2, 2, 2)
    theta = 20.0 * feasible_theta(model, 1.0, 1.0)
    results = []
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    for name in backends:
        with use_backend(name):
            results.append(solve_leqg(model, theta, 1.0))
    assert all(not r.feasible for r in results)
    stages = {r.failed_stage for r in results}
    assert len(stages) == 1


def test_env_flag_forces_numpy_backend():
    code = "import ileqg; print(ileqg.backend_name())"
    env = dict(os.environ, ILEQG_BACKEND="numpy")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.stdout.strip() == "numpy"
    env_bad = dict(os.environ, ILEQG_BACKEND="nonsense")
    out_bad = subprocess.run(
        [sys.executable, "-c", code], env=env_bad, capture_output=True, text=True
    )
    assert out_bad.returncode != 0


def test_use_backend_restores_previous():
    before = backend_name()
    with use_backend("numpy"):
        assert backend_name() == "numpy"
    assert backend_name() == before
    with pytest.raises(ValueError):
        with use_backend("cuda"):
            pass
