"""Monte-Carlo estimation of the exact risk-sensitive cost and its gradient,
plus the impulse-disturbance test cost used to score controller robustness.

Randomness contract: sample i draws from its own Philox stream keyed by
(seed, i).  Philox is counter based, so streams are reproducible across
platforms and independent of how samples are scheduled; estimates reduce in
fixed sample order.  Running the same (seed, N) twice gives identical bytes,
and a parallel evaluator that honors the per-sample keys would too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AllSamplesDiverged
from .systems import (
    Array,
    DynamicalSystem,
    StageCosts,
    flat,
    rollout_batch,
    stage_view,
)

#: below this risk weight the estimators switch to the plain-mean limit
THETA_MEAN_LIMIT = 1e-10


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Generator for sample ``index`` of the run keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def noise_panel(seed: int, n_samples: int, tau: int, q: int, sigma: float) -> Array:
    """Draw the (N, tau, q) noise panel, one Philox stream per sample.

    Resets one bit generator's key per sample instead of constructing N
    generators; the draws are identical to ``sample_stream(seed, i)``.
    """
    bg = np.random.Philox(key=[0, 0])
    gen = np.random.Generator(bg)
    state = bg.state
    key = state["state"]["key"]
    counter = state["state"]["counter"]
    W = np.empty((n_samples, tau, q))
    for i in range(n_samples):
        key[0] = seed
        key[1] = i
        counter[:] = 0
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bg.state = state
        W[i] = gen.standard_normal((tau, q))
    return sigma * W


@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float
    n_samples: int
    seed: int
    shift: float  # log-sum-exp shift used (max of theta * per-sample costs)
    n_runs: int = 1


def _risk_from_costs(h: Array, theta: float) -> tuple[float, float, float]:
    """(estimate, stderr, shift) of log E exp(theta h) / theta from samples."""
    n = h.size
    if theta < THETA_MEAN_LIMIT:
        # theta -> 0 limit: the expected cost
        se = float(h.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return float(h.mean()), se, 0.0
    shift = float(np.max(theta * h))
    vals = np.exp(theta * h - shift)
    m = float(vals.mean())
    est = (shift + np.log(m)) / theta
    # delta method on the exp-scale mean; invariant to the shift
    se = float(vals.std(ddof=1) / (np.sqrt(n) * m * theta)) if n > 1 else 0.0
    return est, se, shift


def mc_risk_value(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    n_samples: int,
    seed: int,
    *,
    runs: int = 1,
) -> McEstimate:
    """Estimate log E exp(theta h(x(u + w)))/theta + g(u) from N rollouts.

    Samples whose rollout leaves the finite range push the estimate to +inf;
    if every sample does, :class:`AllSamplesDiverged` is raised.  With
    ``runs > 1`` the estimator is repeated on independent seeds and the
    spread across runs replaces the single-run delta-method error.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if runs > 1:
        parts = [
            mc_risk_value(
                system, costs, controls, theta, sigma,
                n_samples, seed + 7919 * r,
            )
            for r in range(runs)
        ]
        vals = np.array([p.value for p in parts])
        spread = float(vals.std(ddof=1) / np.sqrt(runs))
        return McEstimate(float(vals.mean()), spread, n_samples, seed,
                          parts[0].shift, n_runs=runs)

    U = stage_view(controls, system.control_dim)
    W = noise_panel(seed, n_samples, system.horizon, system.noise_dim, sigma)
    X = rollout_batch(system, U, W)
    with np.errstate(all="ignore"):
        h = np.asarray(costs.state_total(X), dtype=float)
    bad = ~np.isfinite(h)
    if bad.all():
        raise AllSamplesDiverged(f"all {n_samples} rollouts diverged")
    g = costs.control_total(U)
    if bad.any():
        return McEstimate(np.inf, np.inf, n_samples, seed, np.inf)
    est, se, shift = _risk_from_costs(h, theta)
    return McEstimate(est + g, se, n_samples, seed, shift)


def mc_risk_gradient(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    n_samples: int,
    seed: int,
) -> tuple[Array, Array]:
    """Estimate the gradient of the risk cost together with per-coordinate SEs.

    The gradient of the log-partition term is the exp(theta h)-weighted mean
    of the per-sample cost gradients, each obtained by an adjoint sweep along
    that sample's noisy trajectory; the control-cost gradient adds on top.
    Returns flat arrays of length tau*p.
    """
    U = stage_view(controls, system.control_dim)
    tau, d, p = system.horizon, system.state_dim, system.control_dim
    W = noise_panel(seed, n_samples, tau, system.noise_dim, sigma)
    X = rollout_batch(system, U, W)
    with np.errstate(all="ignore"):
        h = np.asarray(costs.state_total(X), dtype=float)
    if (~np.isfinite(h)).all():
        raise AllSamplesDiverged(f"all {n_samples} rollouts diverged")
    keep = np.isfinite(h)
    h = h[keep]
    X = X[keep]
    W = W[keep]
    n_eff = h.size

    Q = np.empty((n_eff, tau, p))
    zero_w = np.zeros(system.noise_dim)
    for i in range(n_eff):
        Ui = U + W[i]
        xi = np.stack([costs.state_grad(X[i, t], t) for t in range(tau)])
        mu = xi[tau - 1]
        x_prev = X[i, tau - 2] if tau >= 2 else system.x0
        Q[i, tau - 1] = system.jacobian_u(x_prev, Ui[tau - 1], zero_w, tau - 1).T @ mu
        for t in range(tau - 2, -1, -1):
            x_t = X[i, t]
            x_prev = X[i, t - 1] if t >= 1 else system.x0
            A_next = system.jacobian_x(x_t, Ui[t + 1], zero_w, t + 1)
            mu = xi[t] + A_next.T @ mu
            Q[i, t] = system.jacobian_u(x_prev, Ui[t], zero_w, t).T @ mu
    Qf = Q.reshape(n_eff, tau * p)

    if theta < THETA_MEAN_LIMIT:
        grad_eta = Qf.mean(axis=0)
        se = Qf.std(axis=0, ddof=1) / np.sqrt(n_eff) if n_eff > 1 else np.zeros(tau * p)
    else:
        shift = np.max(theta * h)
        v = np.exp(theta * h - shift)
        weights = v / v.sum()
        grad_eta = weights @ Qf
        infl = v[:, None] * (Qf - grad_eta)
        se = (
            infl.std(axis=0, ddof=1) / (np.sqrt(n_eff) * v.mean())
            if n_eff > 1
            else np.zeros(tau * p)
        )
    grad = grad_eta + flat(costs.control_grad_stacked(U))
    return grad, se


@dataclass(frozen=True)
class TestCostResult:
    mean: float
    stderr: float
    n_simulations: int
    n_diverged: int
    sigma_test: float

    @property
    def any_diverged(self) -> bool:
        return self.n_diverged > 0


def test_cost(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    sigma_test: float,
    n_simulations: int,
    seed: int,
    *,
    sigma0: float = 1.0,
    scale_by_sigma0: bool = True,
    kick_stage: Optional[int] = None,
) -> TestCostResult:
    """Mean state cost under a one-shot random kick on the control channel.

    Each simulation perturbs one stage t_w (uniform over stages unless
    ``kick_stage`` pins it) by a kick of amplitude rho drawn with standard
    deviation sigma_test/sigma0 per control coordinate (plain sigma_test
    with ``scale_by_sigma0=False``, the main-text convention).  Diverged
    simulations are excluded from the mean and counted.
    """
    if n_simulations < 1:
        raise ValueError("need at least one simulation")
    if not system.additive_noise:
        raise ValueError("the kick enters the control channel: system must be additive")
    U = stage_view(controls, system.control_dim)
    tau, p = system.horizon, system.control_dim
    std = sigma_test / sigma0 if scale_by_sigma0 else sigma_test

    W = np.zeros((n_simulations, tau, p))
    for i in range(n_simulations):
        rng = sample_stream(seed, i)
        t_w = int(rng.integers(0, tau)) if kick_stage is None else int(kick_stage)
        W[i, t_w] = std * rng.standard_normal(p)
    X = rollout_batch(system, U, W)
    with np.errstate(all="ignore"):
        h = np.asarray(costs.state_total(X), dtype=float)
        good = np.isfinite(h)
        n_div = int((~good).sum())
        if not good.any():
            raise AllSamplesDiverged(f"all {n_simulations} kicked rollouts diverged")
        vals = h[good]
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        return TestCostResult(float(vals.mean()), se, n_simulations, n_div, sigma_test)
