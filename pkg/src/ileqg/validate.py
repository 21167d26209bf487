"""Independent reference implementations and cross-solver equivalence checks.

Everything in this module deliberately avoids the production code paths it
is used to check: the saddle point is computed from one dense KKT solve, the
risk-neutral reference is a Q-function-style Riccati recursion written
separately from the backward pass, and the surrogate reference integrates
the Gaussian expectation by tensorized Gauss-Hermite quadrature.  The
``run_checks`` suite wires these against the production solvers and is what
``ileqg validate`` runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dualcg import dual_solve_final_state
from .leqg import solve_leqg
from .montecarlo import mc_risk_value
from .surrogate import gaussian_approx, reg_step_closed_form, surrogate_value
from .systems import (
    Array,
    DynamicalSystem,
    LinearizedModel,
    StageCosts,
    flat,
    linear_system,
    linearize,
    noise_jacobian,
    stage_view,
    trajectory_jacobian,
)

# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------


def random_lq_model(
    rng: np.random.Generator,
    tau: int,
    d: int,
    p: int,
    q: Optional[int] = None,
    *,
    final_state_only: bool = False,
    additive: bool = False,
) -> LinearizedModel:
    """Random stage matrices with spectrally damped dynamics.

    State-cost Hessians are random PSD, control costs random PD; the linear
    terms are O(1).  With ``additive`` the noise matrix equals the control
    matrix (and q = p).
    """
    if additive:
        q = p
    q = p if q is None else q
    A = rng.standard_normal((tau, d, d))
    for t in range(tau):
        A[t] *= 0.9 / max(1.0, np.abs(np.linalg.eigvals(A[t])).max())
    B = rng.standard_normal((tau, d, p))
    C = B.copy() if additive else rng.standard_normal((tau, d, q))
    H = np.zeros((tau, d, d))
    h = np.zeros((tau, d))
    for t in range(tau):
        if final_state_only and t < tau - 1:
            continue
        F = rng.standard_normal((d, d)) / np.sqrt(d)
        H[t] = F @ F.T
        h[t] = rng.standard_normal(d)
    if final_state_only:
        H[-1] += 0.3 * np.eye(d)  # strictly convex final cost for the dual path
    G = np.zeros((tau, p, p))
    g = rng.standard_normal((tau, p))
    for t in range(tau):
        F = rng.standard_normal((p, p)) / np.sqrt(p)
        G[t] = F @ F.T + 0.5 * np.eye(p)
    return LinearizedModel(
        A=A,
        B=B,
        C=C,
        H=H,
        h=h,
        G=G,
        g=g,
        u_nominal=np.zeros((tau, p)),
        x_nominal=np.zeros((tau, d)),
        x0=np.zeros(d),
    )


def model_as_instance(model: LinearizedModel) -> tuple[DynamicalSystem, StageCosts]:
    """Materialize a model as an actual linear system with quadratic costs."""
    tau, (d, p, q) = model.horizon, model.dims
    system = linear_system(
        model.A, model.B, None if np.array_equal(model.C, model.B) else model.C,
        x0=model.x0, horizon=tau,
    )
    costs = StageCosts.quadratic_stages(
        state_hessians=model.H,
        state_linear=model.h,
        control_hessians=model.G,
        control_linear=model.g,
    )
    return system, costs


def random_linear_instance(
    rng: np.random.Generator, tau: int, d: int, p: int, **kwargs
) -> tuple[DynamicalSystem, StageCosts]:
    return model_as_instance(random_lq_model(rng, tau, d, p, additive=True, **kwargs))


def max_risk_curvature(model: LinearizedModel) -> float:
    """lambda_max of Xw H Xw', the quantity the feasibility condition bounds."""
    Xw = noise_jacobian(model)
    Hbar, _ = _block_state(model)
    M = Xw @ Hbar @ Xw.T
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def feasible_theta(model: LinearizedModel, sigma: float, fraction: float = 0.5) -> float:
    """A risk weight placing the instance strictly inside the feasible region."""
    lam = max_risk_curvature(model)
    if lam <= 0:
        return 1.0
    return fraction / (sigma**2 * lam)


# ---------------------------------------------------------------------------
# Dense saddle-point oracle
# ---------------------------------------------------------------------------


def _block_state(model: LinearizedModel) -> tuple[Array, Array]:
    tau, d = model.H.shape[0], model.H.shape[1]
    Hbar = np.zeros((tau * d, tau * d))
    for i in range(tau):
        Hbar[i * d : (i + 1) * d, i * d : (i + 1) * d] = model.H[i]
    return Hbar, flat(model.h)


def _block_control(model: LinearizedModel, gamma_inv: float) -> tuple[Array, Array]:
    tau, p = model.G.shape[0], model.G.shape[1]
    Gbar = np.zeros((tau * p, tau * p))
    for t in range(tau):
        Gbar[t * p : (t + 1) * p, t * p : (t + 1) * p] = model.G[t] + gamma_inv * np.eye(p)
    return Gbar, flat(model.g)


def free_offset(model: LinearizedModel, y0: Array) -> Array:
    """Stacked response of the homogeneous dynamics to the start state."""
    tau, d = model.horizon, model.dims[0]
    out = np.empty((tau, d))
    z = np.asarray(y0, dtype=float)
    for t in range(tau):
        z = model.A[t] @ z
        out[t] = z
    return flat(out)


@dataclass(frozen=True)
class DenseSaddle:
    feasible: bool
    v: Optional[Array] = None  # flat (tau*p,)
    w: Optional[Array] = None  # flat (tau*q,)
    value: Optional[float] = None
    kkt_matrix: Optional[Array] = None
    kkt_rhs: Optional[Array] = None


def dense_saddle(
    model: LinearizedModel,
    theta: float,
    sigma: float,
    gamma_inv: float = 0.0,
    y0: Optional[Array] = None,
) -> DenseSaddle:
    """Solve the min-max quadratic by one dense KKT system.

    Assembles the trajectory as offset + Xu'v + Xw'w and solves the joint
    stationarity conditions; the adversary block must be negative definite
    for the saddle to exist.
    """
    s = theta * sigma**2
    tau, (d, p, q) = model.horizon, model.dims
    y0 = np.zeros(d) if y0 is None else np.asarray(y0, dtype=float)
    Xu = trajectory_jacobian(model)
    Xw = noise_jacobian(model)
    Hbar, hbar = _block_state(model)
    Gbar, gbar = _block_control(model, gamma_inv)
    off = free_offset(model, y0)

    Auu = Xu @ Hbar @ Xu.T + Gbar
    Auw = Xu @ Hbar @ Xw.T
    Aww = Xw @ Hbar @ Xw.T
    if s > 0:
        Aww = Aww - np.eye(tau * q) / s
        if np.linalg.eigvalsh(0.5 * (Aww + Aww.T))[-1] >= 0:
            return DenseSaddle(feasible=False)
    seed = Hbar @ off + hbar
    rhs = -np.concatenate((Xu @ seed + gbar, Xw @ seed))
    if s == 0:
        sol_v = np.linalg.solve(Auu, rhs[: tau * p])
        sol = np.concatenate((sol_v, np.zeros(tau * q)))
        K = Auu
    else:
        K = np.block([[Auu, Auw], [Auw.T, Aww]])
        sol = np.linalg.solve(K, rhs)
    v, w = sol[: tau * p], sol[tau * p :]
    xbar = off + Xu.T @ v + Xw.T @ w
    value = (
        0.5 * xbar @ Hbar @ xbar
        + hbar @ xbar
        + 0.5 * v @ Gbar @ v
        + gbar @ v
        - (0.5 / s * (w @ w) if s > 0 else 0.0)
    )
    return DenseSaddle(True, v, w, float(value), K, rhs)


# ---------------------------------------------------------------------------
# Risk-neutral reference (independent Riccati recursion, Q-function form)
# ---------------------------------------------------------------------------


def lqr_reference(
    model: LinearizedModel, gamma_inv: float = 0.0, y0: Optional[Array] = None
) -> tuple[Array, Array]:
    """Deterministic LQR solve of the same stage data, written DDP-style.

    Kept separate from the production backward pass on purpose: it is the
    reference the theta -> 0 limit is checked against.
    """
    tau, (d, p, _) = model.horizon, model.dims
    Vxx = model.H[tau - 1]
    Vx = model.h[tau - 1]
    Ks = np.empty((tau, p, d))
    ks = np.empty((tau, p))
    eye_p = np.eye(p)
    for t in range(tau - 1, -1, -1):
        A, B = model.A[t], model.B[t]
        Qx = A.T @ Vx
        Qu = model.g[t] + B.T @ Vx
        Qxx = A.T @ Vxx @ A
        Qux = B.T @ Vxx @ A
        Quu = model.G[t] + gamma_inv * eye_p + B.T @ Vxx @ B
        Ks[t] = -np.linalg.solve(Quu, Qux)
        ks[t] = -np.linalg.solve(Quu, Qu)
        Vx = Qx + Ks[t].T @ Quu @ ks[t] + Ks[t].T @ Qu + Qux.T @ ks[t]
        Vxx = Qxx + Ks[t].T @ Quu @ Ks[t] + Ks[t].T @ Qux + Qux.T @ Ks[t]
        Vxx = 0.5 * (Vxx + Vxx.T)
        if t >= 1:
            Vxx = Vxx + model.H[t - 1]
            Vx = Vx + model.h[t - 1]
    y = np.zeros(d) if y0 is None else np.asarray(y0, dtype=float)
    V = np.empty((tau, p))
    Y = np.empty((tau, d))
    for t in range(tau):
        V[t] = Ks[t] @ y + ks[t]
        y = model.A[t] @ y + model.B[t] @ V[t]
        Y[t] = y
    return V, Y


# ---------------------------------------------------------------------------
# Quadrature reference for the surrogate (tau*p <= 2)
# ---------------------------------------------------------------------------


def surrogate_by_quadrature(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    n_nodes: int = 120,
) -> float:
    """Gauss-Hermite evaluation of the surrogate's Gaussian expectation.

    Integrates exp(theta q_h(x + X'w; x)) against the N(0, sigma^2 I) weight
    over the (at most two-dimensional) noise space and returns the full
    surrogate value including the control cost.
    """
    ga = gaussian_approx(system, costs, controls, theta, sigma)
    n = ga.X.shape[0]
    if n > 2:
        raise ValueError("quadrature reference is limited to tau*p <= 2")
    model = ga.model
    xflat = flat(model.x_nominal)
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / np.sqrt(2.0 * np.pi)

    def integrand(wvec: Array) -> float:
        ybar = ga.X.T @ wvec
        qh = float(ga.h @ ybar + 0.5 * ybar @ ga.H @ ybar)
        return np.exp(theta * qh)

    if n == 1:
        total = sum(
            wgt * integrand(np.array([sigma * x])) for x, wgt in zip(nodes, weights)
        )
    else:
        total = 0.0
        for x1, w1 in zip(nodes, weights):
            for x2, w2 in zip(nodes, weights):
                total += w1 * w2 * integrand(sigma * np.array([x1, x2]))
    h_nominal = float(costs.state_total(model.x_nominal))
    eta = h_nominal + np.log(total) / theta
    return eta + costs.control_total(model.u_nominal)


def model_value(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    deviation: Array,
    theta: float,
    sigma: float,
) -> float:
    """Direct evaluation of the quadratic-Gaussian model m(u + v; u).

    Used as the oracle for the sufficient-decrease bookkeeping, which
    reconstructs the same value from the subproblem's saddle constant.
    """
    ga = gaussian_approx(system, costs, controls, theta, sigma)
    model = ga.model
    v = flat(deviation)
    ybar = ga.X.T @ v
    h_nom = float(costs.state_total(model.x_nominal))
    q_h = h_nom + float(ga.h @ ybar + 0.5 * ybar @ ga.H @ ybar)
    U = model.u_nominal
    Vst = stage_view(v, model.dims[1])
    q_g = costs.control_total(U) + float(flat(model.g) @ v) + 0.5 * float(
        sum(Vst[t] @ model.G[t] @ Vst[t] for t in range(model.horizon))
    )
    ev = surrogate_value(system, costs, controls, theta, sigma, approx=ga)
    if theta * sigma**2 <= 1e-14:
        XH = ga.X @ ga.H
        tilt = 0.0
        logdet_term = ev.log_det_term
    else:
        a = ga.X @ (ga.h + ga.H @ ybar)
        tilt = 0.5 * theta * float(a @ np.linalg.solve(ga.precision, a))
        logdet_term = ev.log_det_term
    return q_h + q_g + logdet_term + tilt


# ---------------------------------------------------------------------------
# The validation suite behind `ileqg validate`
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    tolerance: float
    worst_error: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (
            f"[{flag}] {self.name}: worst error {self.worst_error:.3e}"
            f" (tolerance {self.tolerance:.1e}) {self.detail}"
        )


def run_checks(seed: int = 0, sabotage: Optional[str] = None) -> list[CheckResult]:
    """Cross-solver and oracle equivalence suite.

    ``sabotage`` is a test hook: "dp-step" perturbs the dynamic-programming
    step before comparison so the suite demonstrably detects a broken
    recursion.
    """
    rng = np.random.default_rng(seed)
    results = []
    kick = 1e-3 if sabotage == "dp-step" else 0.0

    # theta -> 0 against the independent risk-neutral recursion
    worst = 0.0
    for _ in range(20):
        model = random_lq_model(rng, tau=int(rng.integers(2, 8)), d=2, p=2)
        sol = solve_leqg(model, theta=1e-15, sigma=1.0)
        V_ref, _ = lqr_reference(model)
        err = np.abs(sol.v_opt + kick - V_ref).max() / max(1.0, np.abs(V_ref).max())
        worst = max(worst, err)
    results.append(CheckResult("theta-zero-vs-lqr", 1e-8, worst, worst <= 1e-8))

    # DP saddle against the dense KKT oracle
    worst_v, worst_c = 0.0, 0.0
    for _ in range(20):
        model = random_lq_model(rng, tau=int(rng.integers(2, 6)), d=2, p=2, q=2)
        sigma = 1.0
        theta = feasible_theta(model, sigma, 0.5)
        sol = solve_leqg(model, theta, sigma, y0=model.x0)
        ref = dense_saddle(model, theta, sigma, y0=model.x0)
        scale = max(1.0, np.abs(ref.v).max())
        worst_v = max(worst_v, np.abs(flat(sol.v_opt) + kick - ref.v).max() / scale)
        worst_c = max(
            worst_c, abs(sol.value - ref.value) / max(1.0, abs(ref.value))
        )
    results.append(
        CheckResult("dp-vs-dense-saddle", 1e-8, max(worst_v, worst_c), max(worst_v, worst_c) <= 1e-8)
    )

    # DP regularized step against the dense closed-form step
    worst = 0.0
    for _ in range(15):
        model = random_lq_model(rng, tau=int(rng.integers(2, 6)), d=2, p=1, additive=True)
        system, costs = model_as_instance(model)
        sigma = 1.0
        theta = feasible_theta(model, sigma, 0.4)
        gamma = 4.0
        u0 = np.zeros((model.horizon, 1))
        sol = solve_leqg(linearize(system, costs, u0), theta, sigma, 1.0 / gamma)
        u_dp = u0 + sol.v_opt + kick
        u_cf = reg_step_closed_form(system, costs, u0, theta, sigma, gamma)
        worst = max(worst, np.abs(u_dp - u_cf).max() / max(1.0, np.abs(u_cf).max()))
    results.append(CheckResult("dp-vs-closed-form-step", 1e-8, worst, worst <= 1e-8))

    # DP step against the dual conjugate-gradient step (final-state costs)
    worst = 0.0
    for _ in range(15):
        model = random_lq_model(
            rng, tau=int(rng.integers(2, 6)), d=2, p=1, additive=True, final_state_only=True
        )
        system, costs = model_as_instance(model)
        sigma = 1.0
        theta = feasible_theta(model, sigma, 0.4)
        gamma = 2.0
        u0 = np.zeros((model.horizon, 1))
        sol = solve_leqg(linearize(system, costs, u0), theta, sigma, 1.0 / gamma)
        u_dp = u0 + sol.v_opt + kick
        dual = dual_solve_final_state(system, costs, u0, theta, sigma, gamma)
        worst = max(
            worst, np.abs(u_dp - dual.controls).max() / max(1.0, np.abs(dual.controls).max())
        )
    results.append(CheckResult("dp-vs-dual-cg", 1e-6, worst, worst <= 1e-6))

    # closed-form surrogate against quadrature (tau*p <= 2) and Monte Carlo
    worst = 0.0
    for _ in range(10):
        model = random_lq_model(rng, tau=2, d=2, p=1, additive=True)
        system, costs = model_as_instance(model)
        sigma = 0.7
        theta = feasible_theta(model, sigma, 0.4)
        u0 = rng.standard_normal((2, 1)) * 0.3
        val = surrogate_value(system, costs, u0, theta, sigma).value + kick
        ref = surrogate_by_quadrature(system, costs, u0, theta, sigma)
        worst = max(worst, abs(val - ref) / max(1.0, abs(ref)))
    results.append(CheckResult("surrogate-vs-quadrature", 1e-8, worst, worst <= 1e-8))

    worst = 0.0
    for _ in range(3):
        model = random_lq_model(rng, tau=4, d=2, p=2, additive=True)
        system, costs = model_as_instance(model)
        sigma = 0.5
        theta = feasible_theta(model, sigma, 0.4)
        u0 = rng.standard_normal((4, 2)) * 0.2
        val = surrogate_value(system, costs, u0, theta, sigma).value + kick
        est = mc_risk_value(system, costs, u0, theta, sigma, 40_000, int(rng.integers(2**31)))
        gap_in_se = abs(val - est.value) / max(est.stderr, 1e-12)
        worst = max(worst, gap_in_se)
    results.append(
        CheckResult(
            "surrogate-vs-mc", 4.0, worst, worst <= 4.0, detail="(error in stderr units)"
        )
    )
    return results
