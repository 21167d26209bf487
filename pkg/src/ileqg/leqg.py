"""Exact solver for the linear quadratic exponential Gaussian subproblem.

The subproblem is the min-max quadratic game

    min_v sup_w  sum_t [ y_t'H_t y_t/2 + h_t'y_t ]
               + sum_t [ v_t'(G_t + gamma^-1 I)v_t/2 + g_t'v_t ]
               - sum_t |w_t|^2 / (2 theta sigma^2)
    s.t. y_{t+1} = A_t y_t + B_t v_t + C_t w_t,

solved stage-wise by a backward Riccati-type recursion.  The adversary's
quadratic must stay strongly concave: at every stage
(theta sigma^2)^-1 I - C_t'P_{t+1}C_t must be positive definite, otherwise
the subproblem has no finite value and the pass reports infeasibility (the
equality case counts as infeasible).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from ._backend import numba_enabled
from .errors import IllConditionedModel
from .systems import Array, LinearizedModel

#: below this value of theta*sigma^2 the adversary is dropped and the pass
#: reduces to the standard LQR recursion
LQR_THRESHOLD = 1e-14


@dataclass(frozen=True)
class CostToGo:
    """Quadratic cost-to-go y'P_t y/2 + p_t'y + constant, stages 0..tau."""

    P: Array  # (tau+1, d, d)
    p: Array  # (tau+1, d)
    constant: float

    def value(self, y: Array) -> float:
        y = np.asarray(y, dtype=float)
        return float(0.5 * y @ self.P[0] @ y + self.p[0] @ y + self.constant)


@dataclass(frozen=True)
class PolicyGains:
    """Stage policies v_t = K_t y + k_t and w_t = Lx_t y + Lu_t v + l_t."""

    K: Array  # (tau, p, d)
    k: Array  # (tau, p)
    Lx: Array  # (tau, q, d)
    Lu: Array  # (tau, q, p)
    l: Array  # (tau, q)


@dataclass(frozen=True)
class BackwardPassResult:
    feasible: bool
    failed_stage: Optional[int]
    cost_to_go: Optional[CostToGo]
    gains: Optional[PolicyGains]


@dataclass(frozen=True)
class LeqgSolution:
    """Saddle point of the subproblem, or the stage at which it broke down."""

    feasible: bool
    failed_stage: Optional[int] = None
    v_opt: Optional[Array] = None  # (tau, p)
    w_opt: Optional[Array] = None  # (tau, q)
    trajectory: Optional[Array] = None  # (tau, d)
    gains: Optional[PolicyGains] = None
    cost_to_go: Optional[CostToGo] = None
    value: Optional[float] = None  # c_0 at the requested start state


def _prepare(model: LinearizedModel):
    return (
        np.ascontiguousarray(model.A),
        np.ascontiguousarray(model.B),
        np.ascontiguousarray(model.C),
        np.ascontiguousarray(model.H),
        np.ascontiguousarray(model.h),
        np.ascontiguousarray(model.G),
        np.ascontiguousarray(model.g),
    )


def backward_pass(
    model: LinearizedModel,
    theta: float,
    sigma: float,
    gamma_inv: float = 0.0,
) -> BackwardPassResult:
    """Backward recursion; returns cost-to-go and gains, or the failing stage.

    ``gamma_inv`` adds a proximal weight to every control Hessian, realizing
    the regularized step.  theta = 0 (or theta*sigma^2 below
    ``LQR_THRESHOLD``) dispatches to the pure LQR branch.
    """
    if theta < 0:
        raise ValueError("risk parameter must be nonnegative")
    if sigma <= 0:
        raise ValueError("noise level must be positive")
    if gamma_inv < 0:
        raise ValueError("proximal weight must be nonnegative")
    s = theta * sigma**2
    lqr_mode = s <= LQR_THRESHOLD
    args = _prepare(model) + (s, gamma_inv, lqr_mode)
    kernel = _kernels.leqg_backward_nb if numba_enabled() else _kernels.leqg_backward_np
    P, p, K, k, Lx, Lu, l, kappa, status, stage = kernel(*args)
    if status == 1:
        return BackwardPassResult(False, int(stage), None, None)
    if status == 2:
        raise IllConditionedModel(int(stage), "control block G + B'PB")
    return BackwardPassResult(
        True,
        None,
        CostToGo(P=P, p=p, constant=float(kappa)),
        PolicyGains(K=K, k=k, Lx=Lx, Lu=Lu, l=l),
    )


def forward_rollout(
    gains: PolicyGains, model: LinearizedModel, y0: Optional[Array] = None
) -> tuple[Array, Array, Array]:
    """Roll out the saddle policies from ``y0`` (zero by default)."""
    d = model.dims[0]
    y0 = np.zeros(d) if y0 is None else np.asarray(y0, dtype=float)
    kernel = _kernels.leqg_forward_nb if numba_enabled() else _kernels.leqg_forward_np
    V, W, Y = kernel(
        np.ascontiguousarray(model.A),
        np.ascontiguousarray(model.B),
        np.ascontiguousarray(model.C),
        gains.K,
        gains.k,
        gains.Lx,
        gains.Lu,
        gains.l,
        y0,
    )
    return V, W, Y


def solve_leqg(
    model: LinearizedModel,
    theta: float,
    sigma: float,
    gamma_inv: float = 0.0,
    y0: Optional[Array] = None,
) -> LeqgSolution:
    """Backward pass followed by the saddle-point rollout.

    ``value`` is the subproblem's min-max value c_0(y0) for the quadratic
    stage costs as given (cost constants of the original objective are the
    caller's bookkeeping).
    """
    bp = backward_pass(model, theta, sigma, gamma_inv)
    if not bp.feasible:
        return LeqgSolution(feasible=False, failed_stage=bp.failed_stage)
    V, W, Y = forward_rollout(bp.gains, model, y0)
    start = np.zeros(model.dims[0]) if y0 is None else np.asarray(y0, dtype=float)
    return LeqgSolution(
        feasible=True,
        v_opt=V,
        w_opt=W,
        trajectory=Y,
        gains=bp.gains,
        cost_to_go=bp.cost_to_go,
        value=bp.cost_to_go.value(start),
    )


def feasibility_margin(model: LinearizedModel, theta: float, sigma: float) -> float:
    """Smallest eigenvalue over stages of (theta sigma^2)^-1 I - C_t'P_{t+1}C_t.

    Positive iff :func:`solve_leqg` is feasible (up to the factorization
    margin).  The recursion is continued past a failing stage by skipping the
    adversary inflation there, so the reported margin stays finite and
    meaningful as a diagnostic.  For theta*sigma^2 = 0 the margin is +inf.
    """
    s = theta * sigma**2
    if s <= LQR_THRESHOLD:
        return np.inf
    A, B, C, H, hl, G, gl = _prepare(model)
    tau, d = A.shape[0], A.shape[1]
    q = C.shape[2]
    inv_s = 1.0 / s
    P = H[tau - 1]
    p = hl[tau - 1]
    margin = np.inf
    for t in range(tau - 1, -1, -1):
        E = C[t].T @ P
        M = inv_s * np.eye(q) - E @ C[t]
        M = 0.5 * (M + M.T)
        lam_min = float(np.linalg.eigvalsh(M)[0])
        margin = min(margin, lam_min)
        if lam_min > 0:
            Z = np.linalg.solve(M, E)
            Pt = 0.5 * ((P + E.T @ Z) + (P + E.T @ Z).T)
            pt = p + E.T @ np.linalg.solve(M, C[t].T @ p)
        else:
            Pt, pt = P, p
        W = G[t] + B[t].T @ Pt @ B[t]
        F = B[t].T @ Pt @ A[t]
        Kt = -np.linalg.solve(0.5 * (W + W.T), F)
        kt = -np.linalg.solve(0.5 * (W + W.T), gl[t] + B[t].T @ pt)
        P = A[t].T @ Pt @ A[t] + F.T @ Kt
        p = A[t].T @ (pt + Pt @ (B[t] @ kt))
        if t >= 1:
            P = P + H[t - 1]
            p = p + hl[t - 1]
        P = 0.5 * (P + P.T)
    return margin
