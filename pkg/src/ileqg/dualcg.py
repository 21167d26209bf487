"""Dual path for final-state costs, solved matrix-free by conjugate gradients.

When the state cost touches only x_tau with a strictly convex Hessian, the
regularized subproblem collapses to a d-dimensional dual problem

    min_z  qconj_h(z) + qconj_g(-Au' z) - (theta sigma^2 / 2) |Aw' z|^2,

where Au, Aw are the command/noise Jacobians of the final state and qconj_*
the convex conjugates of the quadratic cost models (control conjugate taken
with the proximal weight included).  Every quantity involving Au or Aw is
obtained from forward/reverse sweeps through the stored stage Jacobians;
one reverse sweep produces both Au'z and Aw'z, one forward sweep pushes a
pair of stage vectors to the final state, and the instrumentation counts
each sweep as one oracle call.  The dual is convex iff

    H_tau^-1 - theta sigma^2 Aw Aw'  is positive definite,

checked column-by-column through paired gradient evaluations (4d calls)
before the conjugate-gradient solve.  The primal step is recovered as
u+ = u + grad qconj_g(-Au' z*), one extra sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .systems import Array, DynamicalSystem, LinearizedModel, StageCosts, linearize, stage_view

#: same relative positive-definiteness margin as the DP feasibility check
PD_MARGIN = 1e-10


class NegativeCurvature(RuntimeError):
    """The conjugate-gradient operator is not positive definite."""


class JacobianOracle:
    """Jacobian-product sweeps through stored stage Jacobians, with a call counter.

    Adjoint consistency holds by construction: <z, jvp_u(v)> == <vjp_u(z), v>.
    A combined reverse sweep yields both the control- and noise-side products
    for one call; the combined forward sweep likewise.
    """

    def __init__(self, model: LinearizedModel):
        self.model = model
        self.calls = 0

    def reverse(self, z: Array) -> tuple[Array, Array]:
        """One call: (d x_tau/d u)' z and (d x_tau/d w)' z as stage arrays."""
        self.calls += 1
        m = self.model
        tau = m.horizon
        out_u = np.empty((tau, m.dims[1]))
        out_w = np.empty((tau, m.dims[2]))
        lam = np.asarray(z, dtype=float)
        for t in range(tau - 1, -1, -1):
            out_u[t] = m.B[t].T @ lam
            out_w[t] = m.C[t].T @ lam
            if t > 0:
                lam = m.A[t].T @ lam
        return out_u, out_w

    def forward(self, a: Optional[Array], b: Optional[Array]) -> Array:
        """One call: final-state response to control stages a and noise stages b."""
        self.calls += 1
        m = self.model
        tau, d = m.horizon, m.dims[0]
        y = np.zeros(d)
        for t in range(tau):
            y = m.A[t] @ y if t > 0 else y
            if a is not None:
                y = y + m.B[t] @ a[t]
            if b is not None:
                y = y + m.C[t] @ b[t]
        return y

    # Single-sided products (each still one sweep).
    def jvp_u(self, v: Array) -> Array:
        return self.forward(stage_view(v, self.model.dims[1]), None)

    def jvp_w(self, w: Array) -> Array:
        return self.forward(None, stage_view(w, self.model.dims[2]))

    def vjp_u(self, z: Array) -> Array:
        return self.reverse(z)[0]

    def vjp_w(self, z: Array) -> Array:
        return self.reverse(z)[1]


@dataclass(frozen=True)
class ConjGradResult:
    x: Array
    iterations: int
    residual_norm: float
    converged: bool


def conjgrad(
    matvec: Callable[[Array], Array],
    rhs: Array,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> ConjGradResult:
    """Conjugate gradients for A x = rhs given only the matvec.

    Defaults: tol = 1e-10 * |rhs|, max_iter = 2 * dim (finite-termination
    safety margin).  Raises :class:`NegativeCurvature` when a search
    direction has nonpositive curvature, which upstream means the dual
    problem is not convex.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.size
    if tol is None:
        tol = 1e-10 * np.linalg.norm(b)
    if max_iter is None:
        max_iter = 2 * n
    x = np.zeros(n)
    r = b.copy()
    if np.linalg.norm(r) <= tol:
        return ConjGradResult(x, 0, float(np.linalg.norm(r)), True)
    p = r.copy()
    rs = r @ r
    for it in range(1, max_iter + 1):
        Ap = matvec(p)
        curv = p @ Ap
        if curv <= 0:
            raise NegativeCurvature(f"curvature {curv:.3e} at iteration {it}")
        alpha = rs / curv
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = r @ r
        if np.sqrt(rs_new) <= tol:
            return ConjGradResult(x, it, float(np.sqrt(rs_new)), True)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return ConjGradResult(x, max_iter, float(np.sqrt(rs)), False)


@dataclass(frozen=True)
class DualStepResult:
    feasible: bool
    controls: Optional[Array] = None  # (tau, p)
    z_opt: Optional[Array] = None
    oracle_calls: int = 0
    cg_iterations: int = 0


def dual_solve_final_state(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    gamma: float,
    *,
    model: LinearizedModel | None = None,
) -> DualStepResult:
    """Regularized step for final-state costs via the dual and conjugate gradients.

    Requires ``costs.final_state_only`` with a strictly convex final Hessian.
    gamma may be +inf for the unregularized step.
    """
    if not costs.final_state_only:
        raise ValueError("dual path requires a final-state-only cost")
    if gamma <= 0:
        raise ValueError("step size must be positive")
    gamma_inv = 0.0 if np.isinf(gamma) else 1.0 / gamma
    if model is None:
        model = linearize(system, costs, controls)
    U = stage_view(controls, system.control_dim)
    tau = model.horizon
    d = model.dims[0]
    s = theta * sigma**2

    Hf = model.H[-1]
    try:
        np.linalg.cholesky(Hf)
    except np.linalg.LinAlgError:
        raise ValueError("final-state Hessian must be positive definite") from None
    Hf_inv = np.linalg.inv(Hf)
    hf = model.h[-1]
    Greg = model.G + gamma_inv * np.eye(model.dims[1])

    oracle = JacobianOracle(model)

    def conj_g_grad(zeta: Array) -> Array:
        # grad of the conjugate of v -> v'(G + gamma^-1 I)v/2 + g'v, stagewise
        out = np.empty_like(zeta)
        for t in range(tau):
            out[t] = np.linalg.solve(Greg[t], zeta[t] - model.g[t])
        return out

    def grad_r(z: Array) -> Array:
        # r(z) = qconj_h(z) - (s/2)|Aw' z|^2
        _, vw = oracle.reverse(z)
        return Hf_inv @ (z - hf) - s * oracle.forward(None, vw)

    # Feasibility: Hessian of r assembled column by column from paired
    # gradient evaluations (exact for a quadratic), 4d oracle calls.
    Hr = np.empty((d, d))
    eye = np.eye(d)
    for j in range(d):
        Hr[:, j] = grad_r(eye[j]) - grad_r(np.zeros(d))
    Hr = 0.5 * (Hr + Hr.T)
    scale = max(1.0, float(np.abs(np.diag(Hr)).max()))
    try:
        np.linalg.cholesky(Hr - PD_MARGIN * scale * eye)
    except np.linalg.LinAlgError:
        return DualStepResult(feasible=False, oracle_calls=oracle.calls)

    def grad_f(z: Array) -> Array:
        vu, vw = oracle.reverse(z)
        push = oracle.forward(conj_g_grad(-vu), s * vw)
        return Hf_inv @ (z - hf) - push

    g0 = grad_f(np.zeros(d))
    matvec = lambda v: grad_f(v) - g0

    try:
        cg = conjgrad(matvec, -g0)
    except NegativeCurvature:
        return DualStepResult(feasible=False, oracle_calls=oracle.calls)
    z_opt = cg.x

    vu = oracle.vjp_u(z_opt)  # the single primal-mapping call
    V = conj_g_grad(-vu)
    return DualStepResult(
        feasible=True,
        controls=U + V,
        z_opt=z_opt,
        oracle_calls=oracle.calls,
        cg_iterations=cg.iterations,
    )
