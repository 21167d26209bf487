"""Closed-form surrogate of the risk-sensitive cost and its derivatives.

Around a command u with noiseless trajectory x = traj(u), trajectory Jacobian
X, state-cost Hessian H and gradient h at x, the surrogate objective is the
exact risk cost of the linearized-trajectory Gaussian:

    f(u) = -log det(I - theta sigma^2 X H X') / (2 theta)
           + h(x) + (theta sigma^2 / 2) (Xh)'(I - theta sigma^2 X H X')^-1 (Xh)
           + g(u),

well defined whenever sigma^-2 I - theta X H X' is positive definite.  The
adversarial-noise distribution is the Gaussian with that matrix as precision
and mean w* = theta Sigma X h.  Everything here goes through one Cholesky
factorization of the precision; Sigma itself is never formed.

For non-quadratic convex costs the same formulas apply to the local quadratic
model of h at x (the evaluation records this through ``local_model``).

Dense assemblies (X, XHX') live on this validation path only; the production
step computation in :mod:`ileqg.solver` uses dynamic programming instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RiskConditionError
from .leqg import LQR_THRESHOLD
from .systems import (
    Array,
    DynamicalSystem,
    LinearizedModel,
    StageCosts,
    flat,
    linearize,
    pullback,
    pushforward,
    stage_view,
    trajectory_jacobian,
)

#: relative margin for the positive-definiteness check of the precision
PD_MARGIN = 1e-10


def _chol_with_margin(S: Array, context: str) -> Array:
    """Cholesky factor of S, insisting on a relative positive margin."""
    scale = max(1.0, float(np.abs(np.diag(S)).max()))
    n = S.shape[0]
    try:
        np.linalg.cholesky(S - PD_MARGIN * scale * np.eye(n))
    except np.linalg.LinAlgError:
        raise RiskConditionError(
            f"{context}: sigma^-2 I - theta X H X' is not positive definite "
            "(risk parameter too large for this linearization)"
        ) from None
    return np.linalg.cholesky(S)


@dataclass(frozen=True)
class GaussianApprox:
    """Adversarial-noise Gaussian N(w_mean, Sigma) with Sigma^-1 factorized."""

    w_mean: Array  # (tau*p,)
    precision: Array  # (tau*p, tau*p), sigma^-2 I - theta X H X'
    precision_chol: Array
    X: Array  # (tau*p, tau*d) command Jacobian of the trajectory
    H: Array  # (tau*d, tau*d) block-diagonal state-cost Hessian
    h: Array  # (tau*d,) stacked state-cost gradient
    theta: float
    sigma: float
    model: LinearizedModel
    local_model: bool  # True when built from a non-quadratic cost's local model


@dataclass(frozen=True)
class SurrogateEval:
    """Value of the surrogate objective, split into its four components."""

    value: float
    log_det_term: float
    nominal_state_cost: float
    tilt_term: float
    control_cost: float
    gradient: Array | None = None
    local_model: bool = False

    def model_constant(self) -> float:
        """h(x) + g(u) + log-det term: the pieces the DP subproblem drops."""
        return self.nominal_state_cost + self.control_cost + self.log_det_term


def _block_diag_state(model: LinearizedModel) -> tuple[Array, Array]:
    tau, d = model.H.shape[0], model.H.shape[1]
    Hbar = np.zeros((tau * d, tau * d))
    for i in range(tau):
        Hbar[i * d : (i + 1) * d, i * d : (i + 1) * d] = model.H[i]
    return Hbar, flat(model.h)


def gaussian_approx(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    model: LinearizedModel | None = None,
) -> GaussianApprox:
    """Build the linearized-trajectory noise Gaussian at ``controls``.

    Raises :class:`RiskConditionError` when the precision loses positive
    definiteness, which signals that theta is too large here.
    """
    if not system.additive_noise:
        raise ValueError("the surrogate is defined for additive-noise systems")
    if theta < 0 or sigma <= 0:
        raise ValueError("need theta >= 0 and sigma > 0")
    if model is None:
        model = linearize(system, costs, controls)
    X = trajectory_jacobian(model)
    Hbar, hbar = _block_diag_state(model)
    n = X.shape[0]
    XH = X @ Hbar
    S = sigma**-2 * np.eye(n) - theta * (XH @ X.T)
    S = 0.5 * (S + S.T)
    chol = _chol_with_margin(S, "gaussian approximation")
    if theta * sigma**2 <= LQR_THRESHOLD:
        w_mean = np.zeros(n)
    else:
        w_mean = theta * np.linalg.solve(S, X @ hbar)
    return GaussianApprox(
        w_mean=w_mean,
        precision=S,
        precision_chol=chol,
        X=X,
        H=Hbar,
        h=hbar,
        theta=theta,
        sigma=sigma,
        model=model,
        local_model=not costs.quadratic,
    )


def surrogate_value(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    *,
    with_gradient: bool = False,
    approx: GaussianApprox | None = None,
) -> SurrogateEval:
    """Evaluate the surrogate objective in closed form.

    The log-det and tilt terms share the factorization of the Gaussian's
    precision.  At theta = 0 the evaluation returns the exact limit, the
    expected cost of the linearized trajectory.
    """
    ga = approx if approx is not None else gaussian_approx(
        system, costs, controls, theta, sigma
    )
    model = ga.model
    tau_p = ga.X.shape[0]
    s = theta * sigma**2

    nominal_h = float(costs.state_total(model.x_nominal))
    control_g = costs.control_total(model.u_nominal)
    if s <= LQR_THRESHOLD:
        # lim theta -> 0: -(2theta)^-1 log det(I - theta sigma^2 XHX') ->
        # (sigma^2/2) tr(XHX'), the Gaussian's expected quadratic cost.
        XH = ga.X @ ga.H
        log_det_term = 0.5 * sigma**2 * float(np.einsum("ij,ij->", XH, ga.X))
        tilt = 0.0
    else:
        # log det(I - theta sigma^2 XHX') = tau*p*log(sigma^2) + log det S
        logdet = tau_p * np.log(sigma**2) + 2.0 * float(
            np.log(np.diag(ga.precision_chol)).sum()
        )
        log_det_term = -logdet / (2.0 * theta)
        tilt = 0.5 * float(ga.w_mean @ (ga.X @ ga.h))

    grad = None
    if with_gradient:
        grad = _truncated_gradient_from(ga)

    return SurrogateEval(
        value=log_det_term + nominal_h + tilt + control_g,
        log_det_term=log_det_term,
        nominal_state_cost=nominal_h,
        tilt_term=tilt,
        control_cost=control_g,
        gradient=grad,
        local_model=ga.local_model,
    )


def _truncated_gradient_from(ga: GaussianApprox) -> Array:
    model = ga.model
    shifted = ga.h + ga.H @ flat(pushforward(model, ga.w_mean))
    grad_eta = flat(pullback(model, stage_view(shifted, model.dims[0])))
    return grad_eta + flat(model.g)


def truncated_gradient(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    *,
    approx: GaussianApprox | None = None,
) -> Array:
    """Gradient of the surrogate with the trajectory-curvature term dropped.

    Returns grad g(u) + X (h + H X' w*) as a flat vector; this is the
    gradient the regularized step implicitly uses, and it coincides with the
    full surrogate gradient whenever the trajectory map is linear.
    """
    ga = approx if approx is not None else gaussian_approx(
        system, costs, controls, theta, sigma
    )
    return _truncated_gradient_from(ga)


def reg_step_closed_form(
    system: DynamicalSystem,
    costs: StageCosts,
    controls: Array,
    theta: float,
    sigma: float,
    gamma: float,
) -> Array:
    """Direct dense formula for the proximally regularized step.

    u+ = u - (G + gamma^-1 I + XHX' + theta V)^-1 (grad g + trunc. grad eta)
    with V = XHX' (sigma^-2 I - theta XHX')^-1 XHX'.  Dense solve intended
    for moderate tau*p; serves as an independent cross-check of the dynamic
    programming step.
    """
    if gamma <= 0:
        raise ValueError("step size must be positive")
    gamma_inv = 0.0 if np.isinf(gamma) else 1.0 / gamma
    ga = gaussian_approx(system, costs, controls, theta, sigma)
    model = ga.model
    n = ga.X.shape[0]
    XHXt = ga.X @ ga.H @ ga.X.T
    XHXt = 0.5 * (XHXt + XHXt.T)
    V = XHXt @ np.linalg.solve(ga.precision, XHXt)

    p = model.dims[1]
    Gbar = np.zeros((n, n))
    for t in range(model.horizon):
        Gbar[t * p : (t + 1) * p, t * p : (t + 1) * p] = model.G[t]
    step_matrix = Gbar + gamma_inv * np.eye(n) + XHXt + theta * V
    grad = _truncated_gradient_from(ga)
    u_next = flat(model.u_nominal) - np.linalg.solve(
        0.5 * (step_matrix + step_matrix.T), grad
    )
    return stage_view(u_next, p)
