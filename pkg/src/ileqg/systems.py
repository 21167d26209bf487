"""Discrete-time controlled dynamical systems, stage costs, and linearization.

Conventions used throughout the package:

* a command is an array ``U`` of shape ``(tau, p)`` holding ``u_0 .. u_{tau-1}``
  (flat vectors of length ``tau*p`` are accepted everywhere and reshaped),
* a state trajectory is an array of shape ``(tau, d)`` holding ``x_1 .. x_tau``;
  the initial state lives on the system object,
* state-cost arrays are aligned with trajectory positions, i.e. index ``i``
  refers to the state reached after ``i+1`` steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import numpy.typing as npt

from . import _kernels
from ._backend import numba_enabled
from .errors import TrajectoryDiverged

Array = npt.NDArray[np.float64]


def stage_view(vec: Array, dim: int) -> Array:
    """Reshape a flat stage-stacked vector to ``(tau, dim)``."""
    vec = np.asarray(vec, dtype=float)
    if vec.ndim == 2:
        if vec.shape[1] != dim:
            raise ValueError(f"expected trailing dimension {dim}, got {vec.shape}")
        return vec
    if vec.size % dim != 0:
        raise ValueError(f"length {vec.size} not divisible by stage dimension {dim}")
    return vec.reshape(-1, dim)


def flat(stages: Array) -> Array:
    """Inverse of :func:`stage_view`: stack stages into one flat vector."""
    return np.asarray(stages, dtype=float).reshape(-1)


# ---------------------------------------------------------------------------
# Stage costs
# ---------------------------------------------------------------------------


class StageCosts:
    """Separable stage costs: state terms on x_1..x_tau, control terms on u_0..u_{tau-1}.

    Either quadratic (stacked ``(tau, d, d)`` Hessians etc., the common case)
    or given by value/gradient/Hessian callables for smooth convex costs.
    State-cost Hessians must be positive semidefinite, control-cost Hessians
    positive definite.
    """

    def __init__(
        self,
        horizon: int,
        state_dim: int,
        control_dim: int,
        *,
        state_value: Callable[[Array, int], float],
        state_grad: Callable[[Array, int], Array],
        state_hess: Callable[[Array, int], Array],
        control_value: Callable[[Array, int], float],
        control_grad: Callable[[Array, int], Array],
        control_hess: Callable[[Array, int], Array],
        quadratic: bool,
        final_state_only: bool,
        _quad_data: Optional[dict] = None,
    ):
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.horizon = horizon
        self.state_dim = state_dim
        self.control_dim = control_dim
        self.state_value = state_value
        self.state_grad = state_grad
        self.state_hess = state_hess
        self.control_value = control_value
        self.control_grad = control_grad
        self.control_hess = control_hess
        self.quadratic = quadratic
        self.final_state_only = final_state_only
        self._quad = _quad_data

    @classmethod
    def quadratic_stages(
        cls,
        *,
        state_hessians: Array,
        state_linear: Optional[Array] = None,
        state_constant: Optional[Array] = None,
        control_hessians: Array,
        control_linear: Optional[Array] = None,
        control_constant: Optional[Array] = None,
    ) -> "StageCosts":
        """Build quadratic costs h_t(x) = x'Hx/2 + b'x + c, g_t(u) = u'Gu/2 + r'u + s.

        ``state_hessians`` is ``(tau, d, d)`` aligned with trajectory positions,
        ``control_hessians`` is ``(tau, p, p)``.
        """
        H = np.asarray(state_hessians, dtype=float)
        G = np.asarray(control_hessians, dtype=float)
        tau, d = H.shape[0], H.shape[1]
        p = G.shape[1]
        if G.shape[0] != tau:
            raise ValueError("state and control stages disagree on the horizon")
        b = np.zeros((tau, d)) if state_linear is None else np.asarray(state_linear, float)
        c = np.zeros(tau) if state_constant is None else np.asarray(state_constant, float)
        r = np.zeros((tau, p)) if control_linear is None else np.asarray(control_linear, float)
        s = np.zeros(tau) if control_constant is None else np.asarray(control_constant, float)
        for i in range(tau):
            if not np.allclose(H[i], H[i].T):
                raise ValueError(f"state Hessian {i} is not symmetric")
            if np.linalg.eigvalsh(H[i]).min() < -1e-10 * max(1.0, np.abs(H[i]).max()):
                raise ValueError(f"state Hessian {i} is not positive semidefinite")
            # Positive semidefinite control cost is accepted here; strict
            # positivity of G + gamma^-1 I is enforced where solves need it.
            if np.linalg.eigvalsh(G[i]).min() < -1e-10 * max(1.0, np.abs(G[i]).max()):
                raise ValueError(f"control Hessian {i} is not positive semidefinite")
        final_only = bool(tau == 1 or not np.any(np.abs(H[:-1]).sum(axis=(1, 2)) + np.abs(b[:-1]).sum(axis=1)))
        quad = {"H": H, "b": b, "c": c, "G": G, "r": r, "s": s}
        return cls(
            tau,
            d,
            p,
            state_value=lambda x, i: 0.5 * x @ H[i] @ x + b[i] @ x + c[i],
            state_grad=lambda x, i: H[i] @ x + b[i],
            state_hess=lambda x, i: H[i],
            control_value=lambda u, t: 0.5 * u @ G[t] @ u + r[t] @ u + s[t],
            control_grad=lambda u, t: G[t] @ u + r[t],
            control_hess=lambda u, t: G[t],
            quadratic=True,
            final_state_only=final_only,
            _quad_data=quad,
        )

    @classmethod
    def final_state_quadratic(
        cls,
        *,
        horizon: int,
        final_hessian: Array,
        final_linear: Array,
        final_constant: float,
        control_hessian: Array,
    ) -> "StageCosts":
        """Quadratic cost on the final state only, with a constant control quadratic."""
        Hf = np.asarray(final_hessian, dtype=float)
        d = Hf.shape[0]
        G1 = np.atleast_2d(np.asarray(control_hessian, dtype=float))
        p = G1.shape[0]
        H = np.zeros((horizon, d, d))
        b = np.zeros((horizon, d))
        c = np.zeros(horizon)
        H[-1] = Hf
        b[-1] = np.asarray(final_linear, dtype=float)
        c[-1] = float(final_constant)
        G = np.broadcast_to(G1, (horizon, p, p)).copy()
        return cls.quadratic_stages(
            state_hessians=H, state_linear=b, state_constant=c, control_hessians=G
        )

    # -- whole-trajectory evaluations -------------------------------------

    def state_total(self, X: Array) -> float | Array:
        """h(x_bar) summed over stages; batched over leading axes when quadratic."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            return float(sum(self.state_value(X[i], i) for i in range(self.horizon)))
        if not self.quadratic:
            return np.array([self.state_total(Xi) for Xi in X])
        q = self._quad
        quad_part = 0.5 * np.einsum("...ti,tij,...tj->...", X, q["H"], X)
        lin_part = np.einsum("...ti,ti->...", X, q["b"])
        return quad_part + lin_part + q["c"].sum()

    def control_total(self, U: Array) -> float:
        U = stage_view(U, self.control_dim)
        return float(sum(self.control_value(U[t], t) for t in range(self.horizon)))

    def state_grad_stacked(self, X: Array) -> Array:
        return np.stack([self.state_grad(X[i], i) for i in range(self.horizon)])

    def state_hess_stacked(self, X: Array) -> Array:
        return np.stack([self.state_hess(X[i], i) for i in range(self.horizon)])

    def control_grad_stacked(self, U: Array) -> Array:
        U = stage_view(U, self.control_dim)
        return np.stack([self.control_grad(U[t], t) for t in range(self.horizon)])

    def control_hess_stacked(self, U: Array) -> Array:
        U = stage_view(U, self.control_dim)
        return np.stack([self.control_hess(U[t], t) for t in range(self.horizon)])

    def total(self, X: Array, U: Array) -> float:
        return float(self.state_total(X)) + self.control_total(U)


# ---------------------------------------------------------------------------
# Dynamical systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EulerAccel:
    """Compiled handles for systems built by :func:`euler_discretize`."""

    field: Callable
    field_jac: Optional[Callable]
    params: Array
    n: int
    delta: float


@dataclass(frozen=True)
class DynamicalSystem:
    """A controlled discrete-time system x_{t+1} = step(x_t, u_t, w_t, t).

    ``step`` must broadcast over leading sample axes when ``supports_batch``
    is set.  Jacobian callables may be omitted, in which case central finite
    differences of ``step`` are used (step h = 1e-6 * max(1, |arg|_inf)).
    For additive-noise systems, step(x, u, w) = phi(x, u + w), the noise
    Jacobian coincides with the control Jacobian and q = p.
    """

    state_dim: int
    control_dim: int
    noise_dim: int
    horizon: int
    x0: Array
    step: Callable[[Array, Array, Array, int], Array]
    jac_x: Optional[Callable[[Array, Array, Array, int], Array]] = None
    jac_u: Optional[Callable[[Array, Array, Array, int], Array]] = None
    jac_w: Optional[Callable[[Array, Array, Array, int], Array]] = None
    additive_noise: bool = False
    supports_batch: bool = False
    name: str = "system"
    accel: Optional[EulerAccel] = field(default=None, compare=False)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1 (empty horizons are rejected)")
        if self.additive_noise and self.noise_dim != self.control_dim:
            raise ValueError("additive noise requires q == p")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))

    # Finite-difference fallbacks keep user systems usable with only a step
    # function registered.
    def _fd_jac(self, x, u, w, t, which: str) -> Array:
        args = [np.asarray(x, float), np.asarray(u, float), np.asarray(w, float)]
        idx = {"x": 0, "u": 1, "w": 2}[which]
        base = args[idx]
        h = 1e-6 * max(1.0, np.abs(base).max() if base.size else 1.0)
        cols = []
        for j in range(base.size):
            hi = [a.copy() for a in args]
            lo = [a.copy() for a in args]
            hi[idx][j] += h
            lo[idx][j] -= h
            cols.append((self.step(*hi, t) - self.step(*lo, t)) / (2 * h))
        return np.stack(cols, axis=1)

    def jacobian_x(self, x, u, w, t) -> Array:
        if self.jac_x is not None:
            return np.asarray(self.jac_x(x, u, w, t), dtype=float)
        return self._fd_jac(x, u, w, t, "x")

    def jacobian_u(self, x, u, w, t) -> Array:
        if self.jac_u is not None:
            return np.asarray(self.jac_u(x, u, w, t), dtype=float)
        return self._fd_jac(x, u, w, t, "u")

    def jacobian_w(self, x, u, w, t) -> Array:
        if self.jac_w is not None:
            return np.asarray(self.jac_w(x, u, w, t), dtype=float)
        if self.additive_noise:
            return self.jacobian_u(x, u, w, t)
        return self._fd_jac(x, u, w, t, "w")


@dataclass(frozen=True)
class LinearizedModel:
    """Per-stage matrices of the subproblem built around a nominal command.

    ``A, B, C`` are the dynamics Jacobians along the noiseless trajectory;
    ``H, h`` the state-cost Hessians/gradients at trajectory positions;
    ``G, g`` the control-cost Hessians/gradients.
    """

    A: Array  # (tau, d, d)
    B: Array  # (tau, d, p)
    C: Array  # (tau, d, q)
    H: Array  # (tau, d, d)
    h: Array  # (tau, d)
    G: Array  # (tau, p, p)
    g: Array  # (tau, p)
    u_nominal: Array  # (tau, p)
    x_nominal: Array  # (tau, d)
    x0: Array  # (d,)

    @property
    def horizon(self) -> int:
        return self.A.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.A.shape[1], self.B.shape[2], self.C.shape[2]


# ---------------------------------------------------------------------------
# Rollout and linearization
# ---------------------------------------------------------------------------


def rollout(system: DynamicalSystem, controls: Array, noise: Optional[Array] = None) -> Array:
    """Roll the system forward; returns the trajectory ``(tau, d)`` of x_1..x_tau.

    Raises :class:`TrajectoryDiverged` carrying the first stage whose output
    is not finite.
    """
    U = stage_view(controls, system.control_dim)
    if U.shape[0] != system.horizon:
        raise ValueError(f"expected {system.horizon} control stages, got {U.shape[0]}")
    if noise is None:
        W = np.zeros((system.horizon, system.noise_dim))
    else:
        W = stage_view(noise, system.noise_dim)

    acc = system.accel
    if acc is not None and numba_enabled():
        X = _kernels.euler_rollout(acc.field, system.x0, U, W, acc.params, acc.delta)
        if not np.isfinite(X).all():
            bad = int(np.nonzero(~np.isfinite(X).all(axis=1))[0][0])
            raise TrajectoryDiverged(bad)
        return X

    X = np.empty((system.horizon, system.state_dim))
    x = system.x0
    with np.errstate(all="ignore"):
        for t in range(system.horizon):
            x = np.asarray(system.step(x, U[t], W[t], t), dtype=float)
            if not np.isfinite(x).all():
                raise TrajectoryDiverged(t)
            X[t] = x
    return X


def rollout_batch(system: DynamicalSystem, controls: Array, noise_batch: Array) -> Array:
    """Roll out many noise realizations at once; returns ``(N, tau, d)``.

    Non-finite entries are left in place for the caller to screen; batched
    evaluation never raises on divergence.
    """
    U = stage_view(controls, system.control_dim)
    Wb = np.asarray(noise_batch, dtype=float)
    if Wb.ndim != 3:
        raise ValueError("noise batch must have shape (N, tau, q)")
    N = Wb.shape[0]

    acc = system.accel
    if acc is not None and numba_enabled():
        return _kernels.euler_rollout_batch(acc.field, system.x0, U, Wb, acc.params, acc.delta)

    if system.supports_batch:
        X = np.empty((N, system.horizon, system.state_dim))
        x = np.broadcast_to(system.x0, (N, system.state_dim))
        with np.errstate(all="ignore"):
            for t in range(system.horizon):
                x = system.step(x, U[t], Wb[:, t, :], t)
                X[:, t, :] = x
        return X

    X = np.empty((N, system.horizon, system.state_dim))
    for i in range(N):
        x = system.x0
        with np.errstate(all="ignore"):
            for t in range(system.horizon):
                x = np.asarray(system.step(x, U[t], Wb[i, t], t), dtype=float)
                X[i, t] = x
                if not np.isfinite(x).all():
                    X[i, t + 1 :] = np.nan
                    break
    return X


def linearize(system: DynamicalSystem, costs: StageCosts, controls: Array) -> LinearizedModel:
    """Linearize dynamics and quadratize costs along the noiseless trajectory."""
    U = stage_view(controls, system.control_dim)
    if not np.isfinite(U).all():
        raise ValueError("nominal command contains non-finite entries")
    X = rollout(system, U)
    tau, d, p, q = system.horizon, system.state_dim, system.control_dim, system.noise_dim

    acc = system.accel
    if acc is not None and acc.field_jac is not None and numba_enabled():
        A, B = _kernels.euler_linearize(
            acc.field_jac, system.x0, X, U, acc.params, acc.delta
        )
        C = B
    else:
        A = np.empty((tau, d, d))
        B = np.empty((tau, d, p))
        C = np.empty((tau, d, q))
        zero_w = np.zeros(q)
        x_prev = system.x0
        for t in range(tau):
            A[t] = system.jacobian_x(x_prev, U[t], zero_w, t)
            B[t] = system.jacobian_u(x_prev, U[t], zero_w, t)
            C[t] = B[t] if system.additive_noise else system.jacobian_w(x_prev, U[t], zero_w, t)
            x_prev = X[t]

    return LinearizedModel(
        A=A,
        B=B,
        C=C,
        H=costs.state_hess_stacked(X),
        h=costs.state_grad_stacked(X),
        G=costs.control_hess_stacked(U),
        g=costs.control_grad_stacked(U),
        u_nominal=U.copy(),
        x_nominal=X,
        x0=system.x0.copy(),
    )


def trajectory_jacobian(model: LinearizedModel) -> Array:
    """Dense command Jacobian of the trajectory map, shape ``(tau*p, tau*d)``.

    Row block s, column block t holds (d x_{t+1} / d u_s)^T; lower blocks are
    zero.  This is the validation-path assembly; the solvers use the sweep
    functions :func:`pushforward` / :func:`pullback` instead.
    """
    tau = model.horizon
    d, p, _ = model.dims
    X = np.zeros((tau * p, tau * d))
    for s in range(tau):
        M = model.B[s]
        X[s * p : (s + 1) * p, s * d : (s + 1) * d] = M.T
        for j in range(s + 1, tau):
            M = model.A[j] @ M
            X[s * p : (s + 1) * p, j * d : (j + 1) * d] = M.T
    return X


def noise_jacobian(model: LinearizedModel) -> Array:
    """Dense noise analogue of :func:`trajectory_jacobian`, ``(tau*q, tau*d)``."""
    tau = model.horizon
    d, _, q = model.dims
    X = np.zeros((tau * q, tau * d))
    for s in range(tau):
        M = model.C[s]
        X[s * q : (s + 1) * q, s * d : (s + 1) * d] = M.T
        for j in range(s + 1, tau):
            M = model.A[j] @ M
            X[s * q : (s + 1) * q, j * d : (j + 1) * d] = M.T
    return X


def pushforward(model: LinearizedModel, V: Array, *, noise: bool = False) -> Array:
    """Linearized rollout: y_{t+1} = A_t y_t + B_t v_t from y_0 = 0, as (tau, d)."""
    Bs = model.C if noise else model.B
    V = stage_view(V, Bs.shape[2])
    tau = model.horizon
    Y = np.empty((tau, model.dims[0]))
    y = Bs[0] @ V[0]
    Y[0] = y
    for t in range(1, tau):
        y = model.A[t] @ y + Bs[t] @ V[t]
        Y[t] = y
    return Y


def pullback(model: LinearizedModel, Xi: Array, *, noise: bool = False) -> Array:
    """Adjoint sweep computing X . xi for stacked state seeds xi, as (tau, p)."""
    Bs = model.C if noise else model.B
    Xi = stage_view(Xi, model.dims[0])
    tau = model.horizon
    out = np.empty((tau, Bs.shape[2]))
    mu = Xi[tau - 1]
    out[tau - 1] = Bs[tau - 1].T @ mu
    for i in range(tau - 2, -1, -1):
        mu = Xi[i] + model.A[i + 1].T @ mu
        out[i] = Bs[i].T @ mu
    return out


# ---------------------------------------------------------------------------
# Euler discretization of second-order continuous fields
# ---------------------------------------------------------------------------


def euler_discretize(
    field: Callable,
    field_jac: Optional[Callable] = None,
    *,
    delta: float,
    horizon: int,
    x0: Array,
    control_dim: int,
    params: Sequence[float] = (),
    name: str = "euler-system",
) -> DynamicalSystem:
    """Explicit Euler discretization of z'' = field(z, z', u + w).

    The state is x = (z, z'); one step reads
    ``z+ = z + delta*z'``, ``z'+ = z' + delta*field(z, z', u + w)``.
    The noise enters through the control channel, so the system is additive.

    ``field(q, dq, v, par)`` must accept arrays with an arbitrary number of
    leading batch axes.  ``field_jac(q, dq, v, par)``, if given, returns the
    triple of partials (n, n), (n, n), (n, p) for a single sample; without it
    Jacobians fall back to finite differences of the step map.
    """
    if delta <= 0:
        raise ValueError("time step must be positive")
    x0 = np.asarray(x0, dtype=float)
    n = x0.size // 2
    if x0.size != 2 * n:
        raise ValueError("state must stack position and velocity")
    par = np.asarray(params, dtype=float)

    def step(x, u, w, t):
        q, dq = x[..., :n], x[..., n:]
        acc = field(q, dq, u + w, par)
        return np.concatenate((q + delta * dq, dq + delta * acc), axis=-1)

    jx = ju = None
    if field_jac is not None:
        eye_n = np.eye(n)

        def jx(x, u, w, t):
            dfdq, dfddq, _ = field_jac(x[:n], x[n:], u + w, par)
            top = np.hstack((eye_n, delta * eye_n))
            bot = np.hstack((delta * dfdq, eye_n + delta * dfddq))
            return np.vstack((top, bot))

        def ju(x, u, w, t):
            _, _, dfdv = field_jac(x[:n], x[n:], u + w, par)
            return np.vstack((np.zeros((n, control_dim)), delta * dfdv))

    accel = _try_compile_euler(field, field_jac, par, n, delta, control_dim)
    return DynamicalSystem(
        state_dim=2 * n,
        control_dim=control_dim,
        noise_dim=control_dim,
        horizon=horizon,
        x0=x0,
        step=step,
        jac_x=jx,
        jac_u=ju,
        jac_w=ju,
        additive_noise=True,
        supports_batch=True,
        name=name,
        accel=accel,
    )


def _try_compile_euler(field, field_jac, par, n, delta, p) -> Optional[EulerAccel]:
    """Compile the field under numba when possible; silently fall back.

    A trial evaluation forces compilation so incompatible user fields are
    detected here rather than mid-solve.
    """
    from ._backend import HAVE_NUMBA

    if not HAVE_NUMBA:
        return None
    try:
        from numba import njit

        cfield = field if hasattr(field, "targetoptions") else njit(cache=True)(field)
        q0, dq0, v0 = np.zeros(n), np.zeros(n), np.zeros(p)
        cfield(q0, dq0, v0, par)
        cjac = None
        if field_jac is not None:
            cjac = field_jac if hasattr(field_jac, "targetoptions") else njit(cache=True)(field_jac)
            cjac(q0, dq0, v0, par)
        return EulerAccel(field=cfield, field_jac=cjac, params=par, n=n, delta=delta)
    except Exception:
        return None


# ---------------------------------------------------------------------------
# Linear systems (used heavily by the oracles and tests)
# ---------------------------------------------------------------------------


def linear_system(
    A: Array,
    B: Array,
    C: Optional[Array] = None,
    *,
    x0: Array,
    horizon: int,
    name: str = "linear-system",
) -> DynamicalSystem:
    """Time-invariant or stage-indexed linear dynamics x+ = Ax + Bu + Cw."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 2:
        A = np.broadcast_to(A, (horizon,) + A.shape).copy()
    if B.ndim == 2:
        B = np.broadcast_to(B, (horizon,) + B.shape).copy()
    additive = C is None
    if C is None:
        C = B
    else:
        C = np.asarray(C, dtype=float)
        if C.ndim == 2:
            C = np.broadcast_to(C, (horizon,) + C.shape).copy()
        additive = C.shape == B.shape and np.array_equal(C, B)
    d = A.shape[1]

    def step(x, u, w, t):
        return x @ A[t].T + u @ B[t].T + w @ C[t].T

    return DynamicalSystem(
        state_dim=d,
        control_dim=B.shape[2],
        noise_dim=C.shape[2],
        horizon=horizon,
        x0=x0,
        step=step,
        jac_x=lambda x, u, w, t: A[t],
        jac_u=lambda x, u, w, t: B[t],
        jac_w=lambda x, u, w, t: C[t],
        additive_noise=additive,
        supports_batch=True,
        name=name,
    )


# ---------------------------------------------------------------------------
# Pendulum swing-up benchmark
# ---------------------------------------------------------------------------


def _pendulum_field(q, dq, v, par):
    # par = (g/l, mu/(m l^2), 1/(m l^2)); all arrays carry a trailing axis of 1
    return -par[0] * np.sin(q) - par[1] * dq + par[2] * v


def _pendulum_field_jac(q, dq, v, par):
    dfdq = np.empty((1, 1))
    dfdq[0, 0] = -par[0] * np.cos(q[0])
    dfddq = np.empty((1, 1))
    dfddq[0, 0] = -par[1]
    dfdv = np.empty((1, 1))
    dfdv[0, 0] = par[2]
    return dfdq, dfddq, dfdv


def pendulum_system(
    *,
    mass: float = 1.0,
    length: float = 1.0,
    friction: float = 0.01,
    gravity: float = 9.81,
    delta: float,
    horizon: int,
    x0: Array = (0.0, 0.0),
) -> DynamicalSystem:
    """Damped pendulum with torque control; angle measured from hanging down.

    Continuous dynamics: theta'' = -(g/l) sin theta - mu/(m l^2) theta'
    + u/(m l^2), discretized by explicit Euler.
    """
    if mass <= 0 or length <= 0:
        raise ValueError("mass and length must be positive")
    inertia = mass * length**2
    return euler_discretize(
        _pendulum_field,
        _pendulum_field_jac,
        delta=delta,
        horizon=horizon,
        x0=x0,
        control_dim=1,
        params=(gravity / length, friction / inertia, 1.0 / inertia),
        name="pendulum",
    )


def pendulum_costs(
    lam1: float,
    lam2: float,
    *,
    delta: float,
    horizon: int,
    scale_control_by_dt: bool = True,
) -> StageCosts:
    """Swing-up objective (pi - theta_tau)^2 + lam1 theta'_tau^2 + lam2 int u^2.

    The control integral is discretized as lam2 * delta * sum_t u_t^2; pass
    ``scale_control_by_dt=False`` to drop the delta factor.
    """
    w = lam2 * delta if scale_control_by_dt else lam2
    return StageCosts.final_state_quadratic(
        horizon=horizon,
        final_hessian=np.diag([2.0, 2.0 * lam1]),
        final_linear=np.array([-2.0 * np.pi, 0.0]),
        final_constant=np.pi**2,
        control_hessian=np.array([[2.0 * w]]),
    )


# ---------------------------------------------------------------------------
# Two-link planar arm benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArmParameters:
    """Physical constants of the planar two-joint arm."""

    length_1: float = 0.30
    length_2: float = 0.33
    inertia_1: float = 0.025
    inertia_2: float = 0.045
    mass_2: float = 1.0
    com_distance_2: float = 0.16
    friction: tuple = ((0.05, 0.025), (0.025, 0.05))

    @property
    def a(self) -> tuple[float, float, float]:
        a1 = self.inertia_1 + self.inertia_2 + self.mass_2 * self.length_1**2
        a2 = self.mass_2 * self.length_1 * self.com_distance_2
        a3 = self.inertia_2
        return a1, a2, a3

    @property
    def det_floor(self) -> tuple[float, float]:
        """(alpha, beta) with det M(theta) = alpha - beta cos^2 theta_2 >= alpha - beta > 0."""
        a1, a2, a3 = self.a
        return a3 * (a1 - a3), a2**2

    def inertia_matrix(self, theta2: float) -> Array:
        a1, a2, a3 = self.a
        c2 = np.cos(theta2)
        return np.array([[a1 + 2 * a2 * c2, a3 + a2 * c2], [a3 + a2 * c2, a3]])

    def inertia_inverse(self, theta2: float) -> Array:
        a1, a2, a3 = self.a
        c2 = np.cos(theta2)
        alpha, beta = self.det_floor
        det = alpha - beta * c2**2
        return (
            np.array([[a3, -(a3 + a2 * c2)], [-(a3 + a2 * c2), a1 + 2 * a2 * c2]]) / det
        )


def _arm_field(q, dq, v, par):
    # par = (a1, a2, a3, b11, b12, b21, b22); closed-form 2x2 inertia inverse
    c2 = np.cos(q[..., 1])
    s2 = np.sin(q[..., 1])
    m11 = par[0] + 2.0 * par[1] * c2
    m12 = par[2] + par[1] * c2
    det = par[2] * m11 - m12 * m12
    cor1 = -par[1] * s2 * dq[..., 1] * (2.0 * dq[..., 0] + dq[..., 1])
    cor2 = par[1] * s2 * dq[..., 0] * dq[..., 0]
    f1 = v[..., 0] - cor1 - (par[3] * dq[..., 0] + par[4] * dq[..., 1])
    f2 = v[..., 1] - cor2 - (par[5] * dq[..., 0] + par[6] * dq[..., 1])
    out = np.empty_like(q)
    out[..., 0] = (par[2] * f1 - m12 * f2) / det
    out[..., 1] = (-m12 * f1 + m11 * f2) / det
    return out


def _arm_field_jac(q, dq, v, par):
    a1, a2, a3 = par[0], par[1], par[2]
    c2 = np.cos(q[1])
    s2 = np.sin(q[1])
    Minv = np.empty((2, 2))
    m11 = a1 + 2.0 * a2 * c2
    m12 = a3 + a2 * c2
    det = a3 * m11 - m12 * m12
    Minv[0, 0] = a3 / det
    Minv[0, 1] = -m12 / det
    Minv[1, 0] = -m12 / det
    Minv[1, 1] = m11 / det

    Bfric = np.empty((2, 2))
    Bfric[0, 0] = par[3]
    Bfric[0, 1] = par[4]
    Bfric[1, 0] = par[5]
    Bfric[1, 1] = par[6]

    cor = np.empty(2)
    cor[0] = -a2 * s2 * dq[1] * (2.0 * dq[0] + dq[1])
    cor[1] = a2 * s2 * dq[0] * dq[0]
    force = v - cor - Bfric @ dq
    acc = Minv @ force

    # d(cor)/d(dq) and d(cor)/d(theta_2)
    dcor_ddq = np.empty((2, 2))
    dcor_ddq[0, 0] = -2.0 * a2 * s2 * dq[1]
    dcor_ddq[0, 1] = -2.0 * a2 * s2 * (dq[0] + dq[1])
    dcor_ddq[1, 0] = 2.0 * a2 * s2 * dq[0]
    dcor_ddq[1, 1] = 0.0
    dcor_dq2 = np.empty(2)
    dcor_dq2[0] = -a2 * c2 * dq[1] * (2.0 * dq[0] + dq[1])
    dcor_dq2[1] = a2 * c2 * dq[0] * dq[0]

    dM_dq2 = np.empty((2, 2))
    dM_dq2[0, 0] = -2.0 * a2 * s2
    dM_dq2[0, 1] = -a2 * s2
    dM_dq2[1, 0] = -a2 * s2
    dM_dq2[1, 1] = 0.0

    dfdq = np.zeros((2, 2))
    dfdq[:, 1] = -Minv @ (dM_dq2 @ acc) - Minv @ dcor_dq2
    dfddq = Minv @ (-dcor_ddq - Bfric)
    dfdv = Minv
    return dfdq, dfddq, dfdv


def two_link_arm_system(
    params: ArmParameters = ArmParameters(),
    *,
    delta: float,
    horizon: int,
    x0: Array = (0.0, 0.0, 0.0, 0.0),
) -> DynamicalSystem:
    """Planar two-joint arm: M(th) th'' + C(th, th') + B th' = u."""
    a1, a2, a3 = params.a
    b = params.friction
    return euler_discretize(
        _arm_field,
        _arm_field_jac,
        delta=delta,
        horizon=horizon,
        x0=x0,
        control_dim=2,
        params=(a1, a2, a3, b[0][0], b[0][1], b[1][0], b[1][1]),
        name="two-link-arm",
    )


def two_link_arm_costs(
    theta_target: Array,
    lam1: float,
    lam2: float,
    *,
    delta: float,
    horizon: int,
    scale_control_by_dt: bool = True,
) -> StageCosts:
    """Reaching objective |th_tau - th*|^2 + lam1 |th'_tau|^2 + lam2 int |u|^2.

    The target joint angles are a direct input; mapping a workspace target to
    joint angles is the caller's problem.
    """
    th = np.asarray(theta_target, dtype=float)
    w = lam2 * delta if scale_control_by_dt else lam2
    return StageCosts.final_state_quadratic(
        horizon=horizon,
        final_hessian=np.diag([2.0, 2.0, 2.0 * lam1, 2.0 * lam1]),
        final_linear=np.concatenate((-2.0 * th, np.zeros(2))),
        final_constant=float(th @ th),
        control_hessian=2.0 * w * np.eye(2),
    )
