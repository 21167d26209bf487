"""Hot inner loops, written once and compiled twice.

Each ``*_impl`` function below is plain numpy restricted to the subset numba
understands; the module exposes a jitted twin and the dispatchers in
:mod:`ileqg.leqg` / :mod:`ileqg.systems` pick one based on the active backend.
Kernel ``status`` codes: 0 = ok, 1 = subproblem infeasible at ``stage``,
2 = ill-conditioned control-block solve at ``stage``.
"""

from __future__ import annotations

import numpy as np

from ._backend import njit

#: relative margin for "positive definite by factorization success"
PD_MARGIN = 1e-10


@njit(cache=True)
def _chol_ok(A):
    """Cholesky with a status flag instead of an exception."""
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            r = A[i, j]
            for k in range(j):
                r -= L[i, k] * L[j, k]
            L[i, j] = r / L[j, j]
    return L, True


@njit(cache=True)
def _pd_with_margin(M):
    """Positive definiteness of a symmetric matrix with a relative margin."""
    n = M.shape[0]
    scale = 1.0
    for i in range(n):
        a = abs(M[i, i])
        if a > scale:
            scale = a
    shifted = M - (PD_MARGIN * scale) * np.eye(n)
    _, ok = _chol_ok(shifted)
    return ok


def _leqg_backward_impl(A, B, C, H, hl, G, gl, s, gamma_inv, lqr_mode):
    """Backward dynamic-programming pass of the min-max subproblem.

    Recursion, for t = tau-1 .. 0 with P_tau = H_tau, p_tau = h_tau:
      M_t   = (theta sigma^2)^-1 I - C_t' P_{t+1} C_t          (must be PD)
      Pt_+  = P_{t+1} + P_{t+1} C_t M_t^-1 C_t' P_{t+1}
      pt_+  = p_{t+1} + P_{t+1} C_t M_t^-1 C_t' p_{t+1}
      W_t   = G_t + gamma^-1 I + B_t' Pt_+ B_t
      P_t   = H_t + A_t'Pt_+ A_t - A_t'Pt_+ B_t W_t^-1 B_t'Pt_+ A_t
      p_t   = h_t + A_t'(pt_+ - Pt_+ B_t W_t^-1 (B_t'pt_+ + g_t))
    with the stage-0 convention H_0 = 0, h_0 = 0.  In ``lqr_mode`` the
    adversary is dropped entirely (Pt_+ = P_{t+1}).  The constant kappa of the
    cost-to-go is accumulated so c_0(y) = y'P_0 y/2 + p_0'y + kappa.
    """
    tau = A.shape[0]
    d = A.shape[1]
    p = B.shape[2]
    q = C.shape[2]

    P = np.zeros((tau + 1, d, d))
    pv = np.zeros((tau + 1, d))
    K = np.zeros((tau, p, d))
    kv = np.zeros((tau, p))
    Lx = np.zeros((tau, q, d))
    Lu = np.zeros((tau, q, p))
    lv = np.zeros((tau, q))

    P[tau] = H[tau - 1]
    pv[tau] = hl[tau - 1]
    kappa = 0.0
    inv_s = 0.0 if lqr_mode else 1.0 / s
    eye_q = np.eye(q)
    eye_p = np.eye(p)

    for t in range(tau - 1, -1, -1):
        Pn = P[t + 1]
        pn = pv[t + 1]

        if lqr_mode:
            Pt = Pn.copy()
            pt = pn.copy()
        else:
            E = C[t].T @ Pn  # (q, d)
            M = inv_s * eye_q - E @ C[t]
            M = 0.5 * (M + M.T)
            if not _pd_with_margin(M):
                return P, pv, K, kv, Lx, Lu, lv, kappa, 1, t
            Cp = C[t].T @ pn
            Z = np.linalg.solve(M, E)  # M^-1 C'P
            zp = np.linalg.solve(M, Cp)
            Pt = Pn + E.T @ Z
            Pt = 0.5 * (Pt + Pt.T)
            pt = pn + E.T @ zp
            Lx[t] = Z @ A[t]
            Lu[t] = Z @ B[t]
            lv[t] = zp
            kappa += 0.5 * Cp @ zp

        BtP = B[t].T @ Pt  # (p, d)
        W = G[t] + gamma_inv * eye_p + BtP @ B[t]
        W = 0.5 * (W + W.T)
        _, ok = _chol_ok(W)
        if not ok:
            return P, pv, K, kv, Lx, Lu, lv, kappa, 2, t
        bvec = gl[t] + B[t].T @ pt
        F = BtP @ A[t]
        K[t] = -np.linalg.solve(W, F)
        kv[t] = -np.linalg.solve(W, bvec)
        kappa += 0.5 * bvec @ kv[t]

        Pnew = A[t].T @ Pt @ A[t] + F.T @ K[t]
        pnew = A[t].T @ (pt + Pt @ (B[t] @ kv[t]))
        if t >= 1:
            Pnew = Pnew + H[t - 1]
            pnew = pnew + hl[t - 1]
        P[t] = 0.5 * (Pnew + Pnew.T)
        pv[t] = pnew

    return P, pv, K, kv, Lx, Lu, lv, kappa, 0, -1


def _leqg_forward_impl(A, B, C, K, kv, Lx, Lu, lv, y0):
    """Roll out the saddle-point policies: v = Ky + k, w = Lx y + Lu v + l."""
    tau = A.shape[0]
    d = A.shape[1]
    p = B.shape[2]
    q = C.shape[2]
    V = np.empty((tau, p))
    W = np.empty((tau, q))
    Y = np.empty((tau, d))
    y = y0.copy()
    for t in range(tau):
        v = K[t] @ y + kv[t]
        w = Lx[t] @ y + Lu[t] @ v + lv[t]
        y = A[t] @ y + B[t] @ v + C[t] @ w
        V[t] = v
        W[t] = w
        Y[t] = y
    return V, W, Y


def _euler_rollout_impl(field, x0, U, W, par, delta):
    tau = U.shape[0]
    n = x0.shape[0] // 2
    X = np.empty((tau, 2 * n))
    q = x0[:n].copy()
    dq = x0[n:].copy()
    for t in range(tau):
        acc = field(q, dq, U[t] + W[t], par)
        q = q + delta * dq
        dq = dq + delta * acc
        X[t, :n] = q
        X[t, n:] = dq
    return X


def _euler_rollout_batch_impl(field, x0, U, Wb, par, delta):
    N = Wb.shape[0]
    tau = U.shape[0]
    n = x0.shape[0] // 2
    X = np.empty((N, tau, 2 * n))
    q = np.empty((N, n))
    dq = np.empty((N, n))
    for i in range(N):
        q[i] = x0[:n]
        dq[i] = x0[n:]
    for t in range(tau):
        acc = field(q, dq, U[t] + Wb[:, t, :], par)
        q = q + delta * dq
        dq = dq + delta * acc
        X[:, t, :n] = q
        X[:, t, n:] = dq
    return X


def _euler_linearize_impl(field_jac, x0, X, U, par, delta):
    tau = U.shape[0]
    n = x0.shape[0] // 2
    d = 2 * n
    p = U.shape[1]
    A = np.zeros((tau, d, d))
    B = np.zeros((tau, d, p))
    q = x0[:n].copy()
    dq = x0[n:].copy()
    for t in range(tau):
        dfdq, dfddq, dfdv = field_jac(q, dq, U[t], par)
        for i in range(n):
            A[t, i, i] = 1.0
            A[t, i, n + i] = delta
        A[t, n:, :n] = delta * dfdq
        A[t, n:, n:] = delta * dfddq
        for i in range(n):
            A[t, n + i, n + i] += 1.0
        B[t, n:, :] = delta * dfdv
        q = X[t, :n]
        dq = X[t, n:]
    return A, B


# Jitted twins.  Kernels taking a function argument are not cacheable.
leqg_backward_nb = njit(cache=True)(_leqg_backward_impl)
leqg_forward_nb = njit(cache=True)(_leqg_forward_impl)
euler_rollout = njit(cache=False)(_euler_rollout_impl)
euler_rollout_batch = njit(cache=False)(_euler_rollout_batch_impl)
euler_linearize = njit(cache=False)(_euler_linearize_impl)

leqg_backward_np = _leqg_backward_impl
leqg_forward_np = _leqg_forward_impl
