"""Jitted RK4 kernels used by the control and gradient computations.

All kernels share one convention: coefficient tables are sampled on the
half-step refinement of the solver grid (``2N + 1`` rows for ``N`` steps), so
every RK4 stage reads exact table entries and never interpolates model
coefficients.  Backward (final-value) problems integrate the time-reversed
system and are written here directly on the forward indexing.

Row layout of the joint Riccati state ``q`` (size D = d^2 + d):
``q[:d]`` is h, ``q[d + j*d + i]`` is E[i, j] (columns stacked).  A single
pair of helpers owns this layout.
"""
from __future__ import annotations

import numpy as np
from numba import njit

BLOWUP = 1e18


@njit(cache=True)
def _q_unpack_E(q, d, E):
    for j in range(d):
        for i in range(d):
            E[i, j] = q[d + j * d + i]


@njit(cache=True)
def _q_pack_E(E, d, q):
    for j in range(d):
        for i in range(d):
            q[d + j * d + i] = E[i, j]


@njit(cache=True)
def _riccati_E_rhs(A, E, lam, out):
    # dE/dt = I - A^T E - E A - E^2 / lam
    d = A.shape[0]
    for i in range(d):
        for j in range(d):
            acc = 1.0 if i == j else 0.0
            for k in range(d):
                acc -= A[k, i] * E[k, j] + E[i, k] * A[k, j] + E[i, k] * E[k, j] / lam
            out[i, j] = acc


@njit(cache=True)
def rk4_backward_E(A2, lam, h):
    """Solve the matrix Riccati FVP with E(T) = 0; returns (E, ok, fail_idx).

    ``A2`` holds A(t) on the refined grid (2N+1, d, d); output is (N+1, d, d).
    """
    m = A2.shape[0]
    N = (m - 1) // 2
    d = A2.shape[1]
    E = np.zeros((N + 1, d, d))
    k1 = np.empty((d, d)); k2 = np.empty((d, d)); k3 = np.empty((d, d)); k4 = np.empty((d, d))
    tmp = np.empty((d, d))
    for n in range(N, 0, -1):
        e0 = E[n]
        _riccati_E_rhs(A2[2 * n], e0, lam, k1)
        for i in range(d):
            for j in range(d):
                tmp[i, j] = e0[i, j] - 0.5 * h * k1[i, j]
        _riccati_E_rhs(A2[2 * n - 1], tmp, lam, k2)
        for i in range(d):
            for j in range(d):
                tmp[i, j] = e0[i, j] - 0.5 * h * k2[i, j]
        _riccati_E_rhs(A2[2 * n - 1], tmp, lam, k3)
        for i in range(d):
            for j in range(d):
                tmp[i, j] = e0[i, j] - h * k3[i, j]
        _riccati_E_rhs(A2[2 * n - 2], tmp, lam, k4)
        bad = False
        for i in range(d):
            for j in range(d):
                v = e0[i, j] - h / 6.0 * (k1[i, j] + 2 * k2[i, j] + 2 * k3[i, j] + k4[i, j])
                if not np.isfinite(v) or abs(v) > BLOWUP:
                    bad = True
                E[n - 1, i, j] = v
        if bad:
            return E, False, n - 1
    return E, True, -1


@njit(cache=True)
def _q_rhs(A, r, zeta, zdot, q, lam, d, out):
    # Joint (h, E) right-hand side: G on the h block, H on the E block.
    E = np.empty((d, d))
    _q_unpack_E(q, d, E)
    b = np.empty(d)
    for i in range(d):
        acc = r[i] - zdot[i]
        for j in range(d):
            acc += A[i, j] * zeta[j]
        b[i] = acc
    for i in range(d):
        acc = 0.0
        for k in range(d):
            acc -= A[k, i] * q[k] + E[i, k] * (q[k] / lam + b[k])
        out[i] = acc
    for j in range(d):
        for i in range(d):
            acc = 1.0 if i == j else 0.0
            for k in range(d):
                acc -= A[k, i] * E[k, j] + A[k, j] * E[k, i] + E[k, i] * E[k, j] / lam
            out[d + j * d + i] = acc


@njit(cache=True)
def rk4_backward_Q(A2, r2, zeta2, zdot2, lam, h):
    """Joint backward solve of (h, E) from Q(T) = 0; returns (Q, ok, fail_idx)."""
    m = A2.shape[0]
    N = (m - 1) // 2
    d = A2.shape[1]
    D = d * d + d
    Q = np.zeros((N + 1, D))
    k1 = np.empty(D); k2 = np.empty(D); k3 = np.empty(D); k4 = np.empty(D)
    tmp = np.empty(D)
    for n in range(N, 0, -1):
        q0 = Q[n]
        _q_rhs(A2[2 * n], r2[2 * n], zeta2[2 * n], zdot2[2 * n], q0, lam, d, k1)
        for i in range(D):
            tmp[i] = q0[i] - 0.5 * h * k1[i]
        _q_rhs(A2[2 * n - 1], r2[2 * n - 1], zeta2[2 * n - 1], zdot2[2 * n - 1], tmp, lam, d, k2)
        for i in range(D):
            tmp[i] = q0[i] - 0.5 * h * k2[i]
        _q_rhs(A2[2 * n - 1], r2[2 * n - 1], zeta2[2 * n - 1], zdot2[2 * n - 1], tmp, lam, d, k3)
        for i in range(D):
            tmp[i] = q0[i] - h * k3[i]
        _q_rhs(A2[2 * n - 2], r2[2 * n - 2], zeta2[2 * n - 2], zdot2[2 * n - 2], tmp, lam, d, k4)
        bad = False
        for i in range(D):
            v = q0[i] - h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            if not np.isfinite(v) or abs(v) > BLOWUP:
                bad = True
            Q[n - 1, i] = v
        if bad:
            return Q, False, n - 1
    return Q, True, -1


@njit(cache=True)
def _p_rhs(A, r, zeta, zdot, q, p_row, lam, d, out):
    # dP/dt = dg/dQ - P . dF/dQ, all as 1 x D rows.
    E = np.empty((d, d))
    _q_unpack_E(q, d, E)
    b = np.empty(d)
    for i in range(d):
        acc = r[i] - zdot[i]
        for j in range(d):
            acc += A[i, j] * zeta[j]
        b[i] = acc
    # h block: -2 (b + h/lam)^T + P_h (A^T + E/lam)
    for i in range(d):
        acc = -2.0 * (b[i] + q[i] / lam)
        for k in range(d):
            acc += p_row[k] * (A[i, k] + E[k, i] / lam)
        out[i] = acc
    # E block, entry (h0, k) at index d + k*d + h0:
    #   P_h[h0] (h_k/lam + b_k) + [M2 (PE + PE^T)]_{h0,k},  M2 = A + E/lam
    for k in range(d):
        for h0 in range(d):
            acc = p_row[h0] * (q[k] / lam + b[k])
            for mm in range(d):
                pe_sym = p_row[d + k * d + mm] + p_row[d + mm * d + k]
                acc += (A[h0, mm] + E[h0, mm] / lam) * pe_sym
            out[d + k * d + h0] = acc


@njit(cache=True)
def rk4_forward_P(A2, r2, zeta2, zdot2, Qn, Qm, p0, lam, h):
    """Forward adjoint solve; Qn holds Q at nodes, Qm at step midpoints."""
    m = A2.shape[0]
    N = (m - 1) // 2
    d = A2.shape[1]
    D = d * d + d
    P = np.zeros((N + 1, D))
    P[0] = p0
    k1 = np.empty(D); k2 = np.empty(D); k3 = np.empty(D); k4 = np.empty(D)
    tmp = np.empty(D)
    for n in range(N):
        p_cur = P[n]
        _p_rhs(A2[2 * n], r2[2 * n], zeta2[2 * n], zdot2[2 * n], Qn[n], p_cur, lam, d, k1)
        for i in range(D):
            tmp[i] = p_cur[i] + 0.5 * h * k1[i]
        _p_rhs(A2[2 * n + 1], r2[2 * n + 1], zeta2[2 * n + 1], zdot2[2 * n + 1], Qm[n], tmp, lam, d, k2)
        for i in range(D):
            tmp[i] = p_cur[i] + 0.5 * h * k2[i]
        _p_rhs(A2[2 * n + 1], r2[2 * n + 1], zeta2[2 * n + 1], zdot2[2 * n + 1], Qm[n], tmp, lam, d, k3)
        for i in range(D):
            tmp[i] = p_cur[i] + h * k3[i]
        _p_rhs(A2[2 * n + 2], r2[2 * n + 2], zeta2[2 * n + 2], zdot2[2 * n + 2], Qn[n + 1], tmp, lam, d, k4)
        bad = False
        for i in range(D):
            v = p_cur[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
            if not np.isfinite(v) or abs(v) > BLOWUP:
                bad = True
            P[n + 1, i] = v
        if bad:
            return P, False, n + 1
    return P, True, -1


@njit(cache=True)
def _sens_rhs(A, dA, r, dr, zeta, zdot, q, S, lam, d, p, out):
    # d/dt (dQ/dtheta) = dF/dQ . S + dF/dtheta, with S of shape (D, p).
    E = np.empty((d, d))
    _q_unpack_E(q, d, E)
    b = np.empty(d)
    for i in range(d):
        acc = r[i] - zdot[i]
        for j in range(d):
            acc += A[i, j] * zeta[j]
        b[i] = acc
    # db/dtheta_m = dA/dtheta_m zeta + dr/dtheta_m
    db = np.zeros((d, p))
    for mm in range(p):
        for i in range(d):
            acc = dr[i, mm]
            for j in range(d):
                acc += dA[i, j, mm] * zeta[j]
            db[i, mm] = acc
    for mm in range(p):
        # h block of dF/dQ . S: -(A^T + E/lam) S_h - S_E (h/lam + b)
        for i in range(d):
            acc = 0.0
            for k in range(d):
                acc -= (A[k, i] + E[i, k] / lam) * S[k, mm]
                acc -= S[d + k * d + i, mm] * (q[k] / lam + b[k])
            # dG/dtheta_m
            for k in range(d):
                acc -= dA[k, i, mm] * q[k] + E[i, k] * db[k, mm]
            out[i, mm] = acc
        # E block rows (j)d+i
        for j in range(d):
            for i in range(d):
                acc = 0.0
                for k in range(d):
                    m2ki = A[k, i] + E[k, i] / lam
                    m2kj = A[k, j] + E[k, j] / lam
                    acc -= m2ki * S[d + j * d + k, mm] + m2kj * S[d + i * d + k, mm]
                    # dH/dtheta_m
                    acc -= E[k, i] * dA[k, j, mm] + E[k, j] * dA[k, i, mm]
                out[d + j * d + i, mm] = acc


@njit(cache=True)
def rk4_backward_sens(A2, dA2, r2, dr2, zeta2, zdot2, lam, h):
    """Backward solve of the (D x p) sensitivity dQ/dtheta from 0 at T.

    Integrates (Q, dQ/dtheta) jointly so stage values of Q are exact.
    Returns (Q, S, ok, fail_idx) with S of shape (N+1, D, p).
    """
    m = A2.shape[0]
    N = (m - 1) // 2
    d = A2.shape[1]
    p = dA2.shape[3]
    D = d * d + d
    Q = np.zeros((N + 1, D))
    S = np.zeros((N + 1, D, p))
    qk = np.empty((4, D)); sk = np.empty((4, D, p))
    qtmp = np.empty(D); stmp = np.empty((D, p))
    for n in range(N, 0, -1):
        q0 = Q[n]; s0 = S[n]
        for stage in range(4):
            if stage == 0:
                idx = 2 * n
                for i in range(D):
                    qtmp[i] = q0[i]
                    for mm in range(p):
                        stmp[i, mm] = s0[i, mm]
            elif stage == 1 or stage == 2:
                idx = 2 * n - 1
                c = 0.5 * h
                for i in range(D):
                    qtmp[i] = q0[i] - c * qk[stage - 1, i]
                    for mm in range(p):
                        stmp[i, mm] = s0[i, mm] - c * sk[stage - 1, i, mm]
            else:
                idx = 2 * n - 2
                for i in range(D):
                    qtmp[i] = q0[i] - h * qk[2, i]
                    for mm in range(p):
                        stmp[i, mm] = s0[i, mm] - h * sk[2, i, mm]
            _q_rhs(A2[idx], r2[idx], zeta2[idx], zdot2[idx], qtmp, lam, d, qk[stage])
            _sens_rhs(A2[idx], dA2[idx], r2[idx], dr2[idx], zeta2[idx], zdot2[idx],
                      qtmp, stmp, lam, d, p, sk[stage])
        bad = False
        for i in range(D):
            v = q0[i] - h / 6.0 * (qk[0, i] + 2 * qk[1, i] + 2 * qk[2, i] + qk[3, i])
            if not np.isfinite(v) or abs(v) > BLOWUP:
                bad = True
            Q[n - 1, i] = v
            for mm in range(p):
                w = s0[i, mm] - h / 6.0 * (sk[0, i, mm] + 2 * sk[1, i, mm] + 2 * sk[2, i, mm] + sk[3, i, mm])
                if not np.isfinite(w):
                    bad = True
                S[n - 1, i, mm] = w
        if bad:
            return Q, S, False, n - 1
    return Q, S, True, -1


@njit(cache=True)
def rk4_forward_linear(A2, f2, x0, h):
    """Forward solve of dx/dt = A(t) x + f(t); returns (X, ok, fail_idx)."""
    m = A2.shape[0]
    N = (m - 1) // 2
    d = A2.shape[1]
    X = np.zeros((N + 1, d))
    X[0] = x0
    k = np.empty((4, d))
    tmp = np.empty(d)
    for n in range(N):
        x_cur = X[n]
        for stage in range(4):
            if stage == 0:
                idx = 2 * n
                for i in range(d):
                    tmp[i] = x_cur[i]
            elif stage < 3:
                idx = 2 * n + 1
                for i in range(d):
                    tmp[i] = x_cur[i] + 0.5 * h * k[stage - 1, i]
            else:
                idx = 2 * n + 2
                for i in range(d):
                    tmp[i] = x_cur[i] + h * k[2, i]
            for i in range(d):
                acc = f2[idx, i]
                for j in range(d):
                    acc += A2[idx, i, j] * tmp[j]
                k[stage, i] = acc
        bad = False
        for i in range(d):
            v = x_cur[i] + h / 6.0 * (k[0, i] + 2 * k[1, i] + 2 * k[2, i] + k[3, i])
            if not np.isfinite(v) or abs(v) > BLOWUP:
                bad = True
            X[n + 1, i] = v
        if bad:
            return X, False, n + 1
    return X, True, -1


@njit(cache=True)
def rk4_forward_matrix(A2, h):
    """Fundamental matrix solve dM/dt = A(t) M from M(0) = I."""
    m = A2.shape[0]
    N = (m - 1) // 2
    d = A2.shape[1]
    M = np.zeros((N + 1, d, d))
    for i in range(d):
        M[0, i, i] = 1.0
    k = np.empty((4, d, d))
    tmp = np.empty((d, d))
    for n in range(N):
        m_cur = M[n]
        for stage in range(4):
            if stage == 0:
                idx = 2 * n
                for i in range(d):
                    for j in range(d):
                        tmp[i, j] = m_cur[i, j]
            elif stage < 3:
                idx = 2 * n + 1
                for i in range(d):
                    for j in range(d):
                        tmp[i, j] = m_cur[i, j] + 0.5 * h * k[stage - 1, i, j]
            else:
                idx = 2 * n + 2
                for i in range(d):
                    for j in range(d):
                        tmp[i, j] = m_cur[i, j] + h * k[2, i, j]
            for i in range(d):
                for j in range(d):
                    acc = 0.0
                    for l in range(d):
                        acc += A2[idx, i, l] * tmp[l, j]
                    k[stage, i, j] = acc
        bad = False
        for i in range(d):
            for j in range(d):
                v = m_cur[i, j] + h / 6.0 * (k[0, i, j] + 2 * k[1, i, j] + 2 * k[2, i, j] + k[3, i, j])
                if not np.isfinite(v) or abs(v) > BLOWUP:
                    bad = True
                M[n + 1, i, j] = v
        if bad:
            return M, False, n + 1
    return M, True, -1


@njit(cache=True)
def rk4_backward_linear_mat(alpha2, W2, h):
    """Backward solve of dV/dt = -alpha(t) V - W(t) with V(T) = 0.

    ``V`` has shape (N+1, d, q); used for h-type problems with matrix forcing.
    """
    m = alpha2.shape[0]
    N = (m - 1) // 2
    d = alpha2.shape[1]
    q = W2.shape[2]
    V = np.zeros((N + 1, d, q))
    k = np.empty((4, d, q))
    tmp = np.empty((d, q))
    for n in range(N, 0, -1):
        v_cur = V[n]
        for stage in range(4):
            if stage == 0:
                idx = 2 * n
                for i in range(d):
                    for j in range(q):
                        tmp[i, j] = v_cur[i, j]
            elif stage < 3:
                idx = 2 * n - 1
                for i in range(d):
                    for j in range(q):
                        tmp[i, j] = v_cur[i, j] - 0.5 * h * k[stage - 1, i, j]
            else:
                idx = 2 * n - 2
                for i in range(d):
                    for j in range(q):
                        tmp[i, j] = v_cur[i, j] - h * k[2, i, j]
            for i in range(d):
                for j in range(q):
                    acc = -W2[idx, i, j]
                    for l in range(d):
                        acc -= alpha2[idx, i, l] * tmp[l, j]
                    k[stage, i, j] = acc
        bad = False
        for i in range(d):
            for j in range(q):
                v = v_cur[i, j] - h / 6.0 * (k[0, i, j] + 2 * k[1, i, j] + 2 * k[2, i, j] + k[3, i, j])
                if not np.isfinite(v):
                    bad = True
                V[n - 1, i, j] = v
        if bad:
            return V, False, n - 1
    return V, True, -1


@njit(cache=True)
def rk4_forward_x_sens(A2, dA2, r2, dr2, x0, h):
    """Forward solve of x and its parameter sensitivities S_k = dx/dtheta_k.

    Returns (X, S, ok, fail_idx) with X (N+1, d) and S (N+1, d, p).
    """
    m = A2.shape[0]
    N = (m - 1) // 2
    d = A2.shape[1]
    p = dA2.shape[3]
    X = np.zeros((N + 1, d))
    S = np.zeros((N + 1, d, p))
    X[0] = x0
    kx = np.empty((4, d)); ks = np.empty((4, d, p))
    xt = np.empty(d); st = np.empty((d, p))
    for n in range(N):
        x_cur = X[n]; s_cur = S[n]
        for stage in range(4):
            if stage == 0:
                idx = 2 * n
                for i in range(d):
                    xt[i] = x_cur[i]
                    for mm in range(p):
                        st[i, mm] = s_cur[i, mm]
            elif stage < 3:
                idx = 2 * n + 1
                for i in range(d):
                    xt[i] = x_cur[i] + 0.5 * h * kx[stage - 1, i]
                    for mm in range(p):
                        st[i, mm] = s_cur[i, mm] + 0.5 * h * ks[stage - 1, i, mm]
            else:
                idx = 2 * n + 2
                for i in range(d):
                    xt[i] = x_cur[i] + h * kx[2, i]
                    for mm in range(p):
                        st[i, mm] = s_cur[i, mm] + h * ks[2, i, mm]
            for i in range(d):
                acc = r2[idx, i]
                for j in range(d):
                    acc += A2[idx, i, j] * xt[j]
                kx[stage, i] = acc
                for mm in range(p):
                    acc2 = dr2[idx, i, mm]
                    for j in range(d):
                        acc2 += A2[idx, i, j] * st[j, mm] + dA2[idx, i, j, mm] * xt[j]
                    ks[stage, i, mm] = acc2
        bad = False
        for i in range(d):
            v = x_cur[i] + h / 6.0 * (kx[0, i] + 2 * kx[1, i] + 2 * kx[2, i] + kx[3, i])
            if not np.isfinite(v) or abs(v) > BLOWUP:
                bad = True
            X[n + 1, i] = v
            for mm in range(p):
                w = s_cur[i, mm] + h / 6.0 * (ks[0, i, mm] + 2 * ks[1, i, mm] + 2 * ks[2, i, mm] + ks[3, i, mm])
                if not np.isfinite(w):
                    bad = True
                S[n + 1, i, mm] = w
        if bad:
            return X, S, False, n + 1
    return X, S, True, -1
