"""Pure-numpy reference implementation of the solver kernels.

This is the fallback backend selected at import time when the compiled
extension is unavailable, and the behavioural reference the extension is
tested against.  Signatures and semantics here are canonical; `_core.pyx`
mirrors them one to one.

Conventions shared by both backends:
  * model kinds: 0 kinematic, 1 Pacejka (sim), 2 Pacejka (hardware); all
    operate on the augmented state [physical..., sigma0, sigma_delta]
  * params is the 20-entry vector produced by `pack_params`
  * curvature tables are sampled every `spacing` meters with a wrap seam
    of length `seam`; lookups interpolate linearly and wrap mod `length`
  * status codes: 0 ok, 1 Frenet singularity, 2 low-speed guard
"""

import math

import numpy as np

# params vector layout
P_T, P_LR, P_LF, P_MASS, P_IZ, P_GAMMA = 0, 1, 2, 3, 4, 5
P_DF, P_CF, P_BF, P_DR, P_CR, P_BR = 6, 7, 8, 9, 10, 11
P_CM1, P_CM2, P_CD, P_CD0, P_CD1, P_CD2, P_CROLL, P_VEPS = 12, 13, 14, 15, 16, 17, 18, 19
N_PARAMS = 20

OK, ERR_SINGULAR, ERR_LOW_SPEED = 0, 1, 2


def curvature_lookup(tab, spacing, seam, length, sigma):
    s = math.fmod(sigma, length)
    if s < 0.0:
        s += length
    nfull = len(tab) - 1
    j = int(math.floor(s / spacing))
    if j > nfull:
        j = nfull
    if j >= nfull:
        left, right = tab[nfull], tab[0]
        width = seam if seam > 0.0 else 1e-300
    else:
        left, right = tab[j], tab[j + 1]
        width = spacing
    frac = (s - j * spacing) / width
    return left + frac * (right - left)


def _step_aug(kind, par, tab, spacing, seam, length, x, out):
    """Augmented one-step map. Returns a status code, writes x_next to out."""
    sigma = x[0]
    d = x[1]
    phi = x[2]
    kappa = curvature_lookup(tab, spacing, seam, length, sigma)
    den = 1.0 - kappa * d
    if den <= 1e-9:
        return ERR_SINGULAR
    T = par[P_T]
    if kind == 0:
        v, a, delta = x[3], x[6], x[7]
        beta = math.atan(par[P_LR] / (par[P_LF] + par[P_LR]) * math.tan(delta))
        c = math.cos(phi + beta)
        out[0] = sigma + T * v * c / den
        out[1] = d + T * v * math.sin(phi + beta)
        out[2] = phi + T * (v / par[P_LF] * math.sin(beta) - kappa * v * c / den)
        out[3] = v + T * a
        out[4] = x[4]
        out[5] = out[0] - x[4]
        return OK

    r, v_x, v_y, tau, delta = x[3], x[4], x[5], x[8], x[9]
    if abs(v_x) <= par[P_VEPS]:
        return ERR_LOW_SPEED
    alpha_f = -math.atan2(-v_y - par[P_LF] * r, abs(v_x)) + delta
    alpha_r = -math.atan2(-v_y + par[P_LF] * r, abs(v_x))
    s_num = v_x * math.cos(phi) - v_y * math.sin(phi)
    out[0] = sigma + T * s_num / den
    out[1] = d + T * (v_x * math.sin(phi) + v_y * math.cos(phi))
    out[2] = phi + T * (r - kappa * s_num / den)
    mass = par[P_MASS]
    if kind == 1:
        F_f = -par[P_DF] * math.sin(par[P_CF] * math.atan(par[P_BF] * alpha_f))
        F_r = -par[P_DR] * math.sin(par[P_CR] * math.atan(par[P_BR] * alpha_r))
        F_m = (par[P_CM1] - par[P_CM2] * v_x) * tau - par[P_CD] * v_x * v_x - par[P_CROLL]
        out[3] = r + T / par[P_IZ] * (F_f * par[P_LF] * math.cos(delta) - F_r * par[P_LR])
        out[4] = v_x + T / mass * (F_m - F_f * math.sin(delta) + mass * v_y * r)
        out[5] = v_y + T / mass * (F_r + F_f * math.cos(delta) - mass * v_x * r)
    else:
        F_fr = math.copysign(1.0, v_x) * (
            -par[P_CD0] - par[P_CD1] * v_x - par[P_CD2] * v_x * v_x
        )
        F_m = (par[P_CM1] - par[P_CM2] * v_x) * tau
        F_fx = F_m * (1.0 - par[P_GAMMA])
        F_rx = F_m * par[P_GAMMA]
        F_fy = par[P_DF] * math.sin(par[P_CF] * math.atan(par[P_BF] * alpha_f))
        F_ry = par[P_DR] * math.sin(par[P_CR] * math.atan(par[P_BR] * alpha_r))
        out[3] = r + T / par[P_IZ] * (
            F_fy * par[P_LF] * math.cos(delta)
            + F_fx * par[P_LF] * math.sin(delta)
            - F_ry * par[P_LR]
        )
        out[4] = v_x + T * (
            (F_m - F_fy * math.sin(delta) + F_fx * math.cos(delta) + mass * v_y * r) / mass
            + F_fr
        )
        out[5] = v_y + T / mass * (
            F_ry + F_fy * math.cos(delta) + F_fx * math.sin(delta) - mass * v_x * r
        )
    nphys = 6
    out[nphys] = x[nphys]
    out[nphys + 1] = out[0] - x[nphys]
    return OK


def _xu(kind):
    return (6, 2) if kind == 0 else (8, 2)


def step(kind, par, tab, spacing, seam, length, x, u, x_next):
    n, m = _xu(kind)
    z = np.empty(n + m)
    z[:n] = x
    z[n:] = u
    return _step_aug(kind, par, tab, spacing, seam, length, z, x_next)


def rollout(kind, par, tab, spacing, seam, length, x0, U, X):
    n, m = _xu(kind)
    N1 = U.shape[0]
    X[0] = x0
    z = np.empty(n + m)
    for i in range(N1):
        z[:n] = X[i]
        z[n:] = U[i]
        status = _step_aug(kind, par, tab, spacing, seam, length, z, X[i + 1])
        if status != OK:
            return status
    return OK


def rollout_feedback(
    kind, par, tab, spacing, seam, length, Xref, Uref, kff, K, alpha, lo, hi, X, U
):
    n, m = _xu(kind)
    N1 = Uref.shape[0]
    X[0] = Xref[0]
    z = np.empty(n + m)
    for i in range(N1):
        du = alpha * kff[i] + K[i] @ (X[i] - Xref[i])
        U[i] = np.clip(Uref[i] + du, lo, hi)
        z[:n] = X[i]
        z[n:] = U[i]
        status = _step_aug(kind, par, tab, spacing, seam, length, z, X[i + 1])
        if status != OK:
            return status
    return OK


def linearize_traj(kind, par, tab, spacing, seam, length, X, U, h, analytic, A, B):
    n, m = _xu(kind)
    N1 = U.shape[0]
    if analytic and kind == 0:
        for i in range(N1):
            _kin_jac(par, tab, spacing, seam, length, X[i], U[i], A[i], B[i])
        return OK
    zp = np.empty(n + m)
    fp = np.empty(n)
    fm = np.empty(n)
    for i in range(N1):
        base = np.concatenate([X[i], U[i]])
        for j in range(n + m):
            zp[:] = base
            zp[j] = base[j] + h
            status = _step_aug(kind, par, tab, spacing, seam, length, zp, fp)
            if status != OK:
                return status
            zp[j] = base[j] - h
            status = _step_aug(kind, par, tab, spacing, seam, length, zp, fm)
            if status != OK:
                return status
            col = (fp - fm) / (2.0 * h)
            if j < n:
                A[i][:, j] = col
            else:
                B[i][:, j - n] = col
    return OK


def _kin_jac(par, tab, spacing, seam, length, x, u, A, B):
    """Analytic Jacobian of the augmented kinematic step."""
    sigma, d, phi, v = x[0], x[1], x[2], x[3]
    delta = u[1]
    kappa = curvature_lookup(tab, spacing, seam, length, sigma)
    # table slope at sigma (piecewise constant between nodes)
    s = math.fmod(sigma, length)
    if s < 0.0:
        s += length
    nfull = len(tab) - 1
    j = min(int(math.floor(s / spacing)), nfull)
    if j >= nfull:
        width = seam if seam > 0.0 else 1e-300
        kslope = (tab[0] - tab[nfull]) / width
    else:
        kslope = (tab[j + 1] - tab[j]) / spacing
    den = 1.0 - kappa * d
    T = par[P_T]
    rho = par[P_LR] / (par[P_LF] + par[P_LR])
    t = math.tan(delta)
    beta = math.atan(rho * t)
    dbeta = rho * (1.0 + t * t) / (1.0 + rho * rho * t * t)
    c = math.cos(phi + beta)
    sn = math.sin(phi + beta)

    A[:] = 0.0
    B[:] = 0.0
    for i in range(6):
        A[i, i] = 1.0
    A[5, 5] = 0.0
    A[0, 0] = 1.0 + T * v * c * d * kslope / den**2
    A[0, 1] = T * v * c * kappa / den**2
    A[0, 2] = -T * v * sn / den
    A[0, 3] = T * c / den
    A[1, 2] = T * v * c
    A[1, 3] = T * sn
    A[2, 0] = -T * v * c * kslope / den**2
    A[2, 1] = -T * v * c * kappa * kappa / den**2
    A[2, 2] = 1.0 + T * kappa * v * sn / den
    A[2, 3] = T * (math.sin(beta) / par[P_LF] - kappa * c / den)
    # sigma_delta row tracks the sigma row, minus the sigma0 anchor
    A[5, 0] = A[0, 0]
    A[5, 1] = A[0, 1]
    A[5, 2] = A[0, 2]
    A[5, 3] = A[0, 3]
    A[5, 4] = -1.0

    B[0, 1] = -T * v * sn * dbeta / den
    B[1, 1] = T * v * c * dbeta
    B[2, 1] = T * v * (math.cos(beta) / par[P_LF] + kappa * sn / den) * dbeta
    B[3, 0] = T
    B[5, 1] = B[0, 1]
    return OK


def eval_cost(X, U, q, p, mu, d_idx, w_tight, v_idx, v_cap):
    """Total objective: sum_i q_i.z^2 + p_i.z + squared-hinge penalties."""
    N1, m = U.shape
    n = X.shape[1]
    total = 0.0
    for i in range(N1):
        for j in range(n):
            zj = X[i, j]
            total += q[i, j] * zj * zj + p[i, j] * zj
        for j in range(m):
            zj = U[i, j]
            total += q[i, n + j] * zj * zj + p[i, n + j] * zj
        if d_idx >= 0:
            e = abs(X[i, d_idx]) - w_tight
            if e > 0.0:
                total += mu * e * e
        if v_idx >= 0:
            e = X[i, v_idx] - v_cap
            if e > 0.0:
                total += mu * e * e
    return total


def quadratize(X, U, q, p, mu, d_idx, w_tight, v_idx, v_cap, hx, hu, gx, gu):
    """Diagonal Hessians and gradients of the stage costs along (X, U)."""
    N1, m = U.shape
    n = X.shape[1]
    for i in range(N1):
        for j in range(n):
            hx[i, j] = 2.0 * q[i, j]
            gx[i, j] = 2.0 * q[i, j] * X[i, j] + p[i, j]
        for j in range(m):
            hu[i, j] = 2.0 * q[i, n + j]
            gu[i, j] = 2.0 * q[i, n + j] * U[i, j] + p[i, n + j]
        if d_idx >= 0:
            e = abs(X[i, d_idx]) - w_tight
            if e > 0.0:
                sign = 1.0 if X[i, d_idx] >= 0.0 else -1.0
                gx[i, d_idx] += 2.0 * mu * e * sign
                hx[i, d_idx] += 2.0 * mu
        if v_idx >= 0:
            e = X[i, v_idx] - v_cap
            if e > 0.0:
                gx[i, v_idx] += 2.0 * mu * e
                hx[i, v_idx] += 2.0 * mu


def _solve_box_qp(Quu, Qu, bl, bu, tol=1e-12):
    """Exact box QP by active-set enumeration (m is small).

    Returns (w, mask, ok). Combination order is deterministic: all-free
    first, then lexicographic in base 3 (0 free, 1 lower, 2 upper).
    """
    m = len(Qu)
    for code in range(3**m):
        state = []
        c = code
        for _ in range(m):
            state.append(c % 3)
            c //= 3
        w = np.empty(m)
        free = [j for j in range(m) if state[j] == 0]
        fixed = [j for j in range(m) if state[j] != 0]
        valid = True
        for j in fixed:
            w[j] = bl[j] if state[j] == 1 else bu[j]
            if not np.isfinite(w[j]):
                valid = False
                break
        if not valid:
            continue
        if free:
            rhs = -Qu[free].copy()
            if fixed:
                rhs -= Quu[np.ix_(free, fixed)] @ w[fixed]
            Hff = Quu[np.ix_(free, free)]
            try:
                L = np.linalg.cholesky(Hff)
            except np.linalg.LinAlgError:
                return w, np.ones(m, dtype=np.uint8), False
            wf = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
            w[free] = wf
            if np.any(wf < bl[free] - tol) or np.any(wf > bu[free] + tol):
                continue
        grad = Quu @ w + Qu
        ok = True
        for j in fixed:
            if state[j] == 1 and grad[j] < -tol:
                ok = False
                break
            if state[j] == 2 and grad[j] > tol:
                ok = False
                break
        if not ok:
            continue
        mask = np.array([1 if state[j] != 0 else 0 for j in range(m)], dtype=np.uint8)
        return w, mask, True
    return np.zeros(m), np.ones(m, dtype=np.uint8), False


def backward_sweep(A, B, hx, hu, gx, gu, U, lo, hi, reg, kff, K, mask, dv):
    """Riccati sweep with box-constrained input subproblems.

    Writes feedforward steps, feedback gains and active-bound masks;
    dv[0], dv[1] receive the linear/quadratic expected-improvement terms.
    Returns 0, or 1 when a stage Hessian is not positive definite.
    """
    N1, n, m = B.shape
    Vxx = np.zeros((n, n))
    vx = np.zeros(n)
    dv[0] = 0.0
    dv[1] = 0.0
    eye = np.eye(n)
    for i in range(N1 - 1, -1, -1):
        Ai, Bi = A[i], B[i]
        Vr = Vxx + reg * eye
        Qx = gx[i] + Ai.T @ vx
        Qu = gu[i] + Bi.T @ vx
        Qxx = np.diag(hx[i]) + Ai.T @ Vr @ Ai
        Quu = np.diag(hu[i]) + Bi.T @ Vr @ Bi
        Qux = Bi.T @ Vr @ Ai
        bl = lo - U[i]
        bu = hi - U[i]
        w, mk, ok = _solve_box_qp(Quu, Qu, bl, bu)
        if not ok:
            return 1
        kff[i] = w
        mask[i] = mk
        Ki = np.zeros((m, n))
        free = np.where(mk == 0)[0]
        if len(free):
            Hff = Quu[np.ix_(free, free)]
            try:
                L = np.linalg.cholesky(Hff)
            except np.linalg.LinAlgError:
                return 1
            rhs = -Qux[free]
            Ki[free] = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        K[i] = Ki
        dv[0] += w @ Qu
        dv[1] += 0.5 * w @ Quu @ w
        vx = Qx + Ki.T @ (Quu @ w) + Ki.T @ Qu + Qux.T @ w
        Vxx = Qxx + Ki.T @ Quu @ Ki + Ki.T @ Qux + Qux.T @ Ki
        Vxx = 0.5 * (Vxx + Vxx.T)
    return 0


def lqr_adjoint(A, B, hx, hu, mask, gX, gU, reg, dX, dU):
    """Solve the LQR system of the converged quadratization for the
    perturbation driven by linear terms (gX, gU), with zero initial state
    and clamped input coordinates frozen.  Used by the solution-gradient
    pass; gX has N+2 rows (a terminal row), gU has N+1.
    """
    N1, n, m = B.shape
    eye = np.eye(n)
    Vxx = np.zeros((n, n))
    vx = gX[N1].copy()
    ks = np.empty((N1, m))
    Ks = np.empty((N1, m, n))
    for i in range(N1 - 1, -1, -1):
        Ai, Bi = A[i], B[i]
        Vr = Vxx + reg * eye
        Qx = gX[i] + Ai.T @ vx
        Qu = gU[i] + Bi.T @ vx
        Qxx = np.diag(hx[i]) + Ai.T @ Vr @ Ai
        Quu = np.diag(hu[i]) + Bi.T @ Vr @ Bi
        Qux = Bi.T @ Vr @ Ai
        ki = np.zeros(m)
        Ki = np.zeros((m, n))
        free = np.where(mask[i] == 0)[0]
        if len(free):
            Hff = Quu[np.ix_(free, free)]
            try:
                L = np.linalg.cholesky(Hff)
            except np.linalg.LinAlgError:
                return 1
            ki[free] = np.linalg.solve(L.T, np.linalg.solve(L, -Qu[free]))
            Ks_free = np.linalg.solve(L.T, np.linalg.solve(L, -Qux[free]))
            Ki[free] = Ks_free
        ks[i] = ki
        Ks[i] = Ki
        vx = Qx + Ki.T @ (Quu @ ki) + Ki.T @ Qu + Qux.T @ ki
        Vxx = Qxx + Ki.T @ Quu @ Ki + Ki.T @ Qux + Qux.T @ Ki
        Vxx = 0.5 * (Vxx + Vxx.T)
    dX[0] = 0.0
    for i in range(N1):
        dU[i] = ks[i] + Ks[i] @ dX[i]
        dX[i + 1] = A[i] @ dX[i] + B[i] @ dU[i]
    return 0
