# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled solver kernels; mirrors `_pyref` one to one.

Dimensions are small and fixed (n <= 16 states, m <= 4 inputs), so all
linear algebra runs on stack buffers without BLAS round trips.
"""

from libc.math cimport atan, atan2, cos, fabs, floor, fmod, isfinite, sin, sqrt, tan

import numpy as np

DEF MAXN = 16
DEF MAXM = 4

cdef int OK = 0
cdef int ERR_SINGULAR = 1
cdef int ERR_LOW_SPEED = 2

# params vector layout (matches _pyref)
cdef enum:
    P_T, P_LR, P_LF, P_MASS, P_IZ, P_GAMMA, \
    P_DF, P_CF, P_BF, P_DR, P_CR, P_BR, \
    P_CM1, P_CM2, P_CD, P_CD0, P_CD1, P_CD2, P_CROLL, P_VEPS


cdef inline double _kappa(const double[::1] tab, double spacing, double seam,
                          double length, double sigma) nogil:
    cdef double s = fmod(sigma, length)
    cdef Py_ssize_t nfull, j
    cdef double left, right, width
    if s < 0.0:
        s += length
    nfull = tab.shape[0] - 1
    j = <Py_ssize_t>floor(s / spacing)
    if j > nfull:
        j = nfull
    if j >= nfull:
        left = tab[nfull]
        right = tab[0]
        width = seam if seam > 0.0 else 1e-300
    else:
        left = tab[j]
        right = tab[j + 1]
        width = spacing
    return left + (s - j * spacing) / width * (right - left)


cdef inline double _kappa_slope(const double[::1] tab, double spacing, double seam,
                                double length, double sigma) nogil:
    cdef double s = fmod(sigma, length)
    cdef Py_ssize_t nfull, j
    cdef double width
    if s < 0.0:
        s += length
    nfull = tab.shape[0] - 1
    j = <Py_ssize_t>floor(s / spacing)
    if j > nfull:
        j = nfull
    if j >= nfull:
        width = seam if seam > 0.0 else 1e-300
        return (tab[0] - tab[nfull]) / width
    return (tab[j + 1] - tab[j]) / spacing


cdef int _step_aug(int kind, const double[::1] par, const double[::1] tab,
                   double spacing, double seam, double length,
                   const double* x, double* out) nogil:
    cdef double sigma = x[0]
    cdef double d = x[1]
    cdef double phi = x[2]
    cdef double kappa = _kappa(tab, spacing, seam, length, sigma)
    cdef double den = 1.0 - kappa * d
    cdef double T, v, a, delta, beta, c
    cdef double r, v_x, v_y, tau, alpha_f, alpha_r, s_num, mass
    cdef double F_f, F_r, F_m, F_fr, F_fx, F_rx, F_fy, F_ry
    if den <= 1e-9:
        return ERR_SINGULAR
    T = par[P_T]
    if kind == 0:
        v = x[3]
        a = x[6]
        delta = x[7]
        beta = atan(par[P_LR] / (par[P_LF] + par[P_LR]) * tan(delta))
        c = cos(phi + beta)
        out[0] = sigma + T * v * c / den
        out[1] = d + T * v * sin(phi + beta)
        out[2] = phi + T * (v / par[P_LF] * sin(beta) - kappa * v * c / den)
        out[3] = v + T * a
        out[4] = x[4]
        out[5] = out[0] - x[4]
        return OK

    r = x[3]
    v_x = x[4]
    v_y = x[5]
    tau = x[8]
    delta = x[9]
    if fabs(v_x) <= par[P_VEPS]:
        return ERR_LOW_SPEED
    alpha_f = -atan2(-v_y - par[P_LF] * r, fabs(v_x)) + delta
    alpha_r = -atan2(-v_y + par[P_LF] * r, fabs(v_x))
    s_num = v_x * cos(phi) - v_y * sin(phi)
    out[0] = sigma + T * s_num / den
    out[1] = d + T * (v_x * sin(phi) + v_y * cos(phi))
    out[2] = phi + T * (r - kappa * s_num / den)
    mass = par[P_MASS]
    if kind == 1:
        F_f = -par[P_DF] * sin(par[P_CF] * atan(par[P_BF] * alpha_f))
        F_r = -par[P_DR] * sin(par[P_CR] * atan(par[P_BR] * alpha_r))
        F_m = (par[P_CM1] - par[P_CM2] * v_x) * tau - par[P_CD] * v_x * v_x - par[P_CROLL]
        out[3] = r + T / par[P_IZ] * (F_f * par[P_LF] * cos(delta) - F_r * par[P_LR])
        out[4] = v_x + T / mass * (F_m - F_f * sin(delta) + mass * v_y * r)
        out[5] = v_y + T / mass * (F_r + F_f * cos(delta) - mass * v_x * r)
    else:
        F_fr = (1.0 if v_x >= 0.0 else -1.0) * (
            -par[P_CD0] - par[P_CD1] * v_x - par[P_CD2] * v_x * v_x)
        F_m = (par[P_CM1] - par[P_CM2] * v_x) * tau
        F_fx = F_m * (1.0 - par[P_GAMMA])
        F_rx = F_m * par[P_GAMMA]
        F_fy = par[P_DF] * sin(par[P_CF] * atan(par[P_BF] * alpha_f))
        F_ry = par[P_DR] * sin(par[P_CR] * atan(par[P_BR] * alpha_r))
        out[3] = r + T / par[P_IZ] * (
            F_fy * par[P_LF] * cos(delta) + F_fx * par[P_LF] * sin(delta)
            - F_ry * par[P_LR])
        out[4] = v_x + T * (
            (F_m - F_fy * sin(delta) + F_fx * cos(delta) + mass * v_y * r) / mass + F_fr)
        out[5] = v_y + T / mass * (
            F_ry + F_fy * cos(delta) + F_fx * sin(delta) - mass * v_x * r)
    out[6] = x[6]
    out[7] = out[0] - x[6]
    return OK


cdef inline void _dims(int kind, int* n, int* m) nogil:
    if kind == 0:
        n[0] = 6
    else:
        n[0] = 8
    m[0] = 2


def step(int kind, const double[::1] par, const double[::1] tab, double spacing,
         double seam, double length, const double[::1] x, const double[::1] u,
         double[::1] x_next):
    cdef double z[MAXN + MAXM]
    cdef double out[MAXN]
    cdef int n, m, j, status
    _dims(kind, &n, &m)
    for j in range(n):
        z[j] = x[j]
    for j in range(m):
        z[n + j] = u[j]
    status = _step_aug(kind, par, tab, spacing, seam, length, z, out)
    if status == OK:
        for j in range(n):
            x_next[j] = out[j]
    return status


def rollout(int kind, const double[::1] par, const double[::1] tab, double spacing,
            double seam, double length, const double[::1] x0,
            const double[:, ::1] U, double[:, ::1] X):
    cdef int n, m, i, j, status
    cdef Py_ssize_t N1 = U.shape[0]
    cdef double z[MAXN + MAXM]
    cdef double out[MAXN]
    _dims(kind, &n, &m)
    for j in range(n):
        X[0, j] = x0[j]
    for i in range(N1):
        for j in range(n):
            z[j] = X[i, j]
        for j in range(m):
            z[n + j] = U[i, j]
        status = _step_aug(kind, par, tab, spacing, seam, length, z, out)
        if status != OK:
            return status
        for j in range(n):
            X[i + 1, j] = out[j]
    return OK


def rollout_feedback(int kind, const double[::1] par, const double[::1] tab,
                     double spacing, double seam, double length,
                     const double[:, ::1] Xref, const double[:, ::1] Uref,
                     const double[:, ::1] kff, const double[:, :, ::1] K,
                     double alpha, const double[::1] lo, const double[::1] hi,
                     double[:, ::1] X, double[:, ::1] U):
    cdef int n, m, i, j, jj, status
    cdef Py_ssize_t N1 = Uref.shape[0]
    cdef double z[MAXN + MAXM]
    cdef double out[MAXN]
    cdef double du, uj
    _dims(kind, &n, &m)
    for j in range(n):
        X[0, j] = Xref[0, j]
    for i in range(N1):
        for j in range(m):
            du = alpha * kff[i, j]
            for jj in range(n):
                du += K[i, j, jj] * (X[i, jj] - Xref[i, jj])
            uj = Uref[i, j] + du
            if uj < lo[j]:
                uj = lo[j]
            if uj > hi[j]:
                uj = hi[j]
            U[i, j] = uj
        for j in range(n):
            z[j] = X[i, j]
        for j in range(m):
            z[n + j] = U[i, j]
        status = _step_aug(kind, par, tab, spacing, seam, length, z, out)
        if status != OK:
            return status
        for j in range(n):
            X[i + 1, j] = out[j]
    return OK


cdef void _kin_jac(const double[::1] par, const double[::1] tab, double spacing,
                   double seam, double length, const double[:] x, const double[:] u,
                   double[:, :] A, double[:, :] B) nogil:
    cdef double sigma = x[0]
    cdef double d = x[1]
    cdef double phi = x[2]
    cdef double v = x[3]
    cdef double delta = u[1]
    cdef double kappa = _kappa(tab, spacing, seam, length, sigma)
    cdef double kslope = _kappa_slope(tab, spacing, seam, length, sigma)
    cdef double den = 1.0 - kappa * d
    cdef double T = par[P_T]
    cdef double rho = par[P_LR] / (par[P_LF] + par[P_LR])
    cdef double t = tan(delta)
    cdef double beta = atan(rho * t)
    cdef double dbeta = rho * (1.0 + t * t) / (1.0 + rho * rho * t * t)
    cdef double c = cos(phi + beta)
    cdef double sn = sin(phi + beta)
    cdef double den2 = den * den
    cdef int i, j
    for i in range(6):
        for j in range(6):
            A[i, j] = 1.0 if i == j else 0.0
        B[i, 0] = 0.0
        B[i, 1] = 0.0
    A[5, 5] = 0.0
    A[0, 0] = 1.0 + T * v * c * d * kslope / den2
    A[0, 1] = T * v * c * kappa / den2
    A[0, 2] = -T * v * sn / den
    A[0, 3] = T * c / den
    A[1, 2] = T * v * c
    A[1, 3] = T * sn
    A[2, 0] = -T * v * c * kslope / den2
    A[2, 1] = -T * v * c * kappa * kappa / den2
    A[2, 2] = 1.0 + T * kappa * v * sn / den
    A[2, 3] = T * (sin(beta) / par[P_LF] - kappa * c / den)
    A[5, 0] = A[0, 0]
    A[5, 1] = A[0, 1]
    A[5, 2] = A[0, 2]
    A[5, 3] = A[0, 3]
    A[5, 4] = -1.0
    B[0, 1] = -T * v * sn * dbeta / den
    B[1, 1] = T * v * c * dbeta
    B[2, 1] = T * v * (cos(beta) / par[P_LF] + kappa * sn / den) * dbeta
    B[3, 0] = T
    B[5, 1] = B[0, 1]


def linearize_traj(int kind, const double[::1] par, const double[::1] tab,
                   double spacing, double seam, double length,
                   const double[:, ::1] X, const double[:, ::1] U, double h,
                   int analytic, double[:, :, ::1] A, double[:, :, ::1] B):
    cdef int n, m, i, j, jj, status
    cdef Py_ssize_t N1 = U.shape[0]
    cdef double base[MAXN + MAXM]
    cdef double zp[MAXN + MAXM]
    cdef double fp[MAXN]
    cdef double fm[MAXN]
    cdef double col
    _dims(kind, &n, &m)
    if analytic and kind == 0:
        for i in range(N1):
            _kin_jac(par, tab, spacing, seam, length, X[i], U[i], A[i], B[i])
        return OK
    for i in range(N1):
        for j in range(n):
            base[j] = X[i, j]
        for j in range(m):
            base[n + j] = U[i, j]
        for j in range(n + m):
            for jj in range(n + m):
                zp[jj] = base[jj]
            zp[j] = base[j] + h
            status = _step_aug(kind, par, tab, spacing, seam, length, zp, fp)
            if status != OK:
                return status
            zp[j] = base[j] - h
            status = _step_aug(kind, par, tab, spacing, seam, length, zp, fm)
            if status != OK:
                return status
            for jj in range(n):
                col = (fp[jj] - fm[jj]) / (2.0 * h)
                if j < n:
                    A[i, jj, j] = col
                else:
                    B[i, jj, j - n] = col
    return OK


def eval_cost(const double[:, ::1] X, const double[:, ::1] U,
              const double[:, ::1] q, const double[:, ::1] p, double mu,
              int d_idx, double w_tight, int v_idx, double v_cap):
    cdef Py_ssize_t N1 = U.shape[0]
    cdef Py_ssize_t n = X.shape[1]
    cdef Py_ssize_t m = U.shape[1]
    cdef double total = 0.0
    cdef double zj, e
    cdef Py_ssize_t i, j
    for i in range(N1):
        for j in range(n):
            zj = X[i, j]
            total += q[i, j] * zj * zj + p[i, j] * zj
        for j in range(m):
            zj = U[i, j]
            total += q[i, n + j] * zj * zj + p[i, n + j] * zj
        if d_idx >= 0:
            e = fabs(X[i, d_idx]) - w_tight
            if e > 0.0:
                total += mu * e * e
        if v_idx >= 0:
            e = X[i, v_idx] - v_cap
            if e > 0.0:
                total += mu * e * e
    return total


def quadratize(const double[:, ::1] X, const double[:, ::1] U,
               const double[:, ::1] q, const double[:, ::1] p, double mu,
               int d_idx, double w_tight, int v_idx, double v_cap,
               double[:, ::1] hx, double[:, ::1] hu,
               double[:, ::1] gx, double[:, ::1] gu):
    cdef Py_ssize_t N1 = U.shape[0]
    cdef Py_ssize_t n = X.shape[1]
    cdef Py_ssize_t m = U.shape[1]
    cdef double e, sign
    cdef Py_ssize_t i, j
    for i in range(N1):
        for j in range(n):
            hx[i, j] = 2.0 * q[i, j]
            gx[i, j] = 2.0 * q[i, j] * X[i, j] + p[i, j]
        for j in range(m):
            hu[i, j] = 2.0 * q[i, n + j]
            gu[i, j] = 2.0 * q[i, n + j] * U[i, j] + p[i, n + j]
        if d_idx >= 0:
            e = fabs(X[i, d_idx]) - w_tight
            if e > 0.0:
                sign = 1.0 if X[i, d_idx] >= 0.0 else -1.0
                gx[i, d_idx] += 2.0 * mu * e * sign
                hx[i, d_idx] += 2.0 * mu
        if v_idx >= 0:
            e = X[i, v_idx] - v_cap
            if e > 0.0:
                gx[i, v_idx] += 2.0 * mu * e
                hx[i, v_idx] += 2.0 * mu
    return 0


cdef int _cholesky(double* H, double* L, int mm) nogil:
    """L (lower) of an mm x mm matrix stored row-major; 0 on success."""
    cdef int i, j, k
    cdef double s
    for i in range(mm * mm):
        L[i] = 0.0
    for k in range(mm):
        s = H[k * mm + k]
        for j in range(k):
            s -= L[k * mm + j] * L[k * mm + j]
        if s <= 0.0:
            return 1
        L[k * mm + k] = sqrt(s)
        for i in range(k + 1, mm):
            s = H[i * mm + k]
            for j in range(k):
                s -= L[i * mm + j] * L[k * mm + j]
            L[i * mm + k] = s / L[k * mm + k]
    return 0


cdef void _chol_solve(const double* L, const double* b, double* x, int mm) nogil:
    cdef int i, j
    cdef double s
    for i in range(mm):
        s = b[i]
        for j in range(i):
            s -= L[i * mm + j] * x[j]
        x[i] = s / L[i * mm + i]
    for i in range(mm - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, mm):
            s -= L[j * mm + i] * x[j]
        x[i] = s / L[i * mm + i]


cdef int _solve_box_qp(const double* Quu, const double* Qu, const double* bl,
                       const double* bu, int m, double* w, unsigned char* mask) nogil:
    """Exact enumeration box QP (m <= MAXM); 0 on success, 1 if not PD."""
    cdef int code, c, j, jj, nf, valid, combos
    cdef int state[MAXM]
    cdef int free_idx[MAXM]
    cdef double Hff[MAXM * MAXM]
    cdef double Lf[MAXM * MAXM]
    cdef double rhs[MAXM]
    cdef double wf[MAXM]
    cdef double grad[MAXM]
    cdef double tol = 1e-12
    combos = 1
    for j in range(m):
        combos *= 3
    for code in range(combos):
        c = code
        nf = 0
        for j in range(m):
            state[j] = c % 3
            c //= 3
        valid = 1
        for j in range(m):
            if state[j] == 1:
                w[j] = bl[j]
            elif state[j] == 2:
                w[j] = bu[j]
            if state[j] != 0 and not isfinite(w[j]):
                valid = 0
                break
        if not valid:
            continue
        for j in range(m):
            if state[j] == 0:
                free_idx[nf] = j
                nf += 1
        if nf > 0:
            for j in range(nf):
                rhs[j] = -Qu[free_idx[j]]
                for jj in range(m):
                    if state[jj] != 0:
                        rhs[j] -= Quu[free_idx[j] * m + jj] * w[jj]
                for jj in range(nf):
                    Hff[j * nf + jj] = Quu[free_idx[j] * m + free_idx[jj]]
            if _cholesky(Hff, Lf, nf):
                return 1
            _chol_solve(Lf, rhs, wf, nf)
            valid = 1
            for j in range(nf):
                if wf[j] < bl[free_idx[j]] - tol or wf[j] > bu[free_idx[j]] + tol:
                    valid = 0
                    break
            if not valid:
                continue
            for j in range(nf):
                w[free_idx[j]] = wf[j]
        for j in range(m):
            grad[j] = Qu[j]
            for jj in range(m):
                grad[j] += Quu[j * m + jj] * w[jj]
        valid = 1
        for j in range(m):
            if state[j] == 1 and grad[j] < -tol:
                valid = 0
                break
            if state[j] == 2 and grad[j] > tol:
                valid = 0
                break
        if not valid:
            continue
        for j in range(m):
            mask[j] = 1 if state[j] != 0 else 0
        return 0
    for j in range(m):
        w[j] = 0.0
        mask[j] = 1
    return 1


def backward_sweep(const double[:, :, ::1] A, const double[:, :, ::1] B,
                   const double[:, ::1] hx, const double[:, ::1] hu,
                   const double[:, ::1] gx, const double[:, ::1] gu,
                   const double[:, ::1] U, const double[::1] lo,
                   const double[::1] hi, double reg,
                   double[:, ::1] kff, double[:, :, ::1] K,
                   unsigned char[:, ::1] mask, double[::1] dv):
    cdef Py_ssize_t N1 = B.shape[0]
    cdef int n = <int>B.shape[1]
    cdef int m = <int>B.shape[2]
    cdef double Vxx[MAXN * MAXN]
    cdef double Vr[MAXN * MAXN]
    cdef double vx[MAXN]
    cdef double Qx[MAXN]
    cdef double Qu[MAXM]
    cdef double Qxx[MAXN * MAXN]
    cdef double Quu[MAXM * MAXM]
    cdef double Qux[MAXM * MAXN]
    cdef double AtV[MAXN * MAXN]
    cdef double BtV[MAXM * MAXN]
    cdef double w[MAXM]
    cdef double bl[MAXM]
    cdef double bu[MAXM]
    cdef unsigned char mk[MAXM]
    cdef double Hff[MAXM * MAXM]
    cdef double Lf[MAXM * MAXM]
    cdef double rhs[MAXM]
    cdef double sol[MAXM]
    cdef double Ki[MAXM * MAXN]
    cdef int free_idx[MAXM]
    cdef int i_, i, j, k_, nf
    cdef double s, quk_j
    cdef double Quuk[MAXM]
    cdef double tmp_vx[MAXN]

    if n > MAXN or m > MAXM:
        raise ValueError(f"kernel supports n <= {MAXN}, m <= {MAXM}")

    for i in range(n * n):
        Vxx[i] = 0.0
    for i in range(n):
        vx[i] = 0.0
    dv[0] = 0.0
    dv[1] = 0.0

    for i_ in range(N1 - 1, -1, -1):
        # Vr = Vxx + reg*I
        for i in range(n):
            for j in range(n):
                Vr[i * n + j] = Vxx[i * n + j]
            Vr[i * n + i] += reg
        # AtV = A^T Vr ; BtV = B^T Vr
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k_ in range(n):
                    s += A[i_, k_, i] * Vr[k_ * n + j]
                AtV[i * n + j] = s
        for i in range(m):
            for j in range(n):
                s = 0.0
                for k_ in range(n):
                    s += B[i_, k_, i] * Vr[k_ * n + j]
                BtV[i * n + j] = s
        # Qx, Qu
        for i in range(n):
            s = gx[i_, i]
            for k_ in range(n):
                s += A[i_, k_, i] * vx[k_]
            Qx[i] = s
        for i in range(m):
            s = gu[i_, i]
            for k_ in range(n):
                s += B[i_, k_, i] * vx[k_]
            Qu[i] = s
        # Qxx = diag(hx) + AtV A ; Quu = diag(hu) + BtV B ; Qux = BtV A
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k_ in range(n):
                    s += AtV[i * n + k_] * A[i_, k_, j]
                Qxx[i * n + j] = s
            Qxx[i * n + i] += hx[i_, i]
        for i in range(m):
            for j in range(m):
                s = 0.0
                for k_ in range(n):
                    s += BtV[i * n + k_] * B[i_, k_, j]
                Quu[i * m + j] = s
            Quu[i * m + i] += hu[i_, i]
            for j in range(n):
                s = 0.0
                for k_ in range(n):
                    s += BtV[i * n + k_] * A[i_, k_, j]
                Qux[i * n + j] = s
        for j in range(m):
            bl[j] = lo[j] - U[i_, j]
            bu[j] = hi[j] - U[i_, j]
        if _solve_box_qp(Quu, Qu, bl, bu, m, w, mk):
            return 1
        nf = 0
        for j in range(m):
            kff[i_, j] = w[j]
            mask[i_, j] = mk[j]
            if mk[j] == 0:
                free_idx[nf] = j
                nf += 1
        # K rows: free rows solve Quu_ff K = -Qux_f, clamped rows zero
        for i in range(m):
            for j in range(n):
                Ki[i * n + j] = 0.0
        if nf > 0:
            for i in range(nf):
                for j in range(nf):
                    Hff[i * nf + j] = Quu[free_idx[i] * m + free_idx[j]]
            if _cholesky(Hff, Lf, nf):
                return 1
            for j in range(n):
                for i in range(nf):
                    rhs[i] = -Qux[free_idx[i] * n + j]
                _chol_solve(Lf, rhs, sol, nf)
                for i in range(nf):
                    Ki[free_idx[i] * n + j] = sol[i]
        for i in range(m):
            for j in range(n):
                K[i_, i, j] = Ki[i * n + j]
        # expected improvement terms
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += Quu[i * m + j] * w[j]
            Quuk[i] = s
        for i in range(m):
            dv[0] += w[i] * Qu[i]
            dv[1] += 0.5 * w[i] * Quuk[i]
        # vx_new = Qx + K^T (Quu w + Qu) + Qux^T w
        for i in range(n):
            s = Qx[i]
            for j in range(m):
                s += Ki[j * n + i] * (Quuk[j] + Qu[j])
                s += Qux[j * n + i] * w[j]
            tmp_vx[i] = s
        # Vxx_new = Qxx + K^T Quu K + K^T Qux + Qux^T K (symmetrized)
        for i in range(n):
            for j in range(n):
                s = Qxx[i * n + j]
                for k_ in range(m):
                    quk_j = 0.0
                    for Jj in range(m):
                        quk_j += Quu[k_ * m + Jj] * Ki[Jj * n + j]
                    s += Ki[k_ * n + i] * quk_j
                    s += Ki[k_ * n + i] * Qux[k_ * n + j]
                    s += Qux[k_ * n + i] * Ki[k_ * n + j]
                Vxx[i * n + j] = s
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.5 * (Vxx[i * n + j] + Vxx[j * n + i])
                Vxx[i * n + j] = s
                Vxx[j * n + i] = s
        for i in range(n):
            vx[i] = tmp_vx[i]
    return 0


def lqr_adjoint(const double[:, :, ::1] A, const double[:, :, ::1] B,
                const double[:, ::1] hx, const double[:, ::1] hu,
                const unsigned char[:, ::1] mask,
                const double[:, ::1] gX, const double[:, ::1] gU, double reg,
                double[:, ::1] dX, double[:, ::1] dU):
    cdef Py_ssize_t N1 = B.shape[0]
    cdef int n = <int>B.shape[1]
    cdef int m = <int>B.shape[2]
    cdef double Vxx[MAXN * MAXN]
    cdef double Vr[MAXN * MAXN]
    cdef double vx[MAXN]
    cdef double Qx[MAXN]
    cdef double Qu[MAXM]
    cdef double Qxx[MAXN * MAXN]
    cdef double Quu[MAXM * MAXM]
    cdef double Qux[MAXM * MAXN]
    cdef double AtV[MAXN * MAXN]
    cdef double BtV[MAXM * MAXN]
    cdef double Hff[MAXM * MAXM]
    cdef double Lf[MAXM * MAXM]
    cdef double rhs[MAXM]
    cdef double sol[MAXM]
    cdef double kvec[MAXM]
    cdef double Ki[MAXM * MAXN]
    cdef double Quuk[MAXM]
    cdef double tmp_vx[MAXN]
    cdef int free_idx[MAXM]
    cdef int i_, i, j, k_, nf, Jj
    cdef double s, quk_j

    if n > MAXN or m > MAXM:
        raise ValueError(f"kernel supports n <= {MAXN}, m <= {MAXM}")

    # gains are recomputed per stage and stored densely for the forward pass
    ks_arr = np.empty((N1, m))
    Ks_arr = np.empty((N1, m, n))
    cdef double[:, ::1] ks = ks_arr
    cdef double[:, :, ::1] Ks = Ks_arr

    for i in range(n * n):
        Vxx[i] = 0.0
    for i in range(n):
        vx[i] = gX[N1, i]

    for i_ in range(N1 - 1, -1, -1):
        for i in range(n):
            for j in range(n):
                Vr[i * n + j] = Vxx[i * n + j]
            Vr[i * n + i] += reg
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k_ in range(n):
                    s += A[i_, k_, i] * Vr[k_ * n + j]
                AtV[i * n + j] = s
        for i in range(m):
            for j in range(n):
                s = 0.0
                for k_ in range(n):
                    s += B[i_, k_, i] * Vr[k_ * n + j]
                BtV[i * n + j] = s
        for i in range(n):
            s = gX[i_, i]
            for k_ in range(n):
                s += A[i_, k_, i] * vx[k_]
            Qx[i] = s
        for i in range(m):
            s = gU[i_, i]
            for k_ in range(n):
                s += B[i_, k_, i] * vx[k_]
            Qu[i] = s
        for i in range(n):
            for j in range(n):
                s = 0.0
                for k_ in range(n):
                    s += AtV[i * n + k_] * A[i_, k_, j]
                Qxx[i * n + j] = s
            Qxx[i * n + i] += hx[i_, i]
        for i in range(m):
            for j in range(m):
                s = 0.0
                for k_ in range(n):
                    s += BtV[i * n + k_] * B[i_, k_, j]
                Quu[i * m + j] = s
            Quu[i * m + i] += hu[i_, i]
            for j in range(n):
                s = 0.0
                for k_ in range(n):
                    s += BtV[i * n + k_] * A[i_, k_, j]
                Qux[i * n + j] = s
        nf = 0
        for j in range(m):
            kvec[j] = 0.0
            for i in range(n):
                Ki[j * n + i] = 0.0
            if mask[i_, j] == 0:
                free_idx[nf] = j
                nf += 1
        if nf > 0:
            for i in range(nf):
                for j in range(nf):
                    Hff[i * nf + j] = Quu[free_idx[i] * m + free_idx[j]]
            if _cholesky(Hff, Lf, nf):
                return 1
            for i in range(nf):
                rhs[i] = -Qu[free_idx[i]]
            _chol_solve(Lf, rhs, sol, nf)
            for i in range(nf):
                kvec[free_idx[i]] = sol[i]
            for j in range(n):
                for i in range(nf):
                    rhs[i] = -Qux[free_idx[i] * n + j]
                _chol_solve(Lf, rhs, sol, nf)
                for i in range(nf):
                    Ki[free_idx[i] * n + j] = sol[i]
        for j in range(m):
            ks[i_, j] = kvec[j]
            for i in range(n):
                Ks[i_, j, i] = Ki[j * n + i]
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += Quu[i * m + j] * kvec[j]
            Quuk[i] = s
        for i in range(n):
            s = Qx[i]
            for j in range(m):
                s += Ki[j * n + i] * (Quuk[j] + Qu[j])
                s += Qux[j * n + i] * kvec[j]
            tmp_vx[i] = s
        for i in range(n):
            for j in range(n):
                s = Qxx[i * n + j]
                for k_ in range(m):
                    quk_j = 0.0
                    for Jj in range(m):
                        quk_j += Quu[k_ * m + Jj] * Ki[Jj * n + j]
                    s += Ki[k_ * n + i] * quk_j
                    s += Ki[k_ * n + i] * Qux[k_ * n + j]
                    s += Qux[k_ * n + i] * Ki[k_ * n + j]
                Vxx[i * n + j] = s
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.5 * (Vxx[i * n + j] + Vxx[j * n + i])
                Vxx[i * n + j] = s
                Vxx[j * n + i] = s
        for i in range(n):
            vx[i] = tmp_vx[i]

    for j in range(n):
        dX[0, j] = 0.0
    for i_ in range(N1):
        for j in range(m):
            s = ks[i_, j]
            for k_ in range(n):
                s += Ks[i_, j, k_] * dX[i_, k_]
            dU[i_, j] = s
        for j in range(n):
            s = 0.0
            for k_ in range(n):
                s += A[i_, j, k_] * dX[i_, k_]
            for k_ in range(m):
                s += B[i_, j, k_] * dU[i_, k_]
            dX[i_ + 1, j] = s
    return 0
