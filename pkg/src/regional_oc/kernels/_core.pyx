# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled shooting and HJB sweep kernels."""

from libc.math cimport sin, cos, exp, sqrt, fabs, log, pow, isfinite, INFINITY

import numpy as np

cdef enum:
    STACK = 256
    SNAP_ITERS = 20
    MAXN = 64

cdef double SNAP_TOL = 1e-14
cdef double BLOWUP = 1e9

cdef enum Err:
    OK = 0
    EVAL = 1
    BLOW = 2
    DEGEN = 3


cdef struct Prog:
    const int* ops
    const int* args
    const double* consts
    const int* starts
    int N
    int m
    int on_h
    int side


cdef inline double run(const Prog* P, int k, const double* x, const double* a, int* err) noexcept nogil:
    cdef double st[STACK]
    cdef int sp = -1
    cdef int i, op
    for i in range(P.starts[k], P.starts[k + 1]):
        op = P.ops[i]
        if op == 0:
            sp += 1
            st[sp] = P.consts[P.args[i]]
        elif op == 1:
            sp += 1
            st[sp] = x[P.args[i]]
        elif op == 2:
            sp += 1
            st[sp] = a[P.args[i]]
        elif op == 3:
            st[sp] = -st[sp]
        elif op == 4:
            sp -= 1
            st[sp] = st[sp] + st[sp + 1]
        elif op == 5:
            sp -= 1
            st[sp] = st[sp] - st[sp + 1]
        elif op == 6:
            sp -= 1
            st[sp] = st[sp] * st[sp + 1]
        elif op == 7:
            sp -= 1
            st[sp] = st[sp] / st[sp + 1]
        elif op == 8:
            sp -= 1
            st[sp] = pow(st[sp], st[sp + 1])
        elif op == 9:
            st[sp] = sin(st[sp])
        elif op == 10:
            st[sp] = cos(st[sp])
        elif op == 11:
            st[sp] = exp(st[sp])
        elif op == 12:
            st[sp] = sqrt(st[sp])
        elif op == 13:
            st[sp] = fabs(st[sp])
        elif op == 14:
            st[sp] = log(st[sp])
    if not isfinite(st[0]):
        err[0] = EVAL
    return st[0]


cdef inline void rhs(const Prog* P, const double* y, const double* v, double w,
                     double* dy, double* dl, int* err) noexcept nogil:
    cdef int i
    for i in range(P.N):
        dy[i] = w * run(P, i, y, v, err)
    dl[0] = w * run(P, P.N, y, v, err)


cdef inline void snap(const Prog* P, double* y, int* err) noexcept nogil:
    cdef int it, j
    cdef double p, gg
    cdef double g[MAXN]
    for it in range(SNAP_ITERS):
        p = run(P, P.N + 1, y, y, err)
        if fabs(p) <= SNAP_TOL:
            return
        gg = 0.0
        for j in range(P.N):
            g[j] = run(P, P.N + 2 + j, y, y, err)
            gg += g[j] * g[j]
        if gg <= 1e-20:
            err[0] = DEGEN
            return
        for j in range(P.N):
            y[j] -= p / gg * g[j]


cdef void node_flow(const Prog* P, const double* yin, const double* v, double w,
                    int S, double dt, int take_pen, double inv_m,
                    double* yout, double* dJ, double* dpen, int* err) noexcept nogil:
    """S RK4 substeps of the augmented system [Y, J] over one control node."""
    cdef int N = P.N
    cdef int s, i
    cdef double k1[MAXN]
    cdef double k2[MAXN]
    cdef double k3[MAXN]
    cdef double k4[MAXN]
    cdef double tmp[MAXN]
    cdef double l1, l2, l3, l4, J = 0.0, p, viol
    for i in range(N):
        yout[i] = yin[i]
    if P.on_h:
        snap(P, yout, err)
    for s in range(S):
        rhs(P, yout, v, w, k1, &l1, err)
        for i in range(N):
            tmp[i] = yout[i] + 0.5 * dt * k1[i]
        rhs(P, tmp, v, w, k2, &l2, err)
        for i in range(N):
            tmp[i] = yout[i] + 0.5 * dt * k2[i]
        rhs(P, tmp, v, w, k3, &l3, err)
        for i in range(N):
            tmp[i] = yout[i] + dt * k3[i]
        rhs(P, tmp, v, w, k4, &l4, err)
        for i in range(N):
            yout[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if fabs(yout[i]) > BLOWUP:
                err[0] = BLOW
        J += dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        if P.on_h:
            snap(P, yout, err)
        if err[0] != OK:
            break
    dJ[0] = J
    dpen[0] = 0.0
    if take_pen and P.side != 0:
        p = run(P, N + 1, yout, v, err)
        viol = -P.side * p
        if viol > 0.0:
            dpen[0] = viol * viol * inv_m


cdef Prog make_prog(const int[::1] ops, const int[::1] args, const double[::1] consts,
                    const int[::1] starts, int N, int m, int on_h, int side):
    cdef Prog P
    if N > MAXN:
        raise ValueError("state dimension too large for the compiled kernel")
    P.ops = &ops[0] if ops.shape[0] > 0 else NULL
    P.args = &args[0] if args.shape[0] > 0 else NULL
    P.consts = &consts[0]
    P.starts = &starts[0]
    P.N = N
    P.m = m
    P.on_h = on_h
    P.side = side
    return P


def _raise(int err):
    from ..errors import BlowUp, DegenerateNormal, EvalError
    if err == EVAL:
        raise EvalError("non-finite value while integrating an arc")
    if err == BLOW:
        raise BlowUp("state left the ball of radius 1e9")
    if err == DEGEN:
        raise DegenerateNormal("gradient of psi vanishes while projecting on the interface")


def shoot_arc(prog, y0, V, W, int S):
    """Integrate one arc; returns node states (M+1, N), cost and penalty."""
    cdef const int[::1] ops = prog.ops
    cdef const int[::1] args = prog.args
    cdef const double[::1] consts = prog.consts
    cdef const int[::1] starts = prog.starts
    cdef Prog P = make_prog(ops, args, consts, starts, prog.N, prog.m, prog.on_interface, prog.side)
    cdef double[:, ::1] Vv = np.ascontiguousarray(V, dtype=np.float64).reshape(len(W), prog.m)
    cdef const double[::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef int M = Wv.shape[0]
    cdef int N = P.N
    Y = np.empty((M + 1, N))
    cdef double[:, ::1] Yv = Y
    cdef double J = 0.0, pen = 0.0, dJ, dpen
    cdef double dt = 1.0 / (M * S)
    cdef double inv_m = 1.0 / M
    cdef int n, i, err = 0
    cdef double dummy = 0.0
    cdef const double* vp
    for i in range(N):
        Yv[0, i] = y0[i]
    with nogil:
        for n in range(M):
            vp = &Vv[n, 0] if P.m > 0 else &dummy
            node_flow(&P, &Yv[n, 0], vp, Wv[n], S, dt, n < M - 1, inv_m,
                      &Yv[n + 1, 0], &dJ, &dpen, &err)
            if err != OK:
                break
            J += dJ
            pen += dpen
    if err != OK:
        _raise(err)
    return Y, J, pen


def node_jacobians(prog, Y, V, W, int S, double eps=1e-6):
    """Central-difference Jacobians of every node flow map.

    Returns an array (M, N+2, N+m+1): rows ``[Y_out, dJ, dPen]``, columns
    ``[Y_in, v, w]``.
    """
    cdef const int[::1] ops = prog.ops
    cdef const int[::1] args = prog.args
    cdef const double[::1] consts = prog.consts
    cdef const int[::1] starts = prog.starts
    cdef Prog P = make_prog(ops, args, consts, starts, prog.N, prog.m, prog.on_interface, prog.side)
    cdef const double[:, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[::1] Wv = np.ascontiguousarray(W, dtype=np.float64)
    cdef int M = Wv.shape[0]
    cdef int N = P.N, m = P.m
    cdef double[:, ::1] Vv = np.ascontiguousarray(V, dtype=np.float64).reshape(M, m).copy()
    cdef int C = N + m + 1
    Jac = np.empty((M, N + 2, C))
    cdef double[:, :, ::1] Jv = Jac
    cdef double dt = 1.0 / (M * S)
    cdef double inv_m = 1.0 / M
    cdef double yin[MAXN]
    cdef double vin[MAXN]
    cdef double yp[MAXN]
    cdef double ym[MAXN]
    cdef double Jp, Jm, Pp, Pm, w, h, z
    cdef int n, c, i, err = 0, take
    with nogil:
        for n in range(M):
            take = n < M - 1
            for c in range(C):
                for i in range(N):
                    yin[i] = Yv[n, i]
                for i in range(m):
                    vin[i] = Vv[n, i]
                w = Wv[n]
                if c < N:
                    z = yin[c]
                elif c < N + m:
                    z = vin[c - N]
                else:
                    z = w
                h = eps * (fabs(z) if fabs(z) > 1.0 else 1.0)
                if c < N:
                    yin[c] = z + h
                elif c < N + m:
                    vin[c - N] = z + h
                else:
                    w = z + h
                node_flow(&P, yin, vin, w, S, dt, take, inv_m, yp, &Jp, &Pp, &err)
                if c < N:
                    yin[c] = z - h
                elif c < N + m:
                    vin[c - N] = z - h
                else:
                    w = z - h
                node_flow(&P, yin, vin, w, S, dt, take, inv_m, ym, &Jm, &Pm, &err)
                for i in range(N):
                    Jv[n, i, c] = (yp[i] - ym[i]) / (2.0 * h)
                Jv[n, N, c] = (Jp - Jm) / (2.0 * h)
                Jv[n, N + 1, c] = (Pp - Pm) / (2.0 * h)
            if err != OK:
                break
    if err != OK:
        _raise(err)
    return Jac


def backward_arc(Jac, lam_out, double mu):
    """Reverse sweep of the chain rule through an arc.

    ``lam_out`` is the sensitivity of the scalar objective to ``Y(1)``; the
    objective's direct dependence on the arc is ``dJ + mu * dPen``.
    Returns ``(lam_in, G)`` with G of shape (M, m+1).
    """
    cdef const double[:, :, ::1] Jv = np.ascontiguousarray(Jac, dtype=np.float64)
    cdef int M = Jv.shape[0], N = Jv.shape[1] - 2, C = Jv.shape[2]
    lam = np.array(lam_out, dtype=np.float64)
    cdef double[::1] L = lam
    G = np.empty((M, C - N))
    cdef double[:, ::1] Gv = G
    cdef double g[MAXN * 2 + 2]
    cdef int n, c, i
    cdef double s
    if C > 2 * MAXN + 2:
        raise ValueError("too many node inputs for the compiled kernel")
    with nogil:
        for n in range(M - 1, -1, -1):
            for c in range(C):
                s = Jv[n, N, c] + mu * Jv[n, N + 1, c]
                for i in range(N):
                    s += Jv[n, i, c] * L[i]
                g[c] = s
            for i in range(N):
                L[i] = g[i]
            for c in range(N, C):
                Gv[n, c - N] = g[c]
    return lam, G


# ---------------------------------------------------------------------------
# HJB value iteration


cdef inline double update_node(double* u, int nx, int ny, int i, int j, int tab,
                               const int* tab_start, const int* di, const int* dj,
                               const double* fx, const double* fy, const double* cost) noexcept nogil:
    cdef double best = INFINITY, acc, wself, wt, cand, val
    cdef int k, ii, jj, ci, cj, q, ok
    cdef double ws[4]
    cdef int ox[4]
    cdef int oy[4]
    for k in range(tab_start[tab], tab_start[tab + 1]):
        ii = i + di[k]
        jj = j + dj[k]
        ws[0] = (1.0 - fx[k]) * (1.0 - fy[k])
        ws[1] = fx[k] * (1.0 - fy[k])
        ws[2] = (1.0 - fx[k]) * fy[k]
        ws[3] = fx[k] * fy[k]
        ox[0] = 0; ox[1] = 1; ox[2] = 0; ox[3] = 1
        oy[0] = 0; oy[1] = 0; oy[2] = 1; oy[3] = 1
        acc = cost[k]
        wself = 0.0
        ok = 1
        for q in range(4):
            wt = ws[q]
            if wt <= 0.0:
                continue
            ci = ii + ox[q]
            cj = jj + oy[q]
            if ci < 0 or ci >= nx or cj < 0 or cj >= ny:
                ok = 0
                break
            if ci == i and cj == j:
                wself += wt
                continue
            val = u[cj * nx + ci]
            if val == INFINITY:
                ok = 0
                break
            acc += wt * val
        if not ok or wself >= 1.0 - 1e-12:
            continue
        cand = acc / (1.0 - wself)
        if cand < best:
            best = cand
    return best


def hjb_gauss_seidel(u, const signed char[::1] fixed, const int[::1] node_tab,
                     const int[::1] tab_start, const int[::1] di, const int[::1] dj,
                     const double[::1] fx, const double[::1] fy, const double[::1] cost,
                     int order):
    """One Gauss-Seidel sweep in place; returns the sup-norm change."""
    cdef double[:, ::1] U = u
    cdef int ny = U.shape[0], nx = U.shape[1]
    cdef int a, b, i, j, idx, tab
    cdef int i_rev = order & 1, j_rev = (order >> 1) & 1
    cdef double old, new, change = 0.0, d
    cdef double* up = &U[0, 0]
    cdef const int* ts = &tab_start[0]
    cdef const int* pdi = &di[0]
    cdef const int* pdj = &dj[0]
    cdef const double* pfx = &fx[0]
    cdef const double* pfy = &fy[0]
    cdef const double* pc = &cost[0]
    with nogil:
        for b in range(ny):
            j = ny - 1 - b if j_rev else b
            for a in range(nx):
                i = nx - 1 - a if i_rev else a
                idx = j * nx + i
                if fixed[idx]:
                    continue
                tab = node_tab[idx]
                if tab < 0:
                    continue
                new = update_node(up, nx, ny, i, j, tab, ts, pdi, pdj, pfx, pfy, pc)
                old = up[idx]
                if new < old:
                    up[idx] = new
                    d = INFINITY if old == INFINITY else old - new
                    if d > change:
                        change = d
    return change


def hjb_jacobi(u, const signed char[::1] fixed, const int[::1] node_tab,
               const int[::1] tab_start, const int[::1] di, const int[::1] dj,
               const double[::1] fx, const double[::1] fy, const double[::1] cost):
    """One Jacobi sweep; returns ``(u_new, change)``."""
    cdef double[:, ::1] U = np.ascontiguousarray(u)
    unew = np.array(U, copy=True)
    cdef double[:, ::1] Un = unew
    cdef int ny = U.shape[0], nx = U.shape[1]
    cdef int i, j, idx, tab
    cdef double old, new, change = 0.0, d
    cdef double* up = &U[0, 0]
    with nogil:
        for j in range(ny):
            for i in range(nx):
                idx = j * nx + i
                if fixed[idx]:
                    continue
                tab = node_tab[idx]
                if tab < 0:
                    continue
                new = update_node(up, nx, ny, i, j, tab, &tab_start[0], &di[0], &dj[0],
                                  &fx[0], &fy[0], &cost[0])
                old = up[idx]
                if new < old:
                    Un[j, i] = new
                    d = INFINITY if old == INFINITY else old - new
                    if d > change:
                        change = d
    return unew, change
