"""Pure Python/numpy versions of the compiled kernels (same signatures)."""

from __future__ import annotations

import math

import numpy as np

from .. import expr as ex
from ..errors import BlowUp, DegenerateNormal, EvalError

SNAP_ITERS = 20
SNAP_TOL = 1e-14
BLOWUP = 1e9


def _scalar(prog):
    fns = getattr(prog, "_scalar_fns", None)
    if fns is None:
        fns = [ex.scalar_function(e) for e in prog.exprs]
        object.__setattr__(prog, "_scalar_fns", fns)
    return fns


def _vector(prog):
    fns = getattr(prog, "_vector_fns", None)
    if fns is None:
        fns = [ex.vector_function(e) for e in prog.exprs]
        object.__setattr__(prog, "_vector_fns", fns)
    return fns


def _call(fn, x, a):
    try:
        v = fn(x, a)
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise EvalError(f"non-finite value while integrating an arc: {exc}") from None
    if not math.isfinite(v):
        raise EvalError("non-finite value while integrating an arc")
    return v


def _snap_scalar(prog, fns, y):
    N = prog.N
    for _ in range(SNAP_ITERS):
        p = _call(fns[N + 1], y, y)
        if abs(p) <= SNAP_TOL:
            return y
        g = [_call(fns[N + 2 + j], y, y) for j in range(N)]
        gg = sum(v * v for v in g)
        if gg <= 1e-20:
            raise DegenerateNormal("gradient of psi vanishes while projecting on the interface")
        y = [y[j] - p / gg * g[j] for j in range(N)]
    return y


def _node_flow_scalar(prog, fns, y, v, w, S, dt, take_pen, inv_m):
    N = prog.N
    f, lf = fns[:N], fns[N]
    if prog.on_interface:
        y = _snap_scalar(prog, fns, y)

    def rhs(z):
        return [w * _call(fi, z, v) for fi in f], w * _call(lf, z, v)

    J = 0.0
    for _ in range(S):
        k1, l1 = rhs(y)
        k2, l2 = rhs([y[i] + 0.5 * dt * k1[i] for i in range(N)])
        k3, l3 = rhs([y[i] + 0.5 * dt * k2[i] for i in range(N)])
        k4, l4 = rhs([y[i] + dt * k3[i] for i in range(N)])
        y = [y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(N)]
        if any(abs(c) > BLOWUP for c in y):
            raise BlowUp("state left the ball of radius 1e9")
        J += dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        if prog.on_interface:
            y = _snap_scalar(prog, fns, y)
    pen = 0.0
    if take_pen and prog.side != 0:
        viol = -prog.side * _call(fns[N + 1], y, v)
        if viol > 0.0:
            pen = viol * viol * inv_m
    return y, J, pen


def shoot_arc(prog, y0, V, W, S):
    W = np.asarray(W, dtype=float)
    M = len(W)
    V = np.asarray(V, dtype=float).reshape(M, prog.m)
    fns = _scalar(prog)
    Y = np.empty((M + 1, prog.N))
    Y[0] = y0
    y = [float(c) for c in y0]
    J = pen = 0.0
    dt = 1.0 / (M * S)
    for n in range(M):
        y, dJ, dp = _node_flow_scalar(prog, fns, y, V[n].tolist(), float(W[n]), S, dt, n < M - 1, 1.0 / M)
        Y[n + 1] = y
        J += dJ
        pen += dp
    return Y, J, pen


# ---------------------------------------------------------------------------
# batched flow used for the finite-difference Jacobians


def _veval(fn, x, a, L):
    with np.errstate(all="ignore"):
        out = np.broadcast_to(np.asarray(fn(x, a), dtype=float), (L,))
    if not np.all(np.isfinite(out)):
        raise EvalError("non-finite value while integrating an arc")
    return out


def _snap_vec(prog, fns, Y):
    N, L = Y.shape
    for _ in range(SNAP_ITERS):
        p = _veval(fns[N + 1], list(Y), [], L)
        if np.all(np.abs(p) <= SNAP_TOL):
            return Y
        g = np.array([_veval(fns[N + 2 + j], list(Y), [], L) for j in range(N)])
        gg = np.sum(g * g, axis=0)
        if np.any(gg <= 1e-20):
            raise DegenerateNormal("gradient of psi vanishes while projecting on the interface")
        Y = Y - p / gg * g
    return Y


def _node_flow_vec(prog, Y, V, w, S, dt, take_pen, inv_m):
    fns = _vector(prog)
    N, L = Y.shape
    vs = list(V)

    def rhs(Z):
        zs = list(Z)
        dy = np.array([w * _veval(fns[i], zs, vs, L) for i in range(N)])
        return dy, w * _veval(fns[N], zs, vs, L)

    if prog.on_interface:
        Y = _snap_vec(prog, fns, Y)
    J = np.zeros(L)
    for _ in range(S):
        k1, l1 = rhs(Y)
        k2, l2 = rhs(Y + 0.5 * dt * k1)
        k3, l3 = rhs(Y + 0.5 * dt * k2)
        k4, l4 = rhs(Y + dt * k3)
        Y = Y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.any(np.abs(Y) > BLOWUP):
            raise BlowUp("state left the ball of radius 1e9")
        J = J + dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        if prog.on_interface:
            Y = _snap_vec(prog, fns, Y)
    pen = np.zeros(L)
    if prog.side != 0:
        viol = np.maximum(0.0, -prog.side * _veval(fns[N + 1], list(Y), vs, L))
        pen = np.where(take_pen, viol * viol * inv_m, 0.0)
    return Y, J, pen


def node_jacobians(prog, Y, V, W, S, eps=1e-6):
    W = np.asarray(W, dtype=float)
    M = len(W)
    N, m = prog.N, prog.m
    V = np.asarray(V, dtype=float).reshape(M, m)
    C = N + m + 1
    Z = np.hstack([np.asarray(Y, dtype=float)[:M], V, W[:, None]])  # (M, C)
    h = eps * np.maximum(1.0, np.abs(Z))
    # lanes ordered (node, column, sign)
    base = np.repeat(Z, 2 * C, axis=0)
    cols = np.tile(np.repeat(np.arange(C), 2), M)
    sign = np.tile([1.0, -1.0], M * C)
    rows = np.arange(M * 2 * C)
    step = h[np.repeat(np.arange(M), 2 * C), cols]
    base[rows, cols] += sign * step
    take = np.repeat(np.arange(M) < M - 1, 2 * C)
    Yo, Jo, Po = _node_flow_vec(
        prog, base[:, :N].T.copy(), base[:, N : N + m].T.copy(), base[:, N + m], S, 1.0 / (M * S), take, 1.0 / M
    )
    out = np.vstack([Yo, Jo[None, :], Po[None, :]])  # (N+2, lanes)
    out = out.reshape(N + 2, M, C, 2)
    diff = (out[..., 0] - out[..., 1]) / (2.0 * h.reshape(1, M, C))
    return np.ascontiguousarray(diff.transpose(1, 0, 2))


def backward_arc(Jac, lam_out, mu):
    Jac = np.asarray(Jac, dtype=float)
    M, R, C = Jac.shape
    N = R - 2
    lam = np.array(lam_out, dtype=float)
    G = np.empty((M, C - N))
    for n in range(M - 1, -1, -1):
        g = Jac[n, :N, :].T @ lam + Jac[n, N, :] + mu * Jac[n, N + 1, :]
        lam = g[:N]
        G[n] = g[N:]
    return lam, G


# ---------------------------------------------------------------------------
# HJB value iteration


def _candidates(u, nodes_i, nodes_j, di, dj, fx, fy, cost):
    """Best option value for the given nodes (vectorised over nodes and options)."""
    ny, nx = u.shape
    ii = nodes_i[:, None] + di[None, :]
    jj = nodes_j[:, None] + dj[None, :]
    shape = ii.shape
    acc = np.broadcast_to(cost[None, :], shape).astype(float)
    wself = np.zeros(shape)
    ok = np.ones(shape, dtype=bool)
    ws = ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
    for wt, (ox, oy) in zip(ws, ((0, 0), (1, 0), (0, 1), (1, 1))):
        w = np.broadcast_to(wt[None, :], shape)
        used = w > 0.0
        ci, cj = ii + ox, jj + oy
        inside = (ci >= 0) & (ci < nx) & (cj >= 0) & (cj < ny)
        ok &= inside | ~used
        val = u[np.clip(cj, 0, ny - 1), np.clip(ci, 0, nx - 1)]
        is_self = used & (ci == nodes_i[:, None]) & (cj == nodes_j[:, None])
        wself += np.where(is_self, w, 0.0)
        other = used & ~is_self
        ok &= ~(other & np.isinf(val))
        acc += np.where(other & np.isfinite(val), w * val, 0.0)
    ok &= wself < 1.0 - 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = np.where(ok, acc / np.where(ok, 1.0 - wself, 1.0), np.inf)
    return cand.min(axis=1) if shape[1] else np.full(len(nodes_i), np.inf)


def _apply(u, src, fixed, node_tab, tab_start, di, dj, fx, fy, cost, flat):
    """Update the nodes ``flat`` (flat indices) of ``u`` from values in ``src``."""
    nx = u.shape[1]
    flat = flat[(fixed[flat] == 0) & (node_tab[flat] >= 0)]
    jj, ii = np.divmod(flat, nx)
    tabs = node_tab[flat]
    change = 0.0
    for t in np.unique(tabs):
        pick = tabs == t
        sel = flat[pick]
        s, e = tab_start[t], tab_start[t + 1]
        new = _candidates(src, ii[pick], jj[pick], di[s:e], dj[s:e], fx[s:e], fy[s:e], cost[s:e])
        old = u.flat[sel]
        upd = new < old
        if upd.any():
            d = np.where(np.isinf(old[upd]), np.inf, old[upd] - new[upd])
            change = max(change, float(d.max()))
            u.flat[sel[upd]] = new[upd]
    return change


def hjb_jacobi(u, fixed, node_tab, tab_start, di, dj, fx, fy, cost):
    unew = np.array(u, copy=True)
    change = _apply(unew, np.asarray(u), np.asarray(fixed), np.asarray(node_tab), np.asarray(tab_start),
                    np.asarray(di), np.asarray(dj), np.asarray(fx), np.asarray(fy), np.asarray(cost),
                    np.arange(unew.size))
    return unew, change


def hjb_gauss_seidel(u, fixed, node_tab, tab_start, di, dj, fx, fy, cost, order):
    """Row-by-row sweep: rows are visited in the order's direction and each
    row is updated at once from the latest values (line Gauss-Seidel)."""
    ny, nx = u.shape
    rows = range(ny - 1, -1, -1) if (order >> 1) & 1 else range(ny)
    fixed, node_tab, tab_start = np.asarray(fixed), np.asarray(node_tab), np.asarray(tab_start)
    di, dj, fx, fy, cost = (np.asarray(a) for a in (di, dj, fx, fy, cost))
    change = 0.0
    for j in rows:
        flat = np.arange(j * nx, (j + 1) * nx)
        change = max(change, _apply(u, u, fixed, node_tab, tab_start, di, dj, fx, fy, cost, flat))
    return change
