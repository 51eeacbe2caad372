"""Adjoint reconstruction along a solved structure and the necessary-condition
checks: Hamiltonian constancy and maximisation on arcs, Hamiltonian
continuity and normal costate jumps at junctions, and the sensitivity
relations between costates and value-function gradients.

Costates are reconstructed in original time, arc by arc, backwards from an
unknown terminal value. Everything is affine in that unknown, so the terminal
costate (and the Hamiltonian level for fixed horizons) follows from one
linear least-squares fit of the maximisation condition along the whole
trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import expr as ex
from .errors import DegenerateNormal, EvalError, TangentialCrossing
from .geometry import RegionLabel
from .lift import build
from .problem import Region, RegionalProblem, hamiltonian_interface, hamiltonian_region
from .solve import ABNORMAL_SUSPECT, CONVERGED, Discretization, StructureSolution, integrate_arc, solve_structure

TOL_SOLVER = 2e-3
TOL_TANGENT = 1e-6
TANGENTIAL_MIN = 1e-6
ABNORMAL_RESIDUAL = 1e-3
PRIOR_WEIGHT = 1e-6
BOUND_EPS = 1e-7


# ---------------------------------------------------------------------------
# region helpers


class _RegionFns:
    """Compiled closures for f, l and their derivatives on one region."""

    def __init__(self, region: Region, n: int):
        self.region = region
        self.n = n
        self.m = region.m
        self.f = [ex.scalar_function(e) for e in region.f]
        self.l = ex.scalar_function(region.l)
        self.fx = [[ex.scalar_function(ex.diff(e, "x", j)) for j in range(n)] for e in region.f]
        self.lx = [ex.scalar_function(ex.diff(region.l, "x", j)) for j in range(n)]
        self.fa = [[ex.scalar_function(ex.diff(e, "a", j)) for j in range(self.m)] for e in region.f]
        self.la = [ex.scalar_function(ex.diff(region.l, "a", j)) for j in range(self.m)]

    @staticmethod
    def _v(fn, x, a):
        try:
            v = fn(x, a)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise EvalError(str(exc)) from None
        if not math.isfinite(v):
            raise EvalError("non-finite value in adjoint reconstruction")
        return v

    def dyn(self, x, a):
        return np.array([self._v(fi, x, a) for fi in self.f])

    def cost(self, x, a):
        return self._v(self.l, x, a)

    def jac_x(self, x, a):
        return np.array([[self._v(g, x, a) for g in row] for row in self.fx])

    def cost_x(self, x, a):
        return np.array([self._v(g, x, a) for g in self.lx])

    def jac_a(self, x, a):
        if self.m == 0:
            return np.zeros((self.n, 0))
        return np.array([[self._v(g, x, a) for g in row] for row in self.fa])

    def cost_a(self, x, a):
        return np.array([self._v(g, x, a) for g in self.la])


def _tangent_basis(n_vec: np.ndarray) -> np.ndarray:
    """Orthonormal basis (N, N-1) of the plane orthogonal to the unit vector."""
    N = len(n_vec)
    q, _ = np.linalg.qr(np.column_stack([n_vec, np.eye(N)]))
    return q[:, 1:N]


# ---------------------------------------------------------------------------
# data


@dataclass
class AdjointArc:
    label: RegionLabel
    t: np.ndarray
    X: np.ndarray
    controls: np.ndarray
    P: np.ndarray
    hamiltonian: np.ndarray  # pre-Hamiltonian with the solved controls
    p0: float
    local_start: np.ndarray = None
    local_end: np.ndarray = None

    @property
    def clock_costate(self) -> np.ndarray:
        return -self.hamiltonian


@dataclass
class AdjointResult:
    arcs: list
    p0: float
    terminal: np.ndarray
    h: float
    lsq_residual: float
    abnormal: bool = False
    rank_deficient: bool = False


@dataclass
class _ArcProp:
    t: np.ndarray
    X: np.ndarray
    V: np.ndarray
    cell: np.ndarray
    Z: np.ndarray  # (ns, N, d+1) affine costate maps


def _arc_samples(prob: RegionalProblem, arc, S: int):
    """States at every half RK4 step of an arc (forward, original time)."""
    spec_region = prob.regions[arc.label]
    iface = prob.iface if arc.label == RegionLabel.H else None
    sm = integrate_arc(spec_region.f, arc.nodes[0], arc.controls, arc.clocks, 2 * S, iface=iface)
    M = len(arc.clocks)
    idx = np.arange(M * 2 * S + 1)
    cell = np.minimum(idx // (2 * S), M - 1)
    frac = (idx - cell * 2 * S) / (2 * S)
    t = arc.times[cell] + frac * arc.clocks[cell] / M
    return t, sm.Y, cell


def _propagate(prob, fns: _RegionFns, arc, Z_end: np.ndarray, p0: float, S: int) -> _ArcProp:
    """Backward RK4 of the affine costate map along one arc."""
    t, X, cell = _arc_samples(prob, arc, S)
    on_h = arc.label == RegionLabel.H
    iface = prob.iface
    n_s = len(t)
    keep = np.arange(0, n_s, 2)
    Z = np.empty((len(keep),) + Z_end.shape)
    cur = Z_end.copy()
    if on_h:
        cur = _project_cols(iface, X[-1], cur)
    Z[-1] = cur
    e_b = np.zeros(Z_end.shape[1])
    e_b[-1] = 1.0

    def rhs(x, a, z):
        A = fns.jac_x(x, a)
        return -A.T @ z - p0 * np.outer(fns.cost_x(x, a), e_b)

    # each RK4 step spans two half-samples; the middle one feeds stages 2 and 3
    for q in range(len(keep) - 1, 0, -1):
        i = keep[q]
        a = arc.controls[cell[i - 1]].tolist()
        h = t[i] - t[i - 2]
        x_hi, x_mid, x_lo = X[i].tolist(), X[i - 1].tolist(), X[i - 2].tolist()
        k1 = rhs(x_hi, a, cur)
        k2 = rhs(x_mid, a, cur - 0.5 * h * k1)
        k3 = rhs(x_mid, a, cur - 0.5 * h * k2)
        k4 = rhs(x_lo, a, cur - h * k3)
        cur = cur - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if on_h:
            cur = _project_cols(iface, X[i - 2], cur)
        Z[q - 1] = cur
    return _ArcProp(t[keep], X[keep], arc.controls[cell[keep]], cell[keep], Z)


def _project_cols(iface, x, Z):
    n = iface.normal(x)
    return Z - np.outer(n, n @ Z)


def _jump_map(prob, spec_left, spec_right, fl: _RegionFns, fr: _RegionFns, x, a_left, a_right, p0, k):
    """Linear map taking the right-hand costate map to the left-hand one at a
    junction, plus the data needed by the checks."""
    iface = prob.iface
    g = iface.gradient(x)
    gn = float(np.linalg.norm(g))
    if gn <= 1e-10:
        raise DegenerateNormal(f"grad psi vanishes at junction {k}")
    n = g / gn
    f_l, f_r = fl.dyn(x, a_left), fr.dyn(x, a_right)
    l_l, l_r = fl.cost(x, a_left), fr.cost(x, a_right)
    in_l, in_r = float(n @ f_l), float(n @ f_r)
    left, right = spec_left, spec_right
    if right == RegionLabel.H:
        kind = "entry"
        if abs(in_l) <= TANGENTIAL_MIN:
            raise TangentialCrossing(f"junction {k}: <n, f_left> = {in_l:.3e}", k, in_l)
    elif left == RegionLabel.H:
        kind = "exit"
        if abs(in_r) <= TANGENTIAL_MIN:
            raise TangentialCrossing(f"junction {k}: <n, f_right> = {in_r:.3e}", k, in_r)
    else:
        kind = "crossing"
        worst = in_l if abs(in_l) < abs(in_r) else in_r
        if abs(worst) <= TANGENTIAL_MIN:
            raise TangentialCrossing(f"junction {k}: <n, f> = {worst:.3e}", k, worst)

    def apply(Zr):
        if kind == "exit":
            return Zr - np.outer(n, n @ Zr)
        # P_left = P_right - nu grad psi with nu affine in P_right
        d = float(g @ f_l)
        c = p0 * (l_l - l_r)
        row = (f_l - f_r) @ Zr
        row = row.copy()
        row[-1] += c
        return Zr - np.outer(g, row / d)

    return kind, apply, dict(g=g, n=n, f_l=f_l, f_r=f_r, l_l=l_l, l_r=l_r, in_l=in_l, in_r=in_r)


def _rows(fns: _RegionFns, lo, hi, prop: _ArcProp, p0: float, fixed_tf: bool):
    """Least-squares rows (stationarity in free control components and
    Hamiltonian level) on every sample of an arc; unknowns ``[z, h]``."""
    A_rows, b_rows = [], []
    for x, a, Z in zip(prop.X, prop.V, prop.Z):
        xl, al = x.tolist(), a.tolist()
        fa = fns.jac_a(xl, al)
        la = fns.cost_a(xl, al)
        for j in range(fns.m):
            if a[j] <= lo[j] + BOUND_EPS or a[j] >= hi[j] - BOUND_EPS:
                continue
            coef = fa[:, j] @ Z
            A_rows.append(np.append(coef[:-1], 0.0))
            b_rows.append(-(coef[-1] + p0 * la[j]))
        f = fns.dyn(xl, al)
        coef = f @ Z
        A_rows.append(np.append(coef[:-1], -1.0 if fixed_tf else 0.0))
        b_rows.append(-(coef[-1] + p0 * fns.cost(xl, al)))
    return A_rows, b_rows


def _lstsq(A, b, prior=None, prior_w=0.0):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if prior is not None and prior_w > 0:
        k = A.shape[1]
        A = np.vstack([A, prior_w * np.eye(k)])
        b = np.concatenate([b, prior_w * prior])
    z, *_ = np.linalg.lstsq(A, b, rcond=None)
    r = A @ z - b
    rank = np.linalg.matrix_rank(A) if A.size else 0
    return z, float(np.sqrt(np.mean(r**2))) if len(r) else 0.0, rank


def _hs(fns, x, P, p0, a):
    return float(P @ fns.dyn(x, a) + p0 * fns.cost(x, a))


def reconstruct_adjoint(prob: RegionalProblem, sol: StructureSolution, p0: float = -1.0, allow_abnormal: bool = True) -> AdjointResult:
    """Costates along every arc of ``sol`` (normal case ``p0 = -1``).

    Raises :class:`TangentialCrossing` if a junction is reached with
    ``|<n, f>| <= 1e-6`` on the side entering a jump formula.
    """
    N = prob.n_state
    S = sol.disc.substeps
    fixed_tf = not prob.free_tf
    K = sol.K
    fns = {lab: _RegionFns(prob.regions[lab], N) for lab in RegionLabel}
    iface = prob.iface

    def run(p0_):
        last = sol.arcs[-1]
        if last.label == RegionLabel.H:
            A0 = _tangent_basis(iface.normal(iface.snap(last.nodes[-1])))
        else:
            A0 = np.eye(N)
        d = A0.shape[1]
        Z = np.zeros((N, d + 1))
        Z[:, :d] = A0
        props = [None] * K
        jumps = [None] * (K - 1)
        for k in range(K - 1, -1, -1):
            arc = sol.arcs[k]
            props[k] = _propagate(prob, fns[arc.label], arc, Z, p0_, S)
            if k > 0:
                left = sol.arcs[k - 1]
                x = left.nodes[-1]
                if RegionLabel.H in (left.label, arc.label):
                    x = iface.snap(x)
                kind, apply, info = _jump_map(
                    prob, left.label, arc.label, fns[left.label], fns[arc.label], x,
                    left.controls[-1].tolist(), arc.controls[0].tolist(), p0_, k - 1,
                )
                jumps[k - 1] = (kind, info)
                Z = apply(props[k].Z[0])
        A_all, b_all = [], []
        for k in range(K):
            lab = sol.arcs[k].label
            cs = prob.regions[lab].controls
            Ar, br = _rows(fns[lab], cs.lo, cs.hi, props[k], p0_, fixed_tf)
            A_all += Ar
            b_all += br
        A_all = np.asarray(A_all).reshape(len(b_all), d + 1)
        if not fixed_tf:
            A_all = A_all[:, :d]
        return props, jumps, A_all, np.asarray(b_all), A0

    props, jumps, A, b, A0 = run(p0)
    z, res, rank = _lstsq(A, b)
    abnormal = False
    if allow_abnormal and res > ABNORMAL_RESIDUAL:
        props0, jumps0, A_ab, _, A0_ab = run(0.0)
        _, sv, vt = np.linalg.svd(A_ab, full_matrices=False)
        z0 = vt[-1]
        res0 = float(sv[-1] / math.sqrt(max(len(A_ab), 1)))
        if res0 < res:
            props, jumps, A0, z, res, p0 = props0, jumps0, A0_ab, z0, res0, 0.0
            abnormal = True
    d = A0.shape[1]
    zP = z[:d]
    h = float(z[d]) if fixed_tf else 0.0
    terminal = A0 @ zP
    arcs = []
    for k in range(K):
        pr = props[k]
        lab = sol.arcs[k].label
        P = np.einsum("sij,j->si", pr.Z[:, :, :d], zP) + pr.Z[:, :, d]
        H = np.array([_hs(fns[lab], x.tolist(), p, p0, a.tolist()) for x, p, a in zip(pr.X, P, pr.V)])
        arcs.append(AdjointArc(lab, pr.t, pr.X, pr.V, P, H, p0))
    # local fits: each arc on its own, weakly tied to the propagated costate
    for k in range(K):
        arc = sol.arcs[k]
        lab = arc.label
        if lab == RegionLabel.H:
            B = _tangent_basis(iface.normal(iface.snap(arc.nodes[-1])))
        else:
            B = np.eye(N)
        dl = B.shape[1]
        Zl = np.zeros((N, dl + 1))
        Zl[:, :dl] = B
        pr = _propagate(prob, fns[lab], arc, Zl, p0, S)
        cs = prob.regions[lab].controls
        Ar, br = _rows(fns[lab], cs.lo, cs.hi, pr, p0, fixed_tf)
        Ar = np.asarray(Ar).reshape(len(br), dl + 1)
        prior = B.T @ arcs[k].P[-1]
        if fixed_tf:
            # the level h is fixed by the global fit
            br = np.asarray(br) - Ar[:, -1] * h
        Ar = Ar[:, :dl]
        zl, _, _ = _lstsq(Ar, br, prior=prior, prior_w=PRIOR_WEIGHT)
        Pl = np.einsum("sij,j->si", pr.Z[:, :, :dl], zl) + pr.Z[:, :, dl]
        arcs[k].local_start = Pl[0]
        arcs[k].local_end = Pl[-1]
    out = AdjointResult(arcs, p0, terminal, h, res, abnormal, rank < A.shape[1])
    out._jumps = jumps  # junction geometry reused by verify_junctions
    return out


# ---------------------------------------------------------------------------
# junction and arc checks


@dataclass
class Condition:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(abs(self.value) <= self.tol)


@dataclass
class JunctionReport:
    index: int
    kind: str
    name: str
    time: float
    point: list
    H_left: float
    H_right: float
    H_gap: float
    Hs_left: float
    Hs_right: float
    clock_gap: float
    nu: float
    nu_direct: float
    jump: list
    jump_norm: float
    jump_norm_propagated: float
    tangential_residual: float
    jump_residual: float
    inner_left: float
    inner_right: float
    snell_ratio: float | None
    conditions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)


@dataclass
class ArcReport:
    index: int
    label: str
    H_mean: float
    H_deviation: float
    max_gap: float
    tangency: float
    conditions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)


def _sup(prob, lab, x, P, p0):
    if lab == RegionLabel.H:
        return hamiltonian_interface(prob, x, prob.iface.tangent_project(x, P), p0).value
    return hamiltonian_region(prob, lab, x, P, p0).value


def verify_arcs(prob: RegionalProblem, adj: AdjointResult, tol: float = TOL_SOLVER, stride: int = 1) -> list:
    out = []
    iface = prob.iface
    for k, arc in enumerate(adj.arcs):
        H = arc.hamiltonian
        dev = float(np.max(np.abs(H - H.mean())))
        gaps = []
        tang = 0.0
        for i in range(0, len(arc.t), stride):
            x = arc.X[i]
            if arc.label == RegionLabel.H:
                x = iface.snap(x)
                tang = max(tang, abs(float(arc.P[i] @ iface.normal(x))))
            sup = _sup(prob, arc.label, x, arc.P[i], adj.p0)
            gaps.append(sup - H[i])
        conds = [Condition("hamiltonian_constancy", dev, tol), Condition("maximization", max(gaps), tol)]
        if arc.label == RegionLabel.H:
            conds.append(Condition("costate_tangency", tang, TOL_TANGENT))
        out.append(ArcReport(k, arc.label.text, float(H.mean()), dev, float(max(gaps)), tang, conds))
    return out


def verify_junctions(prob: RegionalProblem, sol: StructureSolution, adj: AdjointResult,
                     tol_H: float = TOL_SOLVER, tol_P: float = TOL_SOLVER) -> list:
    """Hamiltonian continuity and jump checks at every junction."""
    iface = prob.iface
    p0 = adj.p0
    reports = []
    for k in range(sol.K - 1):
        left, right = adj.arcs[k], adj.arcs[k + 1]
        kind, info = adj._jumps[k]
        g, f_l, f_r, l_l, l_r = info["g"], info["f_l"], info["f_r"], info["l_l"], info["l_r"]
        x = right.X[0] if RegionLabel.H in (left.label, right.label) else left.X[-1]
        if RegionLabel.H in (left.label, right.label):
            x = iface.snap(x)
        Pm, Pp = left.local_end, right.local_start
        # pre-Hamiltonians with the solved controls, propagated costates
        Hs_l = float(left.P[-1] @ f_l + p0 * l_l)
        Hs_r = float(right.P[0] @ f_r + p0 * l_r)
        H_l = _sup(prob, left.label, x, left.P[-1], p0)
        H_r = _sup(prob, right.label, x, right.P[0], p0)
        dP = Pp - Pm
        gg = float(g @ g)
        nu_direct = float(dP @ g) / gg
        if kind == "entry":
            nu = (float(Pp @ f_l) - float(Pm @ f_r) + p0 * (l_l - l_r)) / float(g @ f_l)
        elif kind == "exit":
            nu = (float(Pm @ f_l) - float(Pm @ f_r) + p0 * (l_l - l_r)) / float(g @ f_r)
        else:
            nu = (float(Pm @ (f_l - f_r)) + p0 * (l_l - l_r)) / float(g @ f_r)
        n = g / math.sqrt(gg)
        tang_res = float(np.linalg.norm(dP - (dP @ n) * n))
        jump_res = float(np.max(np.abs(dP - nu * g)))
        snell = None
        if kind == "crossing":
            s_l = np.linalg.norm(f_l - (f_l @ n) * n) / np.linalg.norm(f_l)
            s_r = np.linalg.norm(f_r - (f_r @ n) * n) / np.linalg.norm(f_r)
            snell = float(s_l / s_r) if s_r > 0 else math.inf
        conds = [
            Condition("hamiltonian_continuity", H_l - H_r, tol_H),
            Condition("clock_costate_continuity", Hs_l - Hs_r, tol_H),
            Condition("jump_tangential", tang_res, tol_P),
            Condition("jump_multiplier", jump_res, tol_P),
        ]
        reports.append(JunctionReport(
            index=k, kind=kind, name=f"{left.label.text}->{right.label.text}", time=float(left.t[-1]),
            point=[float(v) for v in x], H_left=H_l, H_right=H_r, H_gap=H_l - H_r,
            Hs_left=Hs_l, Hs_right=Hs_r, clock_gap=Hs_l - Hs_r, nu=float(nu), nu_direct=nu_direct,
            jump=[float(v) for v in dP], jump_norm=float(np.linalg.norm(dP)),
            jump_norm_propagated=float(np.linalg.norm(right.P[0] - left.P[-1])),
            tangential_residual=tang_res, jump_residual=jump_res,
            inner_left=info["in_l"], inner_right=info["in_r"], snell_ratio=snell, conditions=conds,
        ))
    return reports


# ---------------------------------------------------------------------------
# sensitivity


@dataclass
class SensitivityReport:
    fd_step: float
    grad_x0: list
    grad_xf: list
    P_t0: list
    P_tf: list
    x0_residual: float
    xf_residual: float
    translation_sum: list
    dU_dt0: float | None = None
    dU_dtf: float | None = None
    H_t0: float | None = None
    H_tf: float | None = None
    t0_residual: float | None = None
    tf_residual: float | None = None
    conditions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)


def _resolve_cost(prob, word, sol, disc, **endpoints) -> float:
    p = prob.with_endpoints(**endpoints)
    s = solve_structure(p, word, disc, init=sol.x)
    if s.residual > 1e-8:
        raise RuntimeError(f"warm-started re-solve did not converge (residual {s.residual:.2e})")
    return s.cost


def verify_sensitivity(prob: RegionalProblem, sol: StructureSolution, adj: AdjointResult,
                       fd_step: float = 1e-3, tol: float = 1e-3) -> SensitivityReport:
    """Central differences of U in the boundary data against the costates."""
    disc = replace(sol.disc, n_starts=1, ctol=1e-11, max_outer=20)
    word = sol.word
    N = prob.n_state
    x0 = np.asarray(prob.x0, dtype=float)
    xf = np.asarray(prob.xf, dtype=float)
    gx0, gxf = np.zeros(N), np.zeros(N)
    for j in range(N):
        e = np.zeros(N)
        e[j] = fd_step
        up = _resolve_cost(prob, word, sol, disc, x0=x0 + e)
        dn = _resolve_cost(prob, word, sol, disc, x0=x0 - e)
        gx0[j] = (up - dn) / (2 * fd_step)
        up = _resolve_cost(prob, word, sol, disc, xf=xf + e)
        dn = _resolve_cost(prob, word, sol, disc, xf=xf - e)
        gxf[j] = (up - dn) / (2 * fd_step)
    P0 = adj.arcs[0].P[0]
    Pf = adj.arcs[-1].P[-1]
    r0 = float(np.max(np.abs(-gx0 - P0)))
    rf = float(np.max(np.abs(gxf - Pf)))
    rep = SensitivityReport(
        fd_step, gx0.tolist(), gxf.tolist(), P0.tolist(), Pf.tolist(), r0, rf, (gx0 + gxf).tolist()
    )
    rep.conditions = [Condition("costate_vs_grad_x0", r0, tol), Condition("costate_vs_grad_xf", rf, tol)]
    if not prob.free_tf:
        up = _resolve_cost(prob, word, sol, disc, t0=prob.t0 + fd_step)
        dn = _resolve_cost(prob, word, sol, disc, t0=prob.t0 - fd_step)
        rep.dU_dt0 = (up - dn) / (2 * fd_step)
        up = _resolve_cost(prob, word, sol, disc, tf=prob.tf + fd_step)
        dn = _resolve_cost(prob, word, sol, disc, tf=prob.tf - fd_step)
        rep.dU_dtf = (up - dn) / (2 * fd_step)
        rep.H_t0 = float(adj.arcs[0].hamiltonian[0])
        rep.H_tf = float(adj.arcs[-1].hamiltonian[-1])
        rep.t0_residual = abs(rep.dU_dt0 - rep.H_t0)
        rep.tf_residual = abs(rep.dU_dtf + rep.H_tf)
        rep.conditions += [Condition("dU_dt0_vs_H", rep.t0_residual, tol), Condition("dU_dtf_vs_clock_costate", rep.tf_residual, tol)]
    return rep


@dataclass
class VerifyReport:
    adjoint: AdjointResult
    arcs: list
    junctions: list
    sensitivity: SensitivityReport | None
    error: str | None = None

    @property
    def passed(self) -> bool:
        if self.error is not None:
            return False
        ok = all(a.passed for a in self.arcs) and all(j.passed for j in self.junctions)
        return ok and (self.sensitivity is None or self.sensitivity.passed)


def verify(prob: RegionalProblem, sol: StructureSolution, sensitivity: bool = True, fd_step: float = 1e-3) -> VerifyReport:
    """Full necessary-condition check of one solution.

    A tangential crossing is reported through ``error`` (the check fails)
    rather than raised.
    """
    try:
        adj = reconstruct_adjoint(prob, sol)
    except TangentialCrossing as exc:
        return VerifyReport(None, [], [], None, error=f"TangentialCrossing: {exc}")
    if adj.abnormal:
        sol.status = ABNORMAL_SUSPECT
    arcs = verify_arcs(prob, adj)
    junctions = verify_junctions(prob, sol, adj)
    sens = verify_sensitivity(prob, sol, adj, fd_step) if sensitivity else None
    return VerifyReport(adj, arcs, junctions, sens)
