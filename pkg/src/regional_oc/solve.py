"""Direct solution of lifted problems.

Controls and clock rates are piecewise constant on a uniform pseudo-time
mesh of ``nodes`` cells per arc; arcs are shot sequentially with fixed-step
RK4. Junction, terminal and (for fixed horizons) duration constraints are
handled by an augmented Lagrangian whose subproblems go to L-BFGS-B. The
gradient is assembled from central finite differences of every cell's flow
map, chained backwards exactly.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import expr as ex
from . import kernels
from .errors import AllStructuresInfeasible, BlowUp, DegenerateNormal, EvalError
from .geometry import Interface, RegionLabel
from .lift import W_HI, W_LO, LiftedProblem, build, clock_nodes
from .problem import RegionalProblem
from .structures import DEFAULT_MAX_ARCS, StructureWord, enumerate_words

log = logging.getLogger(__name__)

CONVERGED = "CONVERGED"
MAX_ITER = "MAX_ITER"
INFEASIBLE = "INFEASIBLE"
ABNORMAL_SUSPECT = "ABNORMAL_SUSPECT"

FEASIBLE_RESIDUAL = 1e-4
REGION_TOL = 1e-6
TIE_TOL = 1e-9
_BAD = 1e20


@dataclass(frozen=True)
class Discretization:
    nodes: int = 20
    substeps: int = 4
    seed: int = 0
    n_starts: int = 8
    max_outer: int = 12
    ctol: float = 1e-6
    mu0: float = 10.0
    mu_growth: float = 10.0
    fd_step: float = 1e-6
    inner_maxiter: int = 400

    def __post_init__(self):
        if self.nodes < 4:
            raise ValueError("nodes_per_arc must be at least 4")
        if self.substeps < 2:
            raise ValueError("substeps must be at least 2")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")


# ---------------------------------------------------------------------------
# reference integrator


@dataclass
class ArcSamples:
    tau: np.ndarray
    Y: np.ndarray
    cost: float


def integrate_arc(f, y0, V, W, substeps: int = 4, horizon: float = 1.0, l=None, iface: Interface | None = None) -> ArcSamples:
    """Classical RK4 of ``Y' = w f(Y, v)`` with piecewise-constant ``v``/``w``.

    ``V`` has one row per mesh cell; ``W`` one entry per cell. With ``iface``
    the state is projected onto ``psi = 0`` after every substep. Returns all
    substep samples.
    """
    W = np.asarray(W, dtype=float).ravel()
    M = len(W)
    V = np.asarray(V, dtype=float).reshape(M, -1) if np.size(V) else np.zeros((M, 0))
    fns = [ex.scalar_function(e) for e in f]
    lf = ex.scalar_function(l) if l is not None else None
    dt = horizon / (M * substeps)
    N = len(f)

    def call(fn, y, a):
        try:
            val = fn(y, a)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise EvalError(str(exc)) from None
        if not math.isfinite(val):
            raise EvalError("non-finite value while integrating an arc")
        return val

    def rhs(y, a, w):
        dy = [w * call(fi, y, a) for fi in fns]
        return dy, (w * call(lf, y, a) if lf is not None else 0.0)

    y = [float(c) for c in y0]
    if iface is not None:
        y = iface.snap(y).tolist()
    taus = [0.0]
    out = [list(y)]
    J = 0.0
    for n in range(M):
        a = V[n].tolist()
        w = float(W[n])
        for _ in range(substeps):
            k1, l1 = rhs(y, a, w)
            k2, l2 = rhs([y[i] + 0.5 * dt * k1[i] for i in range(N)], a, w)
            k3, l3 = rhs([y[i] + 0.5 * dt * k2[i] for i in range(N)], a, w)
            k4, l4 = rhs([y[i] + dt * k3[i] for i in range(N)], a, w)
            y = [y[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(N)]
            if any(abs(c) > 1e9 for c in y):
                raise BlowUp("state left the ball of radius 1e9")
            J += dt / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
            if iface is not None:
                y = iface.snap(y).tolist()
            taus.append(taus[-1] + dt)
            out.append(list(y))
    return ArcSamples(np.asarray(taus), np.asarray(out), J)


# ---------------------------------------------------------------------------
# shooting map and augmented Lagrangian


class Shooting:
    """Discretised lifted problem: decision-vector layout, shooting map,
    augmented Lagrangian and its gradient."""

    def __init__(self, lp: LiftedProblem, disc: Discretization, backend=None):
        self.lp = lp
        self.disc = disc
        self.prob = lp.prob
        self.kern = kernels.get_backend(backend)
        self.progs = [kernels.ArcProgram.for_arc(a, self.prob.iface) for a in lp.arcs]
        M = disc.nodes
        self.M = M
        self.slices = []
        off = 0
        lo, hi = [], []
        for a in lp.arcs:
            nv = M * a.m
            self.slices.append((slice(off, off + nv), slice(off + nv, off + nv + M)))
            lo += list(np.tile(a.region.controls.lo_arr, M)) + [W_LO] * M
            hi += list(np.tile(a.region.controls.hi_arr, M)) + [W_HI] * M
            off += nv + M
        self.n = off
        self.lo = np.asarray(lo)
        self.hi = np.asarray(hi)
        self.x0 = np.asarray(self.prob.x0, dtype=float)
        self.xf = np.asarray(self.prob.xf, dtype=float)
        self.n_cons = lp.K - 1 + lp.N + (0 if self.prob.free_tf else 1)

    # layout -------------------------------------------------------------
    def unpack(self, x):
        out = []
        for a, (sv, sw) in zip(self.lp.arcs, self.slices):
            out.append((x[sv].reshape(self.M, a.m), x[sw]))
        return out

    def pack(self, arcs) -> np.ndarray:
        x = np.empty(self.n)
        for (V, W), (sv, sw) in zip(arcs, self.slices):
            x[sv] = np.asarray(V, dtype=float).ravel()
            x[sw] = W
        return x

    # forward ------------------------------------------------------------
    def forward(self, x):
        S = self.disc.substeps
        y = self.x0
        Ys, J, pen = [], 0.0, 0.0
        for prog, (V, W) in zip(self.progs, self.unpack(x)):
            Y, Jk, pk = self.kern.shoot_arc(prog, y, V, W, S)
            Ys.append(Y)
            J += Jk
            pen += pk
            y = Y[-1]
        return Ys, J, pen

    def constraints_from(self, Ys, x) -> np.ndarray:
        iface = self.prob.iface
        c = [iface.value(Y[-1]) for Y in Ys[:-1]]
        c += list(Ys[-1][-1] - self.xf)
        if not self.prob.free_tf:
            dur = sum(W.sum() for _, W in self.unpack(x)) / self.M
            c.append(dur - (self.prob.tf - self.prob.t0))
        return np.asarray(c)

    def evaluate(self, x):
        Ys, J, pen = self.forward(x)
        return Ys, J, pen, self.constraints_from(Ys, x)

    def al_value(self, x, lam, mu) -> float:
        try:
            _, J, pen, c = self.evaluate(x)
        except (EvalError, DegenerateNormal):
            return _BAD
        return J + mu * pen + float(lam @ c) + 0.5 * mu * float(c @ c)

    def al_value_and_grad(self, x, lam, mu):
        try:
            Ys, J, pen, c = self.evaluate(x)
        except (EvalError, DegenerateNormal):
            return _BAD, np.zeros(self.n)
        val = J + mu * pen + float(lam @ c) + 0.5 * mu * float(c @ c)
        mult = lam + mu * c
        K, N = self.lp.K, self.lp.N
        iface = self.prob.iface
        grad = np.empty(self.n)
        S = self.disc.substeps
        arcs = self.unpack(x)
        lam_y = mult[K - 1 : K - 1 + N].copy()
        try:
            for k in range(K - 1, -1, -1):
                if k < K - 1:
                    lam_y = lam_y + mult[k] * iface.gradient(Ys[k][-1])
                V, W = arcs[k]
                jac = self.kern.node_jacobians(self.progs[k], Ys[k], V, W, S, self.disc.fd_step)
                lam_y, G = self.kern.backward_arc(jac, lam_y, mu)
                sv, sw = self.slices[k]
                m = self.lp.arcs[k].m
                grad[sv] = G[:, :m].ravel()
                grad[sw] = G[:, m]
        except (EvalError, DegenerateNormal):
            return _BAD, np.zeros(self.n)
        if not self.prob.free_tf:
            for _, sw in self.slices:
                grad[sw] += mult[-1] / self.M
        return val, grad

    def fd_full(self, x, lam, mu, h: float = 1e-6) -> np.ndarray:
        """Central differences of the whole augmented Lagrangian (test oracle)."""
        g = np.empty(self.n)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = h * max(1.0, abs(x[i]))
            g[i] = (self.al_value(x + e, lam, mu) - self.al_value(x - e, lam, mu)) / (2 * e[i])
        return g

    # initial guesses ------------------------------------------------------
    def tf_guess(self, rng) -> float:
        if not self.prob.free_tf:
            return self.prob.tf - self.prob.t0
        lo = np.minimum(self.x0, self.xf) - 1.0
        hi = np.maximum(self.x0, self.xf) + 1.0
        regions = list(self.prob.regions.values())
        speeds = []
        for _ in range(100):
            r = regions[int(rng.integers(len(regions)))]
            xs = rng.uniform(lo, hi)
            a = rng.uniform(r.controls.lo_arr, r.controls.hi_arr) if r.m else np.zeros(0)
            try:
                speeds.append(float(np.linalg.norm(r.dynamics(xs, a))))
            except EvalError:
                continue
        med = float(np.median(speeds)) if speeds else 1.0
        if not med > 0:
            med = 1.0
        return float(np.linalg.norm(self.xf - self.x0)) / med

    def initial_guess(self, start: int, tf_guess: float, rng) -> np.ndarray:
        K, M = self.lp.K, self.M
        w0 = float(np.clip(tf_guess / K, W_LO, W_HI))
        arcs = []
        for a in self.lp.arcs:
            cs = a.region.controls
            if start == 0:
                V = np.tile(cs.center, (M, 1))
                W = np.full(M, w0)
            else:
                V = rng.uniform(cs.lo_arr, cs.hi_arr, size=(M, a.m))
                W = np.clip(w0 * rng.uniform(0.3, 1.7) * rng.uniform(0.8, 1.2, size=M), W_LO, W_HI)
            arcs.append((V, W))
        return self.pack(arcs)


@dataclass
class StartResult:
    start: int
    x: np.ndarray
    cost: float
    residual: float
    penalty: float
    iterations: int
    outer: int
    converged: bool
    lam: np.ndarray
    mu: float
    region_ok: bool = True


def _augmented_lagrangian(sh: Shooting, x0: np.ndarray, start: int, ctol: float) -> StartResult:
    disc = sh.disc
    bounds = list(zip(sh.lo, sh.hi))
    x = np.clip(x0, sh.lo, sh.hi)
    lam = np.zeros(sh.n_cons)
    mu = disc.mu0
    prev = math.inf
    iters = 0
    outer = 0
    cn = math.inf
    converged = False
    for outer in range(1, disc.max_outer + 1):
        res = minimize(
            sh.al_value_and_grad,
            x,
            args=(lam, mu),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": disc.inner_maxiter, "ftol": 1e-15, "gtol": 1e-10, "maxcor": 20},
        )
        x = res.x
        iters += int(res.nit)
        try:
            _, J, pen, c = sh.evaluate(x)
        except (EvalError, DegenerateNormal):
            break
        cn = float(np.max(np.abs(c))) if len(c) else 0.0
        if cn <= ctol and (res.success or outer == disc.max_outer):
            converged = True
            # one more multiplier update keeps the reported multipliers current
            lam = lam + mu * c
            break
        lam = lam + mu * c
        if cn > 0.25 * prev:
            mu *= disc.mu_growth
        prev = cn
    try:
        Ys, J, pen, c = sh.evaluate(x)
        cn = float(np.max(np.abs(c))) if len(c) else 0.0
    except (EvalError, DegenerateNormal):
        J, pen, cn = math.inf, math.inf, math.inf
    return StartResult(start, x, J, cn, pen, iters, outer, converged and cn <= ctol, lam, mu)


# ---------------------------------------------------------------------------
# solutions


@dataclass
class ArcData:
    label: RegionLabel
    controls: np.ndarray  # (M, m)
    clocks: np.ndarray  # (M,) clock rates w
    nodes: np.ndarray  # (M+1, N) states at node boundaries
    times: np.ndarray  # (M+1,) original time at node boundaries

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class StructureSolution:
    word: StructureWord
    status: str
    cost: float
    arcs: list
    switch_times: list
    switch_points: list
    residual: float
    grad_norm: float
    iterations: int
    penalty: float
    x: np.ndarray = field(repr=False)
    disc: Discretization = field(repr=False, default_factory=Discretization)
    multipliers: np.ndarray = field(repr=False, default=None)
    boundary_active: bool = False
    degenerate: bool = False
    starts: list = field(default_factory=list, repr=False)
    t0: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.arcs)

    @property
    def tf(self) -> float:
        return self.arcs[-1].t_end

    @property
    def feasible(self) -> bool:
        return self.status in (CONVERGED, ABNORMAL_SUSPECT)


def _region_ok(prob: RegionalProblem, lp: LiftedProblem, arcs: list, samples_per_cell: int = 4, skip_cells: int = 2) -> bool:
    """Pointwise reclassification of the sampled trajectory (junction-adjacent
    cells excluded)."""
    iface = prob.iface
    for k, (spec, arc) in enumerate(zip(lp.arcs, arcs)):
        if spec.on_interface:
            continue
        sm = integrate_arc(spec.region.f, arc.nodes[0], arc.controls, arc.clocks, samples_per_cell)
        M = len(arc.clocks)
        for idx, y in enumerate(sm.Y):
            cell = idx / samples_per_cell
            if (k > 0 and cell <= skip_cells) or (k < lp.K - 1 and cell >= M - skip_cells):
                continue
            if -spec.side * iface.value(y) > REGION_TOL:
                return False
    return True


def _make_solution(sh: Shooting, r: StartResult, status: str, starts: list) -> StructureSolution:
    prob, lp = sh.prob, sh.lp
    Ys, J, pen = sh.forward(r.x)
    arcs = []
    t = prob.t0
    for spec, (V, W), Y in zip(lp.arcs, sh.unpack(r.x), Ys):
        times = clock_nodes(t, W)
        arcs.append(ArcData(spec.label, V.copy(), W.copy(), Y.copy(), times))
        t = float(times[-1])
    _, g = sh.al_value_and_grad(r.x, r.lam, r.mu)
    # projected gradient of the final subproblem
    pg = np.clip(r.x - g, sh.lo, sh.hi) - r.x
    w_all = np.concatenate([a.clocks for a in arcs])
    bnd = bool(np.any(w_all <= W_LO * (1 + 1e-6)) or np.any(w_all >= W_HI * (1 - 1e-6)))
    degen = any(a.duration <= W_LO * (1 + 1e-3) for a in arcs)
    warnings = []
    if bnd:
        warnings.append("clock-rate bound active")
    if degen:
        warnings.append("structure-degenerate: an arc sits at the minimum duration")
    return StructureSolution(
        word=lp.word,
        status=status,
        cost=float(J),
        arcs=arcs,
        switch_times=[a.t_end for a in arcs[:-1]],
        switch_points=[a.nodes[-1].copy() for a in arcs[:-1]],
        residual=r.residual,
        grad_norm=float(np.linalg.norm(pg)),
        iterations=r.iterations,
        penalty=float(pen),
        x=r.x.copy(),
        disc=sh.disc,
        multipliers=r.lam.copy(),
        boundary_active=bnd,
        degenerate=degen,
        starts=starts,
        t0=prob.t0,
        warnings=warnings,
    )


def solve_structure(
    prob: RegionalProblem,
    word,
    disc: Discretization | None = None,
    init: np.ndarray | None = None,
    backend: str | None = None,
) -> StructureSolution:
    """Solve the lifted problem of one structure word.

    ``init`` warm-starts a single run from a previous decision vector.
    Never raises for infeasibility: the returned status is ``INFEASIBLE``
    when no start reaches a constraint residual of 1e-4.
    """
    disc = disc or Discretization()
    lp = build(prob, word)
    sh = Shooting(lp, disc, backend)
    ss = np.random.SeedSequence([disc.seed, *[int(l) for l in lp.word.labels]])
    rng = np.random.default_rng(ss)
    tfg = sh.tf_guess(rng)
    if init is not None:
        guesses = [np.asarray(init, dtype=float)]
    else:
        guesses = [sh.initial_guess(s, tfg, rng) for s in range(disc.n_starts)]
    results = []
    for s, g in enumerate(guesses):
        r = _augmented_lagrangian(sh, g, s, disc.ctol)
        results.append(r)
        log.debug("%s start %d: cost %.9g residual %.2e (%d its)", lp.word, s, r.cost, r.residual, r.iterations)
    summary = [
        {"start": r.start, "cost": r.cost, "residual": r.residual, "iterations": r.iterations} for r in results
    ]
    ok = [r for r in results if r.residual <= FEASIBLE_RESIDUAL and math.isfinite(r.cost)]
    for r in ok:
        Ys, _, _ = sh.forward(r.x)
        arcs = []
        t = prob.t0
        for spec, (V, W), Y in zip(lp.arcs, sh.unpack(r.x), Ys):
            arcs.append(ArcData(spec.label, V, W, Y, clock_nodes(t, W)))
            t = arcs[-1].t_end
        r.region_ok = _region_ok(prob, lp, arcs)
    ok = [r for r in ok if r.region_ok]
    if not ok:
        best = min(results, key=lambda r: (r.residual, r.cost))
        sol = _make_solution(sh, best, INFEASIBLE, summary)
        return sol
    conv = [r for r in ok if r.converged]
    pool = conv or ok
    best = min(pool, key=lambda r: (r.cost, r.start))
    return _make_solution(sh, best, CONVERGED if best.converged else MAX_ITER, summary)


@dataclass
class RegionalSolution:
    best: StructureSolution
    all: list
    U: float


def _solve_one(args):
    prob, word, disc, backend = args
    return solve_structure(prob, word, disc, backend=backend)


def solve_regional(
    prob: RegionalProblem,
    max_arcs: int = DEFAULT_MAX_ARCS,
    disc: Discretization | None = None,
    workers: int = 1,
    backend: str | None = None,
) -> RegionalSolution:
    """Solve every admissible structure and keep the cheapest converged one.

    Ties within 1e-9 go to the shorter word, then to enumeration order.
    """
    disc = disc or Discretization()
    words = enumerate_words(prob.x0_label, prob.xf_label, max_arcs)
    jobs = [(prob, w, disc, backend) for w in words]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            sols = list(pool.map(_solve_one, jobs))
    else:
        sols = [_solve_one(j) for j in jobs]
    best = None
    for s in sols:
        if s.status != CONVERGED:
            continue
        if best is None or s.cost < best.cost - TIE_TOL:
            best = s
    if best is None:
        exc = AllStructuresInfeasible(
            "no structure converged: " + ", ".join(f"{s.word}={s.status}" for s in sols)
        )
        exc.solutions = sols
        raise exc
    return RegionalSolution(best, sols, best.cost)


def solution_from_controls(prob: RegionalProblem, word, arcs: Sequence, disc: Discretization | None = None) -> StructureSolution:
    """Wrap given per-arc ``(V, W)`` controls as a solution (no optimisation).

    Useful for checking the necessary conditions on constructed trajectories.
    """
    disc = disc or Discretization(nodes=len(arcs[0][1]))
    lp = build(prob, word)
    sh = Shooting(lp, replace(disc, nodes=len(arcs[0][1])))
    x = sh.pack([(np.asarray(V, dtype=float).reshape(sh.M, a.m), np.asarray(W, dtype=float)) for (V, W), a in zip(arcs, lp.arcs)])
    _, J, pen, c = sh.evaluate(x)
    cn = float(np.max(np.abs(c))) if len(c) else 0.0
    r = StartResult(0, x, J, cn, pen, 0, 0, cn <= disc.ctol, np.zeros(sh.n_cons), disc.mu0)
    return _make_solution(sh, r, CONVERGED if cn <= disc.ctol else INFEASIBLE, [])
