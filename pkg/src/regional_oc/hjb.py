"""Semi-Lagrangian value iteration for 2-D minimum-time regional problems.

The scheme is the discrete dynamic programming principle

    u(x) = min_a  dt * l(x, a) + u(x + dt * f(x, a))

with bilinear interpolation at the foot point and ``dt = h / max(M, 1)``.
Nodes within half a cell of the interface see the union of both regional
control sets and the interface controls (the latter evaluated at the
projection of the node onto the interface).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from . import kernels
from .errors import NonConvergence, ProblemError
from .geometry import RegionLabel
from .problem import Region, RegionalProblem

N_CONTROL_SAMPLES = 64
SWEEP_TOL = 1e-8
MAX_SWEEPS = 100_000
COMPARE_TOL = 5e-2
# Start value for non-target nodes. A finite cap lets feet that touch
# not-yet-reached corners still propagate; anything left at or above
# UNREACHED / 2 after convergence is reported as +inf.
UNREACHED = 1e6

CSV_HEADER = "# x1_min x1_max x2_min x2_max h"


@dataclass
class GridValueFunction:
    domain: tuple  # (x1_min, x1_max, x2_min, x2_max)
    h: float
    values: np.ndarray  # (ny, nx), row j holds x2 = x2_min + j*h
    labels: np.ndarray  # RegionLabel values, same shape
    xf: np.ndarray | None = None
    r: float = 0.0
    sweeps: int = 0
    history: list = field(default_factory=list)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def x1(self) -> np.ndarray:
        return self.domain[0] + self.h * np.arange(self.values.shape[1])

    @property
    def x2(self) -> np.ndarray:
        return self.domain[2] + self.h * np.arange(self.values.shape[0])

    def node(self, i: int, j: int) -> np.ndarray:
        return np.array([self.domain[0] + i * self.h, self.domain[2] + j * self.h])

    def __call__(self, x) -> float:
        """Bilinear interpolation; ``inf`` outside the grid or next to unreached nodes."""
        ny, nx = self.values.shape
        s = (float(x[0]) - self.domain[0]) / self.h
        t = (float(x[1]) - self.domain[2]) / self.h
        if not (-1e-9 <= s <= nx - 1 + 1e-9 and -1e-9 <= t <= ny - 1 + 1e-9):
            return math.inf
        i = min(max(int(math.floor(s)), 0), nx - 2)
        j = min(max(int(math.floor(t)), 0), ny - 2)
        fx, fy = s - i, t - j
        v = self.values
        acc = 0.0
        for wt, (ci, cj) in (((1 - fx) * (1 - fy), (i, j)), (fx * (1 - fy), (i + 1, j)),
                             ((1 - fx) * fy, (i, j + 1)), (fx * fy, (i + 1, j + 1))):
            if wt <= 1e-14:
                continue
            if math.isinf(v[cj, ci]):
                return math.inf
            acc += wt * v[cj, ci]
        return acc

    def to_csv(self, path) -> None:
        d = self.domain
        lines = [CSV_HEADER, " ".join(_fmt(v) for v in (*d, self.h))]
        lines += [",".join(_fmt(v) for v in row) for row in self.values]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "GridValueFunction":
        with open(path) as fh:
            rows = [ln.strip() for ln in fh if ln.strip()]
        if rows[0] != CSV_HEADER:
            raise ValueError(f"{path}: missing value-grid header")
        x1a, x1b, x2a, x2b, h = (float(v) for v in rows[1].split())
        vals = np.array([[float(v) for v in r.split(",")] for r in rows[2:]])
        return cls((x1a, x1b, x2a, x2b), h, vals, np.zeros(vals.shape, dtype=np.int8))


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return f"{v:.12g}"


def _grid_size(lo: float, hi: float, h: float) -> int:
    n = (hi - lo) / h
    k = int(round(n))
    if abs(n - k) > 1e-9 * max(1.0, n):
        raise ValueError(f"domain length {hi - lo} is not a multiple of h = {h}")
    return k + 1


def _options(region: Region, X: np.ndarray, dt: float, h: float, n_samples: int):
    """Foot offsets in cell units and stage costs, shape (P, S) each."""
    A = region.controls.sample_grid(n_samples)
    xs = [X[:, 0][:, None], X[:, 1][:, None]]
    cols = [A[None, :, j] for j in range(A.shape[1])]
    shape = (X.shape[0], A.shape[0])
    g1 = np.broadcast_to(ex.evaluate_array(region.f[0], xs, cols), shape)
    g2 = np.broadcast_to(ex.evaluate_array(region.f[1], xs, cols), shape)
    c = np.broadcast_to(ex.evaluate_array(region.l, xs, cols), shape)
    return dt * g1 / h, dt * g2 / h, dt * c


class _Tables:
    """Option tables in the flat layout the sweep kernels expect."""

    def __init__(self):
        self.chunks = []
        self.count = 0

    def add(self, dx: np.ndarray, dy: np.ndarray, cost: np.ndarray) -> int:
        self.chunks.append((dx, dy, cost))
        self.count += 1
        return self.count - 1

    def pack(self):
        lens = [len(c[0]) for c in self.chunks]
        start = np.zeros(len(lens) + 1, dtype=np.int32)
        start[1:] = np.cumsum(lens)
        dx = np.concatenate([c[0] for c in self.chunks])
        dy = np.concatenate([c[1] for c in self.chunks])
        cost = np.ascontiguousarray(np.concatenate([c[2] for c in self.chunks]), dtype=float)
        di = np.floor(dx)
        dj = np.floor(dy)
        fx = np.ascontiguousarray(dx - di)
        fy = np.ascontiguousarray(dy - dj)
        return start, di.astype(np.int32), dj.astype(np.int32), fx, fy, cost


def solve_grid(
    prob: RegionalProblem,
    domain,
    h: float,
    r: float,
    *,
    interface: bool = True,
    jacobi: bool = False,
    tol: float = SWEEP_TOL,
    max_sweeps: int = MAX_SWEEPS,
    n_samples: int = N_CONTROL_SAMPLES,
    backend=None,
) -> GridValueFunction:
    """Value function of the minimum-time problem to the ball ``B(xf, r)``.

    ``interface=False`` drops the interface controls (interface nodes then
    only see the two regional control sets). ``jacobi=True`` replaces the
    Gauss-Seidel sweeps by Jacobi sweeps.
    """
    if prob.n_state != 2:
        raise ProblemError(f"the grid solver handles 2-D problems only (state_dim = {prob.n_state})")
    if prob.mode != "min_time":
        raise ProblemError("the grid solver handles minimum-time problems only")
    if h <= 0 or r < 0:
        raise ValueError("need h > 0 and r >= 0")
    kern = kernels.get_backend(backend)
    x1a, x1b, x2a, x2b = (float(v) for v in domain)
    nx, ny = _grid_size(x1a, x1b, h), _grid_size(x2a, x2b, h)
    dt = h / max(prob.speed_bound(), 1.0)

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    X = np.stack([x1a + h * I.ravel(), x2a + h * J.ravel()], axis=1)
    iface = prob.iface
    psi = ex.evaluate_array(iface.psi, [X[:, 0], X[:, 1]], [])
    grads = [ex.evaluate_array(g, [X[:, 0], X[:, 1]], []) for g in iface.grad_exprs]
    gnorm = np.sqrt(grads[0] ** 2 + grads[1] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        near = np.where(gnorm > 0, np.abs(psi) / gnorm <= 0.5 * h * (1 + 1e-12), np.abs(psi) <= 1e-12)
    labels = np.where(psi < 0, int(RegionLabel.R1), int(RegionLabel.R2)).astype(np.int8)
    labels[near] = int(RegionLabel.H)

    tabs = _Tables()
    node_tab = np.full(nx * ny, -1, dtype=np.int32)
    R1, R2, RH = (prob.regions[k] for k in (RegionLabel.R1, RegionLabel.R2, RegionLabel.H))

    def assign(idx, parts):
        """parts: list of (region, points) evaluated at ``points`` for nodes ``idx``."""
        if len(idx) == 0:
            return
        shared = all(reg.state_independent for reg, _ in parts)
        opts = [_options(reg, pts[:1] if shared else pts, dt, h, n_samples) for reg, pts in parts]
        dx = np.concatenate([o[0] for o in opts], axis=1)
        dy = np.concatenate([o[1] for o in opts], axis=1)
        c = np.concatenate([o[2] for o in opts], axis=1)
        if shared:
            node_tab[idx] = tabs.add(dx[0], dy[0], c[0])
        else:
            for row, k in enumerate(idx):
                node_tab[k] = tabs.add(dx[row], dy[row], c[row])

    for lab, reg in ((RegionLabel.R1, R1), (RegionLabel.R2, R2)):
        idx = np.flatnonzero(labels == int(lab))
        assign(idx, [(reg, X[idx])])
    idx = np.flatnonzero(labels == int(RegionLabel.H))
    if len(idx):
        parts = [(R1, X[idx]), (R2, X[idx])]
        if interface:
            parts.append((RH, np.array([iface.snap(x) for x in X[idx]])))
        assign(idx, parts)

    u = np.full(nx * ny, UNREACHED)
    xf = np.asarray(prob.xf, dtype=float)
    in_target = np.linalg.norm(X - xf, axis=1) <= r + 1e-12
    fixed = in_target.astype(np.int8)
    u[in_target] = 0.0
    u = u.reshape(ny, nx)
    start, di, dj, fx, fy, cost = tabs.pack()
    args = (fixed, node_tab, start, di, dj, fx, fy, cost)

    history = []
    for sweep in range(1, max_sweeps + 1):
        if jacobi:
            u, change = kern.hjb_jacobi(u, *args)
            u = np.ascontiguousarray(u)
        else:
            change = kern.hjb_gauss_seidel(u, *args, (sweep - 1) % 4)
        history.append(change)
        if change <= tol and np.isfinite(change):
            break
    else:
        raise NonConvergence(f"value iteration did not settle within {max_sweeps} sweeps")
    u[u >= 0.5 * UNREACHED] = math.inf
    return GridValueFunction((x1a, x1b, x2a, x2b), h, u, labels.reshape(ny, nx), xf, r, sweep, history)


@dataclass
class Comparison:
    grid_value: float
    U: float
    correction: float
    discrepancy: float
    tol: float = COMPARE_TOL

    @property
    def passed(self) -> bool:
        return bool(self.discrepancy <= self.tol)

    def line(self) -> str:
        return (f"grid u(x0) = {self.grid_value:.6f}  U - r/v = {self.U - self.correction:.6f}  "
                f"discrepancy = {self.discrepancy:.3e}  {'PASS' if self.passed else 'FAIL'}")


def terminal_speed(prob: RegionalProblem, sol) -> float:
    arc = sol.arcs[-1]
    reg = prob.regions[RegionLabel.parse(arc.label)]
    return float(np.linalg.norm(reg.dynamics(arc.nodes[-1], arc.controls[-1])))


def compare(gvf: GridValueFunction, rs, prob: RegionalProblem, r: float | None = None,
            tol: float = COMPARE_TOL) -> Comparison:
    """Grid value at ``x0`` against ``U`` shortened by the target-ball reach time.

    ``rs`` is a RegionalSolution (anything with ``U`` and ``best``); the
    correction is ``r`` over the speed at the end of the optimal final arc.
    """
    if r is None:
        r = gvf.r
    v = terminal_speed(prob, rs.best)
    corr = r / v if v > 0 else 0.0
    g = gvf(prob.x0)
    return Comparison(g, float(rs.U), corr, abs(g - (rs.U - corr)), tol)
