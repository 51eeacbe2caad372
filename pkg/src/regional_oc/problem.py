"""Regional problem instances, the region/interface Hamiltonians and the
problem-file loader."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import expr as ex
from .errors import (
    DegenerateNormal,
    EvalError,
    ExprSyntaxError,
    NonTangentCostate,
    NotOnInterface,
    ProblemError,
)
from .geometry import Interface, RegionLabel, check_tangency

HAMILTONIAN_SEED = 20240611
N_RANDOM_STARTS = 7
MAX_CORNERS = 8


@dataclass(frozen=True)
class ControlSet:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi must have the same length")
        for l, h in zip(self.lo, self.hi):
            if not (math.isfinite(l) and math.isfinite(h)) or l > h:
                raise ValueError(f"invalid control interval [{l}, {h}]")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lo_arr(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo_arr + self.hi_arr)

    def clip(self, a):
        return np.clip(a, self.lo_arr, self.hi_arr)

    def contains(self, a, tol: float = 0.0) -> bool:
        a = np.asarray(a, dtype=float)
        return bool(np.all(a >= self.lo_arr - tol) and np.all(a <= self.hi_arr + tol))

    def corners(self, limit: int = MAX_CORNERS) -> np.ndarray:
        m = self.dim
        if m == 0:
            return np.zeros((1, 0))
        n = min(2**m, limit)
        out = np.empty((n, m))
        for k in range(n):
            for j in range(m):
                out[k, j] = self.hi[j] if (k >> j) & 1 else self.lo[j]
        return out

    def sample_grid(self, n_total: int) -> np.ndarray:
        """Tensor grid with about ``n_total`` points (64 -> 64 in 1-D, 8x8 in 2-D)."""
        m = self.dim
        if m == 0:
            return np.zeros((1, 0))
        per = max(2, int(round(n_total ** (1.0 / m))))
        axes = [np.linspace(l, h, per) if h > l else np.array([l]) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)


@dataclass(frozen=True)
class Region:
    label: RegionLabel
    f: tuple  # tuple of Expr, length N
    l: ex.Expr
    controls: ControlSet

    @property
    def m(self) -> int:
        return self.controls.dim

    @property
    def state_independent(self) -> bool:
        return not (any(ex.depends_on_state(fi) for fi in self.f) or ex.depends_on_state(self.l))

    def dynamics(self, x, a) -> np.ndarray:
        return np.array([ex.evaluate(fi, x, a) for fi in self.f])

    def cost(self, x, a) -> float:
        return ex.evaluate(self.l, x, a)

    def jac_state(self, x, a) -> np.ndarray:
        n = len(self.f)
        return np.array([[ex.evaluate(ex.diff(fi, "x", j), x, a) for j in range(n)] for fi in self.f])

    def cost_grad_state(self, x, a) -> np.ndarray:
        return ex.grad_state(self.l, x, a)


@dataclass(frozen=True)
class HamiltonianEval:
    value: float
    argmax_control: np.ndarray


@dataclass(frozen=True)
class Bounds:
    M: float | None = None
    L: float | None = None
    L1: float | None = None


@dataclass(frozen=True)
class RegionalProblem:
    n_state: int
    iface: Interface
    regions: Mapping[RegionLabel, Region]
    x0: tuple
    xf: tuple
    t0: float = 0.0
    tf: float | None = None  # None means free final time
    mode: str = "min_time"
    bounds: Bounds = Bounds()
    source: dict | None = field(default=None, compare=False, repr=False)
    x0_label: RegionLabel = field(init=False)
    xf_label: RegionLabel = field(init=False)

    def __post_init__(self):
        if len(self.x0) != self.n_state or len(self.xf) != self.n_state:
            raise ProblemError("x0 and xf must have state_dim components")
        if np.allclose(self.x0, self.xf, rtol=0, atol=0):
            raise ProblemError("x0 and xf must differ")
        if self.mode not in ("min_time", "bolza"):
            raise ProblemError(f"unknown mode {self.mode!r}")
        if self.mode == "min_time":
            if self.tf is not None:
                raise ProblemError("minimum-time problems have a free final time")
            for r in self.regions.values():
                if r.l != ex.Const(1.0):
                    raise ProblemError("minimum-time problems require running cost 1")
        if set(self.regions) != set(RegionLabel):
            raise ProblemError("regions 1, 2 and H must all be defined")
        for r in self.regions.values():
            if len(r.f) != self.n_state:
                raise ProblemError(f"dynamics of region {r.label.text} must have {self.n_state} components")
            if any(ex.uses_op(e, "abs") for e in (*r.f, r.l)):
                raise ProblemError(
                    f"abs() is not allowed in the dynamics or cost of region {r.label.text} (C^1 data required)"
                )
        if self.tf is not None and not self.tf > self.t0:
            raise ProblemError("tf must exceed t0")
        object.__setattr__(self, "x0_label", self.iface.classify(self.x0))
        object.__setattr__(self, "xf_label", self.iface.classify(self.xf))

    @property
    def free_tf(self) -> bool:
        return self.tf is None

    def region(self, label) -> Region:
        return self.regions[RegionLabel.parse(label)]

    def with_endpoints(self, x0=None, xf=None, t0=None, tf=None) -> "RegionalProblem":
        """Copy with perturbed boundary data (used by sensitivity checks)."""
        return RegionalProblem(
            n_state=self.n_state,
            iface=self.iface,
            regions=self.regions,
            x0=tuple(float(v) for v in (self.x0 if x0 is None else x0)),
            xf=tuple(float(v) for v in (self.xf if xf is None else xf)),
            t0=self.t0 if t0 is None else float(t0),
            tf=self.tf if tf is None else float(tf),
            mode=self.mode,
            bounds=self.bounds,
            source=None,
        )

    def speed_bound(self, samples: int = 200, seed: int = 0) -> float:
        """``bounds.M`` if declared, otherwise a sampled estimate of max |f|."""
        if self.bounds.M is not None:
            return float(self.bounds.M)
        rng = np.random.default_rng(seed)
        lo = np.minimum(self.x0, self.xf) - 1.0
        hi = np.maximum(self.x0, self.xf) + 1.0
        best = 0.0
        for r in self.regions.values():
            for _ in range(samples):
                x = rng.uniform(lo, hi)
                a = rng.uniform(r.controls.lo_arr, r.controls.hi_arr) if r.m else []
                try:
                    best = max(best, float(np.linalg.norm(r.dynamics(x, a))))
                except EvalError:
                    continue
        return best


# ---------------------------------------------------------------------------
# Hamiltonians


def _random_starts(cs: ControlSet) -> np.ndarray:
    rng = np.random.default_rng(HAMILTONIAN_SEED)
    return rng.uniform(cs.lo_arr, cs.hi_arr, size=(N_RANDOM_STARTS, cs.dim))


def _hs_and_grad(region: Region, x, q, p0, A: np.ndarray):
    """Pre-Hamiltonian and its control gradient at a batch ``A`` (S, m)."""
    cols = [A[:, j] for j in range(A.shape[1])]
    xs = [np.full(A.shape[0], float(v)) for v in x]
    val = p0 * ex.evaluate_array(region.l, xs, cols)
    grad = np.zeros_like(A)
    for j in range(A.shape[1]):
        grad[:, j] = p0 * ex.evaluate_array(ex.diff(region.l, "a", j), xs, cols)
    for i, fi in enumerate(region.f):
        if q[i] == 0.0:
            continue
        val = val + q[i] * ex.evaluate_array(fi, xs, cols)
        for j in range(A.shape[1]):
            d = ex.diff(fi, "a", j)
            if d != ex.Const(0.0):
                grad[:, j] += q[i] * ex.evaluate_array(d, xs, cols)
    return np.asarray(val, dtype=float), grad


def maximize_hamiltonian(region: Region, x, q, p0: float, tol: float = 1e-10, max_iter: int = 200) -> HamiltonianEval:
    """sup over the control box of ``<q, f(x, a)> + p0 l(x, a)``.

    Multi-start projected gradient ascent from the box corners, its center and
    seven seeded uniform draws, then a bounded quasi-Newton polish of the
    leading candidates. Ties are broken towards the lexicographically
    smallest control.
    """
    q = np.asarray(q, dtype=float)
    cs = region.controls
    if cs.dim == 0:
        A = np.zeros((1, 0))
        val, _ = _hs_and_grad(region, x, q, p0, A)
        return HamiltonianEval(float(val[0]), np.zeros(0))
    lo, hi = cs.lo_arr, cs.hi_arr
    A = np.vstack([cs.corners(), cs.center[None, :], _random_starts(cs)])
    val, grad = _hs_and_grad(region, x, q, p0, A)
    step = np.ones(A.shape[0])
    active = np.ones(A.shape[0], dtype=bool)
    for _ in range(max_iter):
        pg = np.clip(A + grad, lo, hi) - A
        pgn = np.linalg.norm(pg, axis=1)
        active &= pgn > tol
        if not active.any():
            break
        trial = np.clip(A + step[:, None] * grad, lo, hi)
        tval, tgrad = _hs_and_grad(region, x, q, p0, trial)
        gain = np.einsum("ij,ij->i", grad, trial - A)
        ok = active & (tval >= val + 1e-4 * gain)
        # accept
        A[ok] = trial[ok]
        val[ok] = tval[ok]
        grad[ok] = tgrad[ok]
        step[ok] = np.minimum(step[ok] * 2.0, 1e6)
        bad = active & ~ok
        step[bad] *= 0.5
        active &= step > 1e-16
    val, A = _polish(region, x, q, p0, A, val, lo, hi)
    best = float(val.max())
    tie = np.flatnonzero(val >= best - 1e-12 * max(1.0, abs(best)))
    cand = A[tie]
    order = np.lexsort(cand.T[::-1])
    return HamiltonianEval(best, cand[order[0]].copy())


def _polish(region, x, q, p0, A, val, lo, hi, window: float = 1e-3):
    """Refine the leading starts with a bounded quasi-Newton solve; the
    gradient ascent alone zigzags on curved maxima."""
    top = float(val.max())
    idx = np.flatnonzero(val >= top - window * max(1.0, abs(top)))
    bounds = list(zip(lo, hi))

    def neg(a):
        v, g = _hs_and_grad(region, x, q, p0, a[None, :])
        return -float(v[0]), -g[0]

    A, val = A.copy(), val.copy()
    for k in idx:
        res = minimize(neg, A[k], jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 200})
        if -res.fun > val[k]:
            A[k] = np.clip(res.x, lo, hi)
            val[k] = -res.fun
    return val, A


def hamiltonian_region(prob: RegionalProblem, label, x, q, p0: float) -> HamiltonianEval:
    label = RegionLabel.parse(label)
    if label == RegionLabel.H:
        raise ValueError("use hamiltonian_interface for the interface")
    return maximize_hamiltonian(prob.regions[label], x, q, p0)


def hamiltonian_interface(prob: RegionalProblem, x, q_h, p0: float, tol: float = 1e-8) -> HamiltonianEval:
    iface = prob.iface
    if abs(iface.value(x)) > max(iface.eta, 1e-12):
        raise NotOnInterface(f"psi(x) = {iface.value(x):.3e}")
    n = iface.normal(x)
    q_h = np.asarray(q_h, dtype=float)
    if abs(float(q_h @ n)) > tol:
        raise NonTangentCostate(f"<q_H, n> = {float(q_h @ n):.3e}")
    return maximize_hamiltonian(prob.regions[RegionLabel.H], x, q_h, p0)


def pre_hamiltonian(region: Region, x, q, p0: float, a) -> float:
    return float(np.dot(q, region.dynamics(x, a)) + p0 * region.cost(x, a))


# ---------------------------------------------------------------------------
# Loader


def _const_value(v, path: str) -> float:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if isinstance(v, str):
        try:
            e = ex.parse(v, 0, 0)
            return ex.evaluate(e)
        except (ExprSyntaxError, EvalError) as exc:
            raise ProblemError(f"{path}: {exc}") from None
    raise ProblemError(f"{path}: expected a number, got {v!r}")


def _expr(src, path: str, n: int, m: int | None) -> ex.Expr:
    if isinstance(src, (int, float)) and not isinstance(src, bool):
        src = repr(float(src))
    if not isinstance(src, str):
        raise ProblemError(f"{path}: expected an expression string, got {src!r}")
    try:
        return ex.parse(src, n, m)
    except ExprSyntaxError as exc:
        err = ProblemError(f"{path}: {exc}")
        err.expr_source = src
        err.expr_line, err.expr_column = exc.line, exc.column
        raise err from None


def _require(d: Mapping, key: str, path: str):
    if not isinstance(d, Mapping) or key not in d:
        raise ProblemError(f"{path}: missing field {key!r}")
    return d[key]


def problem_from_dict(data: Mapping[str, Any]) -> RegionalProblem:
    """Build a :class:`RegionalProblem` from the parsed problem document."""
    source = copy.deepcopy(dict(data))
    n = _require(data, "state_dim", "")
    if not isinstance(n, int) or not 1 <= n <= 9:
        raise ProblemError("state_dim must be an integer between 1 and 9")
    mode = data.get("mode", "min_time")
    iface_d = _require(data, "interface", "")
    psi = _expr(_require(iface_d, "psi", "interface"), "interface.psi", n, 0)
    eta = float(iface_d.get("eta", 1e-9))
    iface = Interface(psi, n, eta)

    regions_d = _require(data, "regions", "")
    regions = {}
    for key in ("1", "2", "H"):
        rd = _require(regions_d, key, "regions")
        path = f"regions.{key}"
        ctrl = rd.get("controls", [])
        if not isinstance(ctrl, list):
            raise ProblemError(f"{path}.controls: expected a list of [lo, hi] pairs")
        lo, hi = [], []
        for k, pair in enumerate(ctrl):
            if not isinstance(pair, list) or len(pair) != 2:
                raise ProblemError(f"{path}.controls[{k}]: expected [lo, hi]")
            lo.append(_const_value(pair[0], f"{path}.controls[{k}][0]"))
            hi.append(_const_value(pair[1], f"{path}.controls[{k}][1]"))
        try:
            cs = ControlSet(tuple(lo), tuple(hi))
        except ValueError as exc:
            raise ProblemError(f"{path}.controls: {exc}") from None
        m = cs.dim
        f_src = _require(rd, "f", path)
        if not isinstance(f_src, list) or len(f_src) != n:
            raise ProblemError(f"{path}.f: expected a list of {n} expressions")
        f = tuple(_expr(s, f"{path}.f[{i}]", n, m) for i, s in enumerate(f_src))
        l_src = rd.get("l", "1" if mode == "min_time" else None)
        if l_src is None:
            raise ProblemError(f"{path}: missing field 'l'")
        l = _expr(l_src, f"{path}.l", n, m)
        lab = RegionLabel.parse(key)
        regions[lab] = Region(lab, f, l, cs)

    bd = _require(data, "boundary", "")
    x0 = tuple(_const_value(v, "boundary.x0") for v in _require(bd, "x0", "boundary"))
    xf = tuple(_const_value(v, "boundary.xf") for v in _require(bd, "xf", "boundary"))
    t0 = _const_value(bd.get("t0", 0.0), "boundary.t0")
    tf_raw = bd.get("tf", "free")
    tf = None if tf_raw == "free" else _const_value(tf_raw, "boundary.tf")

    b = data.get("bounds") or {}
    bounds = Bounds(
        M=None if b.get("M") is None else float(b["M"]),
        L=None if b.get("L") is None else float(b["L"]),
        L1=None if b.get("L1") is None else float(b["L1"]),
    )
    try:
        prob = RegionalProblem(n, iface, regions, x0, xf, t0, tf, mode, bounds, source)
    except DegenerateNormal as exc:
        raise ProblemError(str(exc)) from None

    # sign convention: psi < 0 on region 1, checked where the file declares it
    for key, lab in (("x0_region", prob.x0_label), ("xf_region", prob.xf_label)):
        if key in bd and RegionLabel.parse(bd[key]) != lab:
            raise ProblemError(
                f"boundary.{key} declares region {bd[key]} but psi classifies the point as {lab.text}"
                " (convention: psi < 0 in region 1)"
            )
    _check_interface_tangency(prob)
    return prob


def _check_interface_tangency(prob: RegionalProblem) -> None:
    rh = prob.regions[RegionLabel.H]
    pts = []
    for base in (prob.x0, prob.xf, 0.5 * (np.asarray(prob.x0) + np.asarray(prob.xf))):
        try:
            y = prob.iface.snap(base)
        except (DegenerateNormal, EvalError):
            continue
        if abs(prob.iface.value(y)) <= prob.iface.eta:
            pts.append(y)
    controls = list(rh.controls.corners()) + [rh.controls.center]
    samples = [(p, a) for p in pts for a in controls]
    try:
        rep = check_tangency(prob.iface, rh.f, samples)
    except (DegenerateNormal, EvalError) as exc:
        raise ProblemError(f"interface dynamics check failed: {exc}") from None
    if not rep.passed:
        raise ProblemError(
            f"interface dynamics f_H is not tangent to H (residual {rep.max_residual:.3e})"
        )


class ProblemFileError(ProblemError):
    def __init__(self, message: str, line: int, column: int):
        self.line, self.column = line, column
        super().__init__(f"line {line}, column {column}: {message}")


def _locate(text: str, src: str) -> tuple[int, int] | None:
    needle = json.dumps(src)
    k = text.find(needle)
    if k < 0:
        return None
    line = text.count("\n", 0, k) + 1
    col = k - (text.rfind("\n", 0, k) + 1) + 1
    return line, col + 1  # skip the opening quote


def loads_problem(text: str) -> RegionalProblem:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(data, dict):
        raise ProblemFileError("top-level value must be an object", 1, 1)
    try:
        return problem_from_dict(data)
    except ProblemError as exc:
        src = getattr(exc, "expr_source", None)
        if src is not None:
            pos = _locate(text, src)
            if pos is not None:
                line = pos[0] + exc.expr_line - 1
                col = (pos[1] if exc.expr_line == 1 else 0) + exc.expr_column - 1
                raise ProblemFileError(str(exc), line, col) from None
        raise ProblemFileError(str(exc), 1, 1) from None


def load_problem(path) -> RegionalProblem:
    return loads_problem(Path(path).read_text(encoding="utf-8"))


BUNDLED = Path(__file__).with_name("problems")


def bundled_problem(name: str) -> RegionalProblem:
    """Load one of the problem files shipped in ``regional_oc/problems``."""
    return load_problem(BUNDLED / f"{name}.json")
