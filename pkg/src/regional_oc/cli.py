"""``regional-oc`` command line: solve, verify and hjb."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, hjb, pmp
from .errors import AllStructuresInfeasible, NonConvergence, ProblemError, RegionalError
from .geometry import RegionLabel
from .kernels import BACKEND
from .problem import BUNDLED, RegionalProblem, load_problem, problem_from_dict
from .solve import Discretization, RegionalSolution, StructureSolution, solution_from_controls, solve_regional
from .structures import DEFAULT_MAX_ARCS, StructureWord

log = logging.getLogger("regional_oc")

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3
EXIT_HJB = 4

REPORT = "report.json"
TIMING = "timing.json"
DIGITS = 12


# ---------------------------------------------------------------------------
# serialisation


def _num(v):
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(f"{v:.{DIGITS}g}")


def _clean(obj):
    """Round every float to 12 significant digits, recursively."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2) + "\n")


def _structure_doc(s: StructureSolution) -> dict:
    return {
        "word": str(s.word),
        "status": s.status,
        "cost": s.cost,
        "tf": s.tf,
        "switch_times": list(s.switch_times),
        "switch_points": [list(p) for p in s.switch_points],
        "residual": s.residual,
        "iterations": s.iterations,
        "degenerate": s.degenerate,
        "warnings": list(s.warnings),
        "arcs": [
            {"label": a.label.text, "duration": a.duration, "controls": a.controls, "clocks": a.clocks}
            for a in s.arcs
        ],
    }


def _config(disc: Discretization, max_arcs: int) -> dict:
    return {
        "max_arcs": max_arcs,
        "nodes": disc.nodes,
        "substeps": disc.substeps,
        "seed": disc.seed,
        "n_starts": disc.n_starts,
        "ctol": disc.ctol,
        "max_outer": disc.max_outer,
    }


def solve_report(prob: RegionalProblem, rs: RegionalSolution | None, sols: list, disc: Discretization,
                 max_arcs: int) -> dict:
    return {
        "version": __version__,
        "problem": prob.source,
        "config": _config(disc, max_arcs),
        "tolerances": {"feasible_residual": 1e-4, "verify": pmp.TOL_SOLVER, "tangent": pmp.TOL_TANGENT},
        "best": str(rs.best.word) if rs else None,
        "U": rs.U if rs else None,
        "structures": [_structure_doc(s) for s in sols],
    }


def _traj_rows(prob: RegionalProblem, sol: StructureSolution):
    """One row per node boundary: t, x, region, a, P (costates may be nan)."""
    N = prob.n_state
    S = sol.disc.substeps
    P_arcs = None
    try:
        adj = pmp.reconstruct_adjoint(prob, sol)
        P_arcs = [a.P[::S] for a in adj.arcs]
    except (RegionalError, np.linalg.LinAlgError) as exc:
        log.info("no costates for %s: %s", sol.word, exc)
    rows = []
    for k, arc in enumerate(sol.arcs):
        m = prob.regions[arc.label].m
        M = len(arc.clocks)
        for n in range(M + 1):
            if k > 0 and n == 0:
                continue
            a = arc.controls[min(n, M - 1)] if m else []
            P = P_arcs[k][n] if P_arcs is not None else [math.nan] * N
            rows.append([arc.times[n], *arc.nodes[n], arc.label.text, *a, *P])
    return rows, max((prob.regions[a.label].m for a in sol.arcs), default=0)


def write_traj(path: Path, prob: RegionalProblem, sol: StructureSolution) -> None:
    rows, m_max = _traj_rows(prob, sol)
    N = prob.n_state
    head = ["t", *[f"x{i + 1}" for i in range(N)], "region", *[f"a{j + 1}" for j in range(m_max)],
            *[f"P{i + 1}" for i in range(N)]]
    lines = [",".join(head)]
    for r in rows:
        t, xs, lab = r[0], r[1 : 1 + N], r[1 + N]
        rest = r[2 + N :]
        a, P = rest[: len(rest) - N], rest[len(rest) - N :]
        a = list(a) + [math.nan] * (m_max - len(a))
        cells = [_fmt(t), *(_fmt(v) for v in xs), lab, *(_fmt(v) for v in a), *(_fmt(v) for v in P)]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    return f"{v:.{DIGITS}g}"


def write_solve_outputs(out: Path, prob: RegionalProblem, rs: RegionalSolution | None, sols: list,
                        disc: Discretization, max_arcs: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / REPORT, solve_report(prob, rs, sols, disc, max_arcs))
    for s in sols:
        write_traj(out / f"traj_{s.word}.csv", prob, s)


# ---------------------------------------------------------------------------
# loading


def _load(spec: str) -> RegionalProblem:
    path = Path(spec)
    if not path.exists() and (BUNDLED / f"{spec}.json").exists():
        path = BUNDLED / f"{spec}.json"
    return load_problem(path)


def load_report(out: Path) -> tuple[dict, RegionalProblem, Discretization]:
    doc = json.loads((out / REPORT).read_text())
    prob = problem_from_dict(doc["problem"])
    c = doc["config"]
    disc = Discretization(nodes=c["nodes"], substeps=c["substeps"], seed=c["seed"], n_starts=c["n_starts"],
                          ctol=c["ctol"], max_outer=c["max_outer"])
    return doc, prob, disc


def stored_solution(doc: dict, prob: RegionalProblem, disc: Discretization, word: str | None = None) -> StructureSolution:
    word = word or doc["best"]
    entry = next(s for s in doc["structures"] if s["word"] == word)
    arcs = []
    for a in entry["arcs"]:
        m = prob.regions[RegionLabel.parse(a["label"])].m
        V = np.array(a["controls"], dtype=float).reshape(len(a["clocks"]), m)
        arcs.append((V, np.array(a["clocks"], dtype=float)))
    return solution_from_controls(prob, StructureWord.parse(word), arcs, disc)


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    try:
        prob = _load(args.problem)
    except (ProblemError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    disc = Discretization(nodes=args.nodes, seed=args.seed)
    out = Path(args.out)
    t = time.perf_counter()
    try:
        rs = solve_regional(prob, args.max_arcs, disc)
        sols = rs.all
    except AllStructuresInfeasible as exc:
        print(f"all structures infeasible: {exc}", file=sys.stderr)
        rs = None
        sols = getattr(exc, "solutions", [])
    wall = time.perf_counter() - t
    write_solve_outputs(out, prob, rs, sols, disc, args.max_arcs)
    dump_json(out / TIMING, {"solve_wall_time": wall, "backend": BACKEND})
    if rs is None:
        return EXIT_INFEASIBLE
    for s in sols:
        print(f"{str(s.word):<12} {s.status:<16} {s.cost:.9f}")
    print(f"best {rs.best.word}  U = {rs.U:.9f}")
    return EXIT_OK


def _conditions(conds) -> list:
    return [{"name": c.name, "value": c.value, "tol": c.tol, "passed": c.passed} for c in conds]


def verify_doc(rep: pmp.VerifyReport) -> dict:
    doc = {"passed": rep.passed, "error": rep.error}
    if rep.adjoint is not None:
        doc["adjoint"] = {
            "p0": rep.adjoint.p0,
            "terminal": rep.adjoint.terminal,
            "lsq_residual": rep.adjoint.lsq_residual,
            "abnormal": rep.adjoint.abnormal,
        }
    doc["arcs"] = [
        {"index": a.index, "label": a.label, "H_mean": a.H_mean, "H_deviation": a.H_deviation,
         "max_gap": a.max_gap, "tangency": a.tangency, "conditions": _conditions(a.conditions)}
        for a in rep.arcs
    ]
    doc["junctions"] = [
        {"index": j.index, "kind": j.kind, "name": j.name, "time": j.time, "point": j.point,
         "H_left": j.H_left, "H_right": j.H_right, "H_gap": j.H_gap, "nu": j.nu, "nu_direct": j.nu_direct,
         "jump": j.jump, "jump_norm": j.jump_norm, "tangential_residual": j.tangential_residual,
         "snell_ratio": j.snell_ratio, "passed": j.passed, "conditions": _conditions(j.conditions)}
        for j in rep.junctions
    ]
    s = rep.sensitivity
    if s is not None:
        doc["sensitivity"] = {
            "fd_step": s.fd_step, "grad_x0": s.grad_x0, "grad_xf": s.grad_xf, "P_t0": s.P_t0, "P_tf": s.P_tf,
            "x0_residual": s.x0_residual, "xf_residual": s.xf_residual, "translation_sum": s.translation_sum,
            "dU_dt0": s.dU_dt0, "dU_dtf": s.dU_dtf, "passed": s.passed, "conditions": _conditions(s.conditions),
        }
    return doc


def cmd_verify(args) -> int:
    out = Path(args.report)
    try:
        doc, prob, disc = load_report(out)
    except (OSError, KeyError, ValueError, ProblemError) as exc:
        print(f"error: cannot read report in {out}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if doc.get("best") is None:
        print("error: the report has no feasible structure", file=sys.stderr)
        return EXIT_INFEASIBLE
    sol = stored_solution(doc, prob, disc)
    rep = pmp.verify(prob, sol, sensitivity=not args.no_sensitivity)
    vdoc = verify_doc(rep)
    doc["verify"] = vdoc
    dump_json(out / REPORT, doc)
    if rep.error:
        print(rep.error)
    for j in rep.junctions:
        extra = f" snell={j.snell_ratio:.6f}" if j.snell_ratio is not None else ""
        print(f"junction {j.name}: |dH|={abs(j.H_gap):.2e} nu={j.nu:.6f}{extra} {'PASS' if j.passed else 'FAIL'}")
    if rep.sensitivity is not None:
        print(f"sensitivity: x0 residual {rep.sensitivity.x0_residual:.2e} {'PASS' if rep.sensitivity.passed else 'FAIL'}")
    print("verify", "PASS" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_VERIFY


def _domain(text: str | None, prob: RegionalProblem) -> tuple:
    if text:
        vals = [float(v) for v in text.split(",")]
        if len(vals) != 4:
            raise ValueError("--domain needs x1min,x1max,x2min,x2max")
        return tuple(vals)
    lo = np.floor(np.minimum(prob.x0, prob.xf) - 1.0)
    hi = np.ceil(np.maximum(prob.x0, prob.xf) + 1.0)
    return (lo[0], hi[0], lo[1], hi[1])


def cmd_hjb(args) -> int:
    try:
        prob = _load(args.problem)
    except (ProblemError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if prob.n_state != 2:
        print(f"error: the grid solver needs a 2-D state, got state_dim = {prob.n_state}", file=sys.stderr)
        return EXIT_PARSE
    if prob.mode != "min_time":
        print("error: the grid solver handles minimum-time problems only", file=sys.stderr)
        return EXIT_PARSE
    try:
        dom = _domain(args.domain, prob)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        gvf = hjb.solve_grid(prob, dom, args.h, args.radius)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HJB
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    out = Path(args.out) if args.out else (Path(args.compare) if args.compare else Path("."))
    out.mkdir(parents=True, exist_ok=True)
    gvf.to_csv(out / f"value_h{args.h:g}.csv")
    print(f"u(x0) = {gvf(prob.x0):.9f} after {gvf.sweeps} sweeps")
    if not args.compare:
        return EXIT_OK
    cdir = Path(args.compare)
    doc, rprob, disc = load_report(cdir)
    if doc.get("best") is None:
        print("error: the report has no feasible structure", file=sys.stderr)
        return EXIT_INFEASIBLE
    sol = stored_solution(doc, rprob, disc)
    rs = RegionalSolution(sol, [sol], float(doc["U"]))
    cmp = hjb.compare(gvf, rs, prob, args.radius)
    print(cmp.line())
    doc["hjb"] = {"h": args.h, "domain": list(dom), "radius": args.radius, "sweeps": gvf.sweeps,
                  "grid_value": cmp.grid_value, "U": cmp.U, "correction": cmp.correction,
                  "discrepancy": cmp.discrepancy, "passed": cmp.passed}
    dump_json(cdir / REPORT, doc)
    return EXIT_OK if cmp.passed else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regional-oc", description="Regional optimal control toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("solve", help="solve every structure and write report.json")
    s.add_argument("problem", help="problem file, or the name of a bundled problem")
    s.add_argument("--max-arcs", type=int, default=DEFAULT_MAX_ARCS)
    s.add_argument("--nodes", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="out")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="check the necessary conditions on a solved report")
    v.add_argument("report", help="directory written by 'solve'")
    v.add_argument("--no-sensitivity", action="store_true", help="skip the finite-difference re-solves")
    v.set_defaults(func=cmd_verify)

    h = sub.add_parser("hjb", help="grid value function (2-D minimum time)")
    h.add_argument("problem")
    h.add_argument("--h", type=float, default=0.02)
    h.add_argument("--domain", default=None)
    h.add_argument("--radius", type=float, default=0.05)
    h.add_argument("--compare", default=None, help="report directory to compare against")
    h.add_argument("--out", default=None)
    h.set_defaults(func=cmd_hjb)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
