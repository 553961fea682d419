"""Command-line front end: ``wpstab bohm solve|table``, ``stability``, ``verify``, ``limit-tables``.

Exit codes: 0 success, 1 solve or verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from wpstab import io
from wpstab.bohm import BohmParams, certify, cone_convergence_report, find_branches, solve_bohm
from wpstab.errors import NotFoundError, WpstabError
from wpstab.geometry import FibreDescriptor
from wpstab.grid import MIN_POINTS
from wpstab.perturbations import (
    ballooning,
    fibre_tt,
    ghp_variation,
    phi1,
    phi2,
    phi3,
    ricci_variation,
    tracefree_correct,
)
from wpstab.stability import (
    REPORT_COLUMNS,
    Verdict,
    cone_quadratic_form,
    laplacian_coefficient,
    limiting_integral_I,
    rayleigh,
    sin_power_integral,
    theorem1_coefficient,
)

PERTURBATIONS = ("ghp", "ricci", "phi1", "phi2", "phi3", "ballooning", "fibre-tt")
CONE_PERTURBATIONS = ("phi1", "phi2", "phi3", "ballooning")
DEFAULT_OUT = "wpstab_out"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {v}")
    return v


def _dim(text):
    v = _nonneg_int(text)
    if v < 2:
        raise argparse.ArgumentTypeError("p and q must be at least 2")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _grid(text):
    v = _nonneg_int(text)
    if v < MIN_POINTS:
        raise argparse.ArgumentTypeError(f"grid needs at least {MIN_POINTS} points")
    return v


def _factors(text):
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated dimensions, got {text!r}")
    if len(dims) != 2 or min(dims) < 2:
        raise argparse.ArgumentTypeError("need two factor dimensions, each at least 2")
    return dims


# --------------------------------------------------------------------------- output helpers


def out_dir(args) -> Path:
    """``--out`` wins, then ``WPSTAB_OUT``, then ``./wpstab_out``."""
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get("WPSTAB_OUT") or DEFAULT_OUT)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    if hasattr(x, "value"):
        return str(x.value)
    return "" if x is None else str(x)


def emit(rows: list[dict], header: list[str], stream=None):
    """Comma-delimited table on stdout; the same rows go to the output files."""
    stream = stream or sys.stdout
    print(",".join(header), file=stream)
    for r in rows:
        print(",".join(_fmt(r.get(k)) for k in header), file=stream)


def _write_table(path_stem: Path, rows, header, fmt) -> Path:
    if fmt == "json":
        return io.write_json(path_stem.with_suffix(".json"), {"columns": header, "rows": rows})
    return io.write_rows(path_stem.with_suffix(".csv"), rows, header)


# --------------------------------------------------------------------------- bohm


SOLVE_COLUMNS = ["p", "q", "alpha", "topology", "b0", "T", "boundary_mismatch", "einstein_residual_max",
                 "constraint_drift_max", "file"]


def _params(args, alpha=None) -> BohmParams:
    return BohmParams(args.p, args.q, args.alpha if alpha is None else alpha, n_points=args.grid, tol=args.tol)


def cmd_bohm_solve(args) -> int:
    try:
        sol = solve_bohm(_params(args))
    except NotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("b0,event,value", file=sys.stderr)
        for b0, event, value in exc.scan_report:
            print(f"{b0!r},{event},{value!r}", file=sys.stderr)
        return EXIT_FAIL
    out = out_dir(args)
    name = io.solution_filename(args.p, args.q, args.alpha, "json" if args.format == "json" else "csv")
    path = out / name
    if args.format == "json":
        io.save_solution(sol, path)
    else:
        io.save_solution_csv(sol, path)
    d = sol.diagnostics
    row = {"p": sol.p, "q": sol.q, "alpha": args.alpha, "topology": sol.topology.value, "b0": sol.b0, "T": sol.T,
           "boundary_mismatch": d.get("boundary_mismatch"), "einstein_residual_max": d.get("einstein_residual_max"),
           "constraint_drift_max": d.get("constraint_drift_max"), "file": str(path)}
    emit([row], SOLVE_COLUMNS)
    if args.plot:
        from wpstab.plotting import plot_solution

        plot_solution(sol, path.with_suffix(".png"))
    return EXIT_OK


TABLE_COLUMNS = ["alpha", "topology", "b0", "T", "boundary_mismatch", "einstein_residual_max",
                 "constraint_drift_max", "cone_deviation"]


def cmd_bohm_table(args) -> int:
    params = _params(args, alpha=0)
    cat = find_branches(params)
    n = len(cat.roots) if args.alpha_max is None else min(len(cat.roots), args.alpha_max + 1)
    rows, sols = [], []
    for alpha in range(n):
        try:
            sol = solve_bohm(_params(args, alpha))
        except NotFoundError as exc:
            print(f"warning: alpha={alpha}: {exc}", file=sys.stderr)
            continue
        sols.append(sol)
        d = {**sol.diagnostics, **certify(sol)}
        rows.append({"alpha": alpha, "topology": sol.topology.value, "b0": sol.b0, "T": sol.T,
                     "boundary_mismatch": d.get("boundary_mismatch"),
                     "einstein_residual_max": d["einstein_residual_max"],
                     "constraint_drift_max": d["constraint_drift_max"]})
    for row, cone in zip(rows, cone_convergence_report(sols)):
        row["cone_deviation"] = cone["deviation"]
    emit(rows, TABLE_COLUMNS)
    _write_table(out_dir(args) / f"bohm_table_p{args.p}_q{args.q}", rows, TABLE_COLUMNS, args.format)
    if not rows:
        return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------- stability


def build_perturbation(name: str, sol, wp):
    if name == "ghp":
        return ghp_variation(wp)
    if name == "ricci":
        return ricci_variation(wp)
    if name == "fibre-tt":
        return fibre_tt(wp)
    ctor = {"phi1": phi1, "phi2": phi2, "phi3": phi3, "ballooning": ballooning}[name]
    return ctor(sol).to_perturbation()


def _report_row(args, rep) -> dict:
    d = rep.to_dict() if hasattr(rep, "to_dict") else dict(rep)
    d.update({"p": args.p, "q": args.q, "alpha": "cone" if args.cone else args.alpha})
    return d


def _cone_report(p: int, q: int, name: str) -> dict:
    """Cone-limit form; the cone is singular, so no verdict can be issued."""
    Q = cone_quadratic_form(p, q, name)
    n = p + q + 1
    lam = float(p + q)
    return {"perturbation": name, "Q": Q, "norm_sq": None, "rayleigh": None, "threshold_rf": -2.0 * lam,
            "threshold_bh": -(9 - n) * lam / 4.0, "verdict_rf": Verdict.INCONCLUSIVE.value,
            "verdict_bh": Verdict.INCONCLUSIVE.value, "gap_pct": None,
            "note": "double-cone limit: singular background, quadratic form only"}


def cmd_stability(args) -> int:
    names = args.perturbation
    out = out_dir(args)
    tag = f"p{args.p}_q{args.q}_" + ("cone" if args.cone else f"a{args.alpha}")
    rows, failed = [], False
    if args.cone:
        bad = [n for n in names if n not in CONE_PERTURBATIONS]
        if bad:
            print(f"usage error: cone limit supports {', '.join(CONE_PERTURBATIONS)}; got {', '.join(bad)}",
                  file=sys.stderr)
            return EXIT_USAGE
        for name in names:
            rep = _cone_report(args.p, args.q, name)
            io.write_json(out / f"stability_{tag}_{name}.json", rep)
            rows.append(_report_row(args, rep))
    else:
        if "fibre-tt" in names and args.fibre_factors is None:
            print("usage error: fibre-tt needs --fibre-factors d1,d2 (an Einstein product fibre)", file=sys.stderr)
            return EXIT_USAGE
        try:
            sol = solve_bohm(_params(args))
        except NotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
        wp = sol.warped_product()
        for name in names:
            try:
                w = wp
                if name == "fibre-tt":
                    dims = args.fibre_factors
                    if sum(dims) != args.q:
                        raise WpstabError(f"fibre factors {dims} do not add up to q = {args.q}")
                    w = sol.warped_product(FibreDescriptor.einstein_product(dims, float(args.q - 1)))
                # singular inputs are caught by the integrability checks, not by numpy warnings
                with np.errstate(all="ignore"):
                    h = build_perturbation(name, sol, w)
                    if args.tracefree and name != "fibre-tt":
                        h = tracefree_correct(w, h)
                    rep = rayleigh(w, h)
            except WpstabError as exc:
                hint = " (the ballooning tensor is singular at the poles; try --cone)" if name == "ballooning" else ""
                print(f"error: {name}: {exc}{hint}", file=sys.stderr)
                failed = True
                continue
            io.write_json(out / f"stability_{tag}_{name}.json", _report_row(args, rep))
            rows.append(_report_row(args, rep))
            if args.plot:
                from wpstab.plotting import plot_perturbation

                plot_perturbation(sol.t, h, out / f"stability_{tag}_{name}.png", f"{name} on Böhm {tag}")
    emit(rows, REPORT_COLUMNS)
    _write_table(out / f"stability_{tag}", rows, REPORT_COLUMNS, args.format)
    return EXIT_FAIL if failed else EXIT_OK


# --------------------------------------------------------------------------- verify


VERIFY_COLUMNS = ["status", "kind", "name", "value", "gate", "detail"]


def cmd_verify(args) -> int:
    from wpstab.verify import run_suite, summary

    try:
        checks = run_suite(args.p, args.q, grid=args.grid_override, full=args.full, solution=args.solution)
    except WpstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    s = summary(checks)
    emit(s["checks"], VERIFY_COLUMNS)
    io.write_json(out_dir(args) / "verify_summary.json", s)
    print(json.dumps({"ok": s["ok"], **s["counts"]}, sort_keys=True), file=sys.stderr)
    return EXIT_OK if s["ok"] else EXIT_FAIL


# --------------------------------------------------------------------------- limit tables


COEFF_COLUMNS = ["n", "m", "coefficient", "coefficient_value", "C_mn", "C_mn_value"]
LIMIT_COLUMNS = ["p", "q", "I_quadrature", "I_closed_form", "prefactor", "abs_gap"]
WALLIS_COLUMNS = ["n", "coefficient", "unit", "value"]


def limit_tables(max_total: int):
    """Rows for every admissible ``p, q >= 2`` (``n = p + 1``, ``m = q``) with ``p + q + 1 <= max_total``."""
    coeff, limit = [], []
    for p in range(2, max_total):
        for q in range(2, max_total - p):
            n, m = p + 1, q
            c, C = theorem1_coefficient(n, m), laplacian_coefficient(m, n)
            coeff.append({"n": n, "m": m, "coefficient": str(c), "coefficient_value": float(c),
                          "C_mn": str(C), "C_mn_value": float(C)})
            li = limiting_integral_I(p, q)
            limit.append({"p": p, "q": q, "I_quadrature": li.quadrature, "I_closed_form": li.closed_form,
                          "prefactor": li.prefactor, "abs_gap": abs(li.quadrature - li.closed_form)})
    wallis = []
    top = max_total - 4 if limit else -1
    for k in range(0, top + 1):
        w = sin_power_integral(k)
        wallis.append({"n": k, "coefficient": str(w.coefficient), "unit": w.unit, "value": w.value})
    return coeff, limit, wallis


def cmd_limit_tables(args) -> int:
    coeff, limit, wallis = limit_tables(args.max_total)
    out = out_dir(args)
    for stem, rows, cols in (("theorem1_coefficients", coeff, COEFF_COLUMNS), ("limiting_integral", limit, LIMIT_COLUMNS),
                             ("wallis", wallis, WALLIS_COLUMNS)):
        print(f"# {stem}")
        emit(rows, cols)
        _write_table(out / stem, rows, cols, args.format)
    if args.plot and limit:
        from wpstab.plotting import plot_limit_table

        plot_limit_table(limit, out / "limiting_integral.png")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help=f"output directory (default: $WPSTAB_OUT or ./{DEFAULT_OUT})")
    common.add_argument("--format", choices=("json", "csv"), default="csv", help="file format for tables")
    common.add_argument("--plot", action="store_true", help="also render PNG figures next to the data files")

    pq = argparse.ArgumentParser(add_help=False)
    pq.add_argument("--p", type=_dim, default=2, help="dimension of the first sphere factor")
    pq.add_argument("--q", type=_dim, default=2, help="dimension of the second sphere factor")

    solve = argparse.ArgumentParser(add_help=False)
    solve.add_argument("--alpha", type=_nonneg_int, default=0, help="branch index")
    solve.add_argument("--grid", type=_grid, default=4001, help="number of grid points")
    solve.add_argument("--tol", type=_positive_float, default=1e-10, help="solver tolerance")

    parser = argparse.ArgumentParser(prog="wpstab", description="Warped-product Einstein metrics and their stability")
    sub = parser.add_subparsers(dest="command", required=True)

    bohm = sub.add_parser("bohm", help="Böhm metric solves")
    bsub = bohm.add_subparsers(dest="bohm_command", required=True)
    p = bsub.add_parser("solve", parents=[common, pq, solve], help="solve one branch and write it out")
    p.set_defaults(func=cmd_bohm_solve)
    p = bsub.add_parser("table", parents=[common, pq, solve], help="tabulate the branches found by the scan")
    p.add_argument("--alpha-max", type=_nonneg_int, default=None, help="last branch index to solve")
    p.set_defaults(func=cmd_bohm_table)

    p = sub.add_parser("stability", parents=[common, pq, solve], help="Rayleigh quotients and verdicts")
    p.add_argument("--perturbation", nargs="+", choices=PERTURBATIONS, default=["ghp"], metavar="NAME",
                   help=f"one or more of: {', '.join(PERTURBATIONS)}")
    p.add_argument("--cone", action="store_true", help="evaluate the double-cone limit forms instead")
    p.add_argument("--tracefree", action="store_true", help="apply the trace-free correction first")
    p.add_argument("--fibre-factors", type=_factors, default=None, metavar="D1,D2",
                   help="split the fibre as an Einstein product (needed for fibre-tt)")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("verify", parents=[common, pq], help="run the self-check suite")
    p.add_argument("--grid", dest="grid_override", type=_grid, default=None, help="grid size for the checks")
    p.add_argument("--full", action="store_true", help="include numerical Böhm solves")
    p.add_argument("--solution", default=None, help="also check the integrity of a stored solution file")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("limit-tables", parents=[common], help="closed-form coefficient and integral tables")
    p.add_argument("--max-total", type=_nonneg_int, default=9, help="largest p+q+1 included")
    p.set_defaults(func=cmd_limit_tables)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WpstabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
