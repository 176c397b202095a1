"""Command-line entry point: ``stressgate <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .benchmarks import (
    PROBLEM_IDS_2D, SENSITIVITY_PERCENTILES, SIGMA_YIELD_REFERENCE, builtin_problem,
    calibrate_sigma_yield, calibration_maxima, parse_problem_ids,
)
from .evaluator import SolverStats, evaluate
from .harness import export as hexport
from .harness.metrics import ENDPOINTS, per_problem_means, feasibility_score, sensitivity_table
from .harness.runner import CONDITIONS, run_matrix
from .harness.stats import wilcoxon_signed_rank
from .controller.loop import RunTrace
from .problem import ProblemSpec
from .render import render_field_png
from .simp import SimpOptimizer
from .stress import stress_pass


def _load_spec(arg: str) -> ProblemSpec:
    if arg.isdigit():
        return builtin_problem(int(arg))
    return ProblemSpec.load(arg)


def _seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _solver_params(args) -> dict:
    params = {}
    if args.max_iter is not None:
        params["max_iter"] = args.max_iter
    if args.tail is not None:
        params["tail_iterations"] = args.tail
    return params


def cmd_solve(args) -> int:
    spec = _load_spec(args.spec)
    if args.vf is not None:
        spec = spec.copy(vf=args.vf)
    opt = SimpOptimizer(solver=args.solver, **_solver_params(args)).fit(spec)
    stress = stress_pass(spec.mesh, spec.boundary_conditions(), opt.density_, solver=args.solver)
    ev = evaluate(opt.density_, stress, spec, args.sigma_yield,
                  SolverStats(opt.compliance_, opt.compliance_, opt.n_iter_, opt.n_max_))
    out = {"problem": spec.name or args.spec, "compliance": opt.compliance_, "n_iter": opt.n_iter_,
           "max_stress": stress.solid_max(opt.density_), "evaluation": ev.to_dict()}
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "density.png").write_bytes(render_field_png("density", spec.mesh, opt.density_))
        (d / "stress.png").write_bytes(render_field_png("stress", spec.mesh, opt.density_, stress))
        hexport.write_json(d / "result.json", out)
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0 if ev.all_gates_pass else 1


def cmd_run(args) -> int:
    params = _solver_params(args)
    problems = {}
    for path in args.spec or []:
        spec = ProblemSpec.load(path)
        if spec.id is None:
            raise SystemExit(f"spec {path} needs an integer 'id'")
        problems[spec.id] = spec
    ids = sorted(problems) if problems else parse_problem_ids(args.problems)
    sigma = args.sigma_yield
    if args.calibrate is not None:
        sigma = calibrate_sigma_yield(PROBLEM_IDS_2D, args.calibrate, **params)
        logging.info("calibrated sigma_yield = %.6g at q=%s", sigma, args.calibrate)
    result = run_matrix(args.condition, ids, _seeds(args.seeds), fixed_volume=args.fixed_volume,
                        sigma_yield=sigma, T_max=args.t_max, workers=args.workers,
                        solver_params=params, problems=problems)
    paths = hexport.export_run(args.out, result.traces, result.summaries, baseline=args.baseline)
    print(json.dumps({"sigma_yield": sigma, "accounting": result.accounting(),
                      "matrix": str(paths["matrix"])}, indent=2, sort_keys=True))
    return 0


def cmd_calibrate(args) -> int:
    ids = parse_problem_ids(args.problems)
    maxima = calibration_maxima(ids, **_solver_params(args))
    out = {"q": args.q, "sigma_yield": calibrate_sigma_yield(ids, args.q, maxima=maxima),
           "maxima": {str(k): v for k, v in maxima.items()}}
    if args.sweep:
        rows = sensitivity_table(maxima, SENSITIVITY_PERCENTILES)
        out["sweep"] = rows
        if args.out:
            hexport.write_sensitivity_csv(Path(args.out) / "sensitivity.csv", rows)
    if args.out:
        hexport.write_json(Path(args.out) / "calibration.json", out)
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_score(args) -> int:
    summaries = hexport.read_matrix_csv(args.matrix)
    endpoints = [e.strip() for e in args.endpoints.split(",")]
    conditions = sorted({s.condition for s in summaries} - {args.baseline})
    out = {c: {ep: r.to_dict() for ep, r in feasibility_score(summaries, c, args.baseline, endpoints).items()}
           for c in conditions}
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_stats(args) -> int:
    if not args.wilcoxon:
        print("nothing to do: pass --wilcoxon", file=sys.stderr)
        return 2
    summaries = hexport.read_matrix_csv(args.matrix)
    attr = ENDPOINTS[args.endpoint]
    a, _ = per_problem_means(summaries, args.condition, attr)
    b, _ = per_problem_means(summaries, args.baseline, attr)
    common = sorted(set(a) & set(b))
    if not common:
        print("no complete pairs", file=sys.stderr)
        return 1
    # positive difference = baseline compliance higher (condition better)
    res = wilcoxon_signed_rank([b[p] for p in common], [a[p] for p in common])
    print(json.dumps({"n_pairs": len(common), "n_nonzero": res.n, "W": res.w,
                      "p_two_sided": res.p_two_sided, "p_one_sided": res.p_one_sided,
                      "method": res.method}, indent=2, sort_keys=True))
    return 0


def cmd_export_figures(args) -> int:
    run_dir = Path(args.run_dir)
    summaries = hexport.read_matrix_csv(run_dir / "matrix.csv")
    traces = [RunTrace.load(p) for p in sorted((run_dir / "traces").glob("*.json"))]
    fig = run_dir / "figures"
    conditions = sorted({s.condition for s in summaries} - {args.baseline})
    rows = [r for c in conditions for r in hexport.ratio_rows(summaries, c, args.baseline)]
    hexport.write_csv(fig / "compliance_ratios.csv", hexport.RATIO_COLUMNS, rows)
    hexport.write_csv(fig / "localization.csv", hexport.LOCALIZATION_COLUMNS,
                      hexport.localization_rows(traces))
    print(f"wrote {fig / 'compliance_ratios.csv'} and {fig / 'localization.csv'}")
    return 0


def _schedule_args(parser) -> None:
    parser.add_argument("--max-iter", type=int, help="main-loop iterations (default 120 in 2D, 80 in 3D)")
    parser.add_argument("--tail", type=int, help="tail iterations at terminal parameters (default 40)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stressgate", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="compliance solve, stress pass and gate evaluation")
    s.add_argument("spec", help="spec JSON path or built-in problem id")
    s.add_argument("--vf", type=float)
    s.add_argument("--sigma-yield", type=float, default=SIGMA_YIELD_REFERENCE)
    s.add_argument("--solver", default="direct", choices=("direct", "cg", "dense"))
    s.add_argument("--out")
    _schedule_args(s)
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("run", help="run a condition matrix")
    r.add_argument("--condition", action="append", required=True, choices=sorted(CONDITIONS))
    r.add_argument("--problems", default="1..22")
    r.add_argument("--spec", action="append", help="custom spec JSON (repeatable); replaces --problems")
    r.add_argument("--seeds", default="42,123,7")
    r.add_argument("--fixed-volume", action="store_true")
    g = r.add_mutually_exclusive_group()
    g.add_argument("--sigma-yield", type=float, default=SIGMA_YIELD_REFERENCE)
    g.add_argument("--calibrate", type=float, metavar="Q")
    r.add_argument("--t-max", type=int, default=5)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--baseline", default="rule")
    r.add_argument("--out", default="runs")
    _schedule_args(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("calibrate", help="percentile calibration of the stress threshold")
    c.add_argument("--q", type=float, default=50)
    c.add_argument("--problems", default="1..16")
    c.add_argument("--sweep", action="store_true", help="also tabulate pass counts over q")
    c.add_argument("--out")
    _schedule_args(c)
    c.set_defaults(func=cmd_calibrate)

    sc = sub.add_parser("score", help="feasibility-conditioned endpoints from a matrix CSV")
    sc.add_argument("--matrix", default="runs/matrix.csv")
    sc.add_argument("--baseline", default="rule")
    sc.add_argument("--endpoints", default="feas,final_feas,any")
    sc.set_defaults(func=cmd_score)

    st = sub.add_parser("stats", help="paired significance tests from a matrix CSV")
    st.add_argument("--wilcoxon", action="store_true")
    st.add_argument("--matrix", default="runs/matrix.csv")
    st.add_argument("--condition", default="soft_llm")
    st.add_argument("--baseline", default="rule")
    st.add_argument("--endpoint", default="any", choices=sorted(ENDPOINTS))
    st.set_defaults(func=cmd_stats)

    e = sub.add_parser("export-figures", help="rebuild figure-data CSVs from a run directory")
    e.add_argument("--run-dir", default="runs")
    e.add_argument("--baseline", default="rule")
    e.set_defaults(func=cmd_export_figures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
