"""Persistence: trace JSON, matrix CSV and figure-data CSVs."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .metrics import TOP_FRACTIONS, localization_metrics, per_problem_means
from .runner import RunSummary

MATRIX_COLUMNS = (
    "condition", "problem_id", "seed", "status", "c_rep", "c_final", "c_feas", "c_final_feas",
    "all_gates_pass", "initial_vf", "final_vf", "n_steps", "stop_reason", "error",
)
RATIO_COLUMNS = ("problem_id", "condition", "baseline", "c_condition", "c_baseline", "ratio")
LOCALIZATION_COLUMNS = ("run_id", "condition", "problem_id", "seed", "step", "distance",
                        *(f"overlap_{k}" for k in TOP_FRACTIONS), "seed_elements", "stress_change_pct")
SENSITIVITY_COLUMNS = ("q", "sigma_yield", "n_pass", "n_total")


class ExportError(OSError):
    pass


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row.get(c)) for c in columns])
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path


def write_matrix_csv(path, summaries) -> Path:
    return write_csv(path, MATRIX_COLUMNS, [s.to_dict() for s in summaries])


def read_matrix_csv(path) -> list[RunSummary]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            def num(k, cast=float):
                return cast(row[k]) if row[k] != "" else None
            out.append(RunSummary(
                problem_id=int(row["problem_id"]), condition=row["condition"], seed=int(row["seed"]),
                status=row["status"], c_rep=num("c_rep"), c_final=num("c_final"),
                c_feas=num("c_feas"), c_final_feas=num("c_final_feas"),
                all_gates_pass=row["all_gates_pass"] == "true", initial_vf=num("initial_vf"),
                final_vf=num("final_vf"), n_steps=int(row["n_steps"]),
                stop_reason=row["stop_reason"] or None, error=row["error"] or None,
            ))
    return out


def write_traces(directory, traces) -> list[Path]:
    paths = []
    for t in traces:
        try:
            paths.append(t.save(directory))
        except OSError as exc:
            raise ExportError(f"cannot write trace {t.run_id} to {directory}: {exc}") from exc
    return paths


def ratio_rows(summaries, condition: str, baseline: str, attr: str = "c_rep") -> list[dict]:
    """Per-problem seed-mean compliance ratios (complete pairs only)."""
    cond, _ = per_problem_means(summaries, condition, attr)
    base, _ = per_problem_means(summaries, baseline, attr)
    return [{"problem_id": p, "condition": condition, "baseline": baseline, "c_condition": cond[p],
             "c_baseline": base[p], "ratio": cond[p] / base[p]}
            for p in sorted(set(cond) & set(base))]


def localization_rows(traces) -> list[dict]:
    rows = []
    for t in traces:
        for r in localization_metrics(t):
            row = {"run_id": t.run_id, "condition": t.condition, "problem_id": t.problem_id,
                   "seed": t.seed, "step": r.step, "distance": r.distance,
                   "seed_elements": r.seed_elements, "stress_change_pct": r.stress_change_pct}
            row.update({f"overlap_{k}": v for k, v in r.overlap.items()})
            rows.append(row)
    return rows


def export_run(directory, traces, summaries, baseline: str = "rule") -> dict:
    """Write traces, the matrix CSV and figure-data CSVs under ``directory``."""
    directory = Path(directory)
    out = {"traces": write_traces(directory / "traces", traces),
           "matrix": write_matrix_csv(directory / "matrix.csv", summaries)}
    conditions = sorted({s.condition for s in summaries} - {baseline})
    rows = [r for c in conditions for r in ratio_rows(summaries, c, baseline)]
    out["ratios"] = write_csv(directory / "figures" / "compliance_ratios.csv", RATIO_COLUMNS, rows)
    out["localization"] = write_csv(directory / "figures" / "localization.csv",
                                    LOCALIZATION_COLUMNS, localization_rows(traces))
    return out


def write_sensitivity_csv(path, rows) -> Path:
    return write_csv(path, SENSITIVITY_COLUMNS, rows)


def write_json(path, obj) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path
