"""Experiment matrix, endpoint scoring, localization metrics, statistics and export."""
from .export import export_run, read_matrix_csv, write_matrix_csv
from .metrics import (
    LocalizationRecord, feasibility_score, geometric_mean_ratio, localization_metrics,
    sensitivity_table, stress_gate_passes, top_stress_set,
)
from .runner import CONDITIONS, MatrixResult, RunSummary, make_strategy, run_matrix, summarize
from .stats import WilcoxonResult, wilcoxon_signed_rank

__all__ = [
    "CONDITIONS", "LocalizationRecord", "MatrixResult", "RunSummary", "WilcoxonResult",
    "export_run", "feasibility_score", "geometric_mean_ratio", "localization_metrics",
    "make_strategy", "read_matrix_csv", "run_matrix", "sensitivity_table", "stress_gate_passes",
    "summarize", "top_stress_set", "wilcoxon_signed_rank", "write_matrix_csv",
]
