"""Condition registry, per-run summaries and the condition x problem x seed matrix."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

from ..benchmarks import SIGMA_YIELD_REFERENCE, builtin_problem
from ..controller.actions import ACTION_KINDS
from ..controller.llm import LLMStrategy
from ..controller.loop import LoopConfig, RunTrace, run_outer_loop
from ..controller.strategies import ExactHotspotStrategy, RandomRegionStrategy, RuleBasedStrategy
from ..evaluator import GATE_NAMES

logger = logging.getLogger(__name__)

CONDITIONS = {
    "soft_llm": {"strategy": "llm", "input_mode": "both", "passive": False},
    "passive_llm": {"strategy": "llm", "input_mode": "both", "passive": True},
    "rule": {"strategy": "rule", "passive": False},
    "exact_hotspot": {"strategy": "exact_hotspot", "passive": False},
    "random": {"strategy": "random", "passive": False},
    "density_only": {"strategy": "llm", "input_mode": "density_only", "passive": False},
    "stress_only": {"strategy": "llm", "input_mode": "stress_only", "passive": False},
    "numeric_only": {"strategy": "llm", "input_mode": "numeric_only", "passive": False},
    "global_only": {"strategy": "llm", "input_mode": "global_only", "passive": False},
}
DETERMINISTIC_CONDITIONS = ("rule", "exact_hotspot", "random")
FIXED_VOLUME_KINDS = tuple(k for k in ACTION_KINDS if k != "change_volume_fraction")

COMPLETED = "completed"
MISSING = "missing_execution"


def make_strategy(condition: str, client=None, allowed_kinds=None):
    try:
        cfg = CONDITIONS[condition]
    except KeyError:
        raise ValueError(f"unknown condition {condition!r}; expected one of {sorted(CONDITIONS)}") from None
    kind = cfg["strategy"]
    if kind == "rule":
        return RuleBasedStrategy()
    if kind == "exact_hotspot":
        return ExactHotspotStrategy()
    if kind == "random":
        return RandomRegionStrategy()
    return LLMStrategy(client, cfg["input_mode"], allowed_kinds)


@dataclass
class RunSummary:
    problem_id: int
    condition: str
    seed: int
    status: str = COMPLETED
    c_rep: float | None = None
    c_final: float | None = None
    c_feas: float | None = None
    c_final_feas: float | None = None
    gates: dict = field(default_factory=dict)
    all_gates_pass: bool = False
    initial_vf: float | None = None
    final_vf: float | None = None
    n_steps: int = 0
    stop_reason: str | None = None
    error: str | None = None

    @property
    def slot(self) -> tuple:
        return (self.condition, self.problem_id, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunSummary":
        return cls(**d)


def _num(v):
    return None if v is None or not math.isfinite(v) else float(v)


def summarize(trace: RunTrace, condition: str | None = None) -> RunSummary:
    """Reduce a trace to its scalar endpoints.

    ``c_feas`` is the lowest compliance over retained-eligible steps that pass
    every gate; ``c_final_feas`` is the final compliance when the last solved
    state passes every gate.
    """
    s = RunSummary(trace.problem_id, condition or trace.condition, trace.seed,
                   stop_reason=trace.stop_reason, n_steps=len(trace.steps))
    solved = [st for st in trace.steps if not st.solver_failed and st.evaluation is not None]
    if trace.steps:
        s.initial_vf = trace.steps[0].spec["vf"]
    if not solved:
        s.status = MISSING
        s.error = "no solved state"
        return s
    last = solved[-1]
    s.c_rep = _num(trace.c_rep)
    s.c_final = _num(last.c_final)
    feas = [st.c_final for st in solved if st.eligible and st.evaluation["all_gates_pass"]]
    s.c_feas = min(feas) if feas else None
    s.gates = {g: bool(last.evaluation["gates"][g]["passed"]) for g in GATE_NAMES}
    s.all_gates_pass = bool(last.evaluation["all_gates_pass"])
    s.c_final_feas = s.c_final if s.all_gates_pass else None
    s.final_vf = last.spec["vf"]
    return s


@dataclass
class MatrixResult:
    summaries: list[RunSummary]
    traces: list[RunTrace]

    def accounting(self) -> dict:
        """Per condition: attempted, completed and missing slot counts."""
        out = {}
        for s in self.summaries:
            row = out.setdefault(s.condition, {"attempted": 0, COMPLETED: 0, MISSING: 0})
            row["attempted"] += 1
            row[s.status] += 1
        return out


def _run_slot(args):
    condition, spec, seed, config_kw, client = args
    cfg = dict(CONDITIONS[condition])
    config = LoopConfig(seed=seed, passive=cfg["passive"], **config_kw)
    run_id = f"{condition}_p{spec.id}_s{seed}"
    try:
        strategy = make_strategy(condition, client, config.allowed_kinds)
        trace = run_outer_loop(spec, strategy, config, condition=condition, run_id=run_id)
    except Exception as exc:  # one slot must not take down the matrix
        logger.exception("slot %s failed", run_id)
        s = RunSummary(spec.id, condition, seed, status=MISSING, initial_vf=spec.vf,
                       error=f"{type(exc).__name__}: {exc}")
        return s, None
    return summarize(trace, condition), trace


def run_matrix(conditions, problem_ids, seeds, fixed_volume: bool = False,
               sigma_yield: float = SIGMA_YIELD_REFERENCE, T_max: int = 5, client=None,
               solver_params=None, workers: int = 1, problems=None) -> MatrixResult:
    """Run every (condition, problem, seed) slot.

    ``fixed_volume`` removes volume-fraction actions from every strategy.
    ``problems`` may map ids to custom specs; otherwise built-ins are used.
    Results are sorted by slot key, so the outcome does not depend on
    worker completion order.
    """
    for c in conditions:
        if c not in CONDITIONS:
            raise ValueError(f"unknown condition {c!r}")
    config_kw = {
        "T_max": T_max,
        "sigma_yield": sigma_yield,
        "allowed_kinds": FIXED_VOLUME_KINDS if fixed_volume else None,
        "solver_params": dict(solver_params or {}),
    }
    problems = problems or {}
    jobs = []
    for c in conditions:
        for pid in problem_ids:
            spec = problems[pid] if pid in problems else builtin_problem(pid)
            for seed in seeds:
                jobs.append((c, spec, int(seed), config_kw, client))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_slot, jobs))
    else:
        results = [_run_slot(j) for j in jobs]
    results.sort(key=lambda r: r[0].slot)
    return MatrixResult([r[0] for r in results], [r[1] for r in results if r[1] is not None])
