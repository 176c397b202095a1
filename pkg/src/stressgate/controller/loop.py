"""Outer design loop: solve, stress pass, render, evaluate, interpret, modify.

A trace records every step's spec snapshot, compliances, evaluation,
proposals, rejections and the applied action. PNG renderings are kept in
``RunTrace.images`` (file name -> bytes) and referenced from the JSON by
relative path so trace files stay diffable. Per-step density and stress
arrays are saved to a ``<run_id>_fields.npz`` sidecar.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .._validation import check_fitted, check_spec
from ..benchmarks import SIGMA_YIELD_REFERENCE
from ..evaluator import GRAYNESS_MAX, EvaluationResult, SolverStats, evaluate, grayness
from ..fea import FEAError
from ..problem import ProblemSpec
from ..render import render_field_png
from ..simp import OCConvergenceError, SimpOptimizer
from ..stress import stress_pass
from .actions import ACTION_KINDS, Action, apply_action, resolve, validate_action
from .strategies import InterpreterContext, RuleBasedStrategy

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1
RATIO_STOP = 1.05
LOAD_PATH_STOP = 0.5

STOP_CONVERGED = "converged"
STOP_INTERPRETER = "interpreter_stop"
STOP_NO_ACTION = "no_admissible_action"
STOP_BUDGET = "budget_exhausted"
STOP_SOLVER_FAILURE = "solver_failure"
STOP_REASONS = (STOP_CONVERGED, STOP_INTERPRETER, STOP_NO_ACTION, STOP_BUDGET, STOP_SOLVER_FAILURE)


def retained_eligible(densities, compliance) -> bool:
    """Finite positive compliance and grayness within the gate limit."""
    try:
        c = float(compliance)
    except (TypeError, ValueError):
        return False
    if not (math.isfinite(c) and c > 0):
        return False
    rho = np.asarray(densities, dtype=float)
    if rho.size == 0 or not np.all(np.isfinite(rho)):
        return False
    return grayness(rho) <= GRAYNESS_MAX


@dataclass
class LoopConfig:
    """Outer-loop settings.

    ``passive`` turns every seed region an action adds into a frozen solid.
    ``allowed_kinds`` restricts the vocabulary (``None`` = all kinds).
    """

    T_max: int = 5
    sigma_yield: float = SIGMA_YIELD_REFERENCE
    seed: int = 42
    passive: bool = False
    allowed_kinds: tuple | None = None
    ratio_stop: float = RATIO_STOP
    load_path_stop: float = LOAD_PATH_STOP
    solver_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T_max < 1:
            raise ValueError("T_max must be at least 1")
        if self.allowed_kinds is not None:
            unknown = set(self.allowed_kinds) - set(ACTION_KINDS)
            if unknown:
                raise ValueError(f"unknown action kinds {sorted(unknown)}")
            self.allowed_kinds = tuple(k for k in ACTION_KINDS if k in self.allowed_kinds)


@dataclass
class StepRecord:
    step: int
    spec: dict
    c_final: float | None
    c_rep: float | None
    eligible: bool
    evaluation: dict | None
    proposals: list[dict] = field(default_factory=list)
    rejections: list[dict] = field(default_factory=list)
    applied: dict | None = None
    notes: list[str] = field(default_factory=list)
    solver_failed: bool = False
    n_iter: int = 0
    images: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["c_final"] = _finite(self.c_final)
        d["c_rep"] = _finite(self.c_rep)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(**d)


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class RunTrace:
    run_id: str
    seed: int
    condition: str
    problem_id: int | None
    sigma_yield: float
    steps: list[StepRecord] = field(default_factory=list)
    stop_reason: str | None = None
    retained_step: int | None = None
    images: dict = field(default_factory=dict, repr=False)
    fields: list = field(default_factory=list, repr=False)

    @property
    def c_rep(self) -> float:
        vals = [s.c_rep for s in self.steps if s.c_rep is not None]
        return vals[-1] if vals else float("nan")

    @property
    def c_final(self) -> float:
        for s in reversed(self.steps):
            if not s.solver_failed:
                return float("nan") if s.c_final is None else s.c_final
        return float("nan")

    @property
    def applied_actions(self) -> list[Action]:
        return [Action.from_dict(s.applied) for s in self.steps if s.applied is not None]

    def to_dict(self) -> dict:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "run_id": self.run_id,
            "seed": self.seed,
            "condition": self.condition,
            "problem_id": self.problem_id,
            "sigma_yield": self.sigma_yield,
            "stop_reason": self.stop_reason,
            "retained_step": self.retained_step,
            "steps": [s.to_dict() for s in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict, images=None) -> "RunTrace":
        if d.get("schema_version") != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema version {d.get('schema_version')}")
        return cls(d["run_id"], d["seed"], d["condition"], d["problem_id"], d["sigma_yield"],
                   [StepRecord.from_dict(s) for s in d["steps"]], d["stop_reason"],
                   d["retained_step"], dict(images or {}))

    def save(self, directory) -> Path:
        """Write ``<run_id>.json`` plus the referenced PNG files; returns the JSON path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, data in self.images.items():
            (directory / name).write_bytes(data)
        if self.fields:
            arrays = {}
            for t, f in enumerate(self.fields):
                if f is not None:
                    arrays[f"density_{t}"], arrays[f"sigma_{t}"] = f
            np.savez_compressed(directory / f"{self.run_id}_fields.npz", **arrays)
        path = directory / f"{self.run_id}.json"
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunTrace":
        path = Path(path)
        d = json.loads(path.read_text())
        images = {}
        for s in d["steps"]:
            for name in s.get("images", {}).values():
                p = path.parent / name
                if p.exists():
                    images[name] = p.read_bytes()
        trace = cls.from_dict(d, images)
        npz = path.parent / f"{trace.run_id}_fields.npz"
        if npz.exists():
            with np.load(npz) as z:
                trace.fields = [(z[f"density_{t}"], z[f"sigma_{t}"]) if f"density_{t}" in z else None
                                for t in range(len(trace.steps))]
        return trace


@dataclass
class _State:
    density: np.ndarray
    stress: object
    compliance: float
    n_iter: int
    n_max: int


def _solve(spec, config: LoopConfig) -> _State:
    opt = SimpOptimizer(**config.solver_params).fit(spec)
    if opt.failed_:
        raise FEAError("non-finite compliance")
    stress = stress_pass(spec.mesh, spec.boundary_conditions(), opt.density_,
                         solver=opt.solver, poisson_ratio=opt.poisson_ratio)
    return _State(opt.density_, stress, opt.compliance_, opt.n_iter_, opt.n_max_)


def _next_admissible(candidates, spec, history, allowed):
    """Pop candidates until one is admissible; returns (action, rejections)."""
    rejected = []
    while candidates:
        a = candidates.pop(0)
        reason = validate_action(a, spec, history, allowed)
        if reason is None:
            return a, rejected
        rejected.append({"action": a.to_dict(), "reason": reason})
    return None, rejected


def run_outer_loop(spec: ProblemSpec, strategy=None, config: LoopConfig | None = None,
                   condition: str | None = None, run_id: str | None = None) -> RunTrace:
    """Run the outer design loop and return its trace.

    Stops when every gate passes with ``C_final / C_rep < ratio_stop`` and
    load-path efficiency at least ``load_path_stop`` (converged), when the
    strategy requests a stop or proposes nothing (interpreter_stop), when no
    proposed action is admissible, when ``T_max`` solves have run, or when a
    solve fails and no untried admissible candidate remains.
    """
    check_spec(spec)
    config = config or LoopConfig()
    strategy = strategy or RuleBasedStrategy()
    condition = condition or getattr(strategy, "name", type(strategy).__name__)
    run_id = run_id or f"{condition}_p{spec.id if spec.id is not None else 'x'}_s{config.seed}"
    trace = RunTrace(run_id, int(config.seed), condition, spec.id, float(config.sigma_yield))
    seed_kind = "solid" if config.passive else "seed"

    history: list[Action] = []
    retained = math.inf
    current = spec
    prev_spec, pending = None, []  # fallback candidates if the current spec fails to solve

    t = 0
    while t < config.T_max:
        record = StepRecord(step=t, spec=current.to_dict(), c_final=None, c_rep=None,
                            eligible=False, evaluation=None)
        trace.steps.append(record)
        try:
            state = _solve(current, config)
        except (FEAError, OCConvergenceError, np.linalg.LinAlgError) as exc:
            logger.warning("%s step %d: solver failure: %s", run_id, t, exc)
            record.solver_failed = True
            record.notes.append(f"solver failure: {exc}")
            record.c_rep = None if math.isinf(retained) else retained
            trace.fields.append(None)
            if prev_spec is None:
                trace.stop_reason = STOP_SOLVER_FAILURE
                break
            # the failed action stays in the history so it is never retried
            action, rejected = _next_admissible(pending, prev_spec, history, config.allowed_kinds)
            record.rejections.extend(rejected)
            if action is None or t + 1 >= config.T_max:
                trace.stop_reason = STOP_SOLVER_FAILURE if action is None else STOP_BUDGET
                break
            action = resolve(action, prev_spec)
            record.applied = action.to_dict()
            history.append(action)
            current = apply_action(prev_spec, action, seed_kind)
            t += 1
            continue

        c = state.compliance
        record.c_final = c
        record.n_iter = state.n_iter
        record.eligible = retained_eligible(state.density, c)
        if record.eligible and c < retained:
            retained = c
            trace.retained_step = t
        record.c_rep = None if math.isinf(retained) else retained
        c_ref = retained if math.isfinite(retained) else c
        ev = evaluate(state.density, state.stress, current, config.sigma_yield,
                      SolverStats(c, c_ref, state.n_iter, state.n_max))
        record.evaluation = ev.to_dict()
        trace.fields.append((state.density, state.stress.sigma_vm))

        density_png = render_field_png("density", current.mesh, state.density)
        stress_png = render_field_png("stress", current.mesh, state.density, state.stress)
        names = {"density": f"{run_id}_step{t}_density.png", "stress": f"{run_id}_step{t}_stress.png"}
        trace.images[names["density"]] = density_png
        trace.images[names["stress"]] = stress_png
        record.images = names

        ratio = c / c_ref if c_ref > 0 and math.isfinite(c_ref) else math.inf
        lpe = ev.diagnostics.get("load_path_efficiency") or 0.0
        if ev.all_gates_pass and ratio < config.ratio_stop and lpe >= config.load_path_stop:
            trace.stop_reason = STOP_CONVERGED
            break
        if t + 1 >= config.T_max:
            trace.stop_reason = STOP_BUDGET
            break

        ctx = InterpreterContext(
            spec=current, densities=state.density, stress=state.stress, evaluation=ev,
            c_current=c, c_retained=retained, history=list(history), step=t,
            budget=config.T_max, density_png=density_png, stress_png=stress_png,
            seed=config.seed, allowed_kinds=config.allowed_kinds,
        )
        proposal = strategy.propose(ctx)
        record.notes.extend(proposal.notes)
        record.proposals = [a.to_dict() for a in proposal.actions]
        if proposal.stop or not proposal.actions:
            trace.stop_reason = STOP_INTERPRETER
            break
        candidates = sorted(proposal.actions, key=lambda a: a.priority)
        action, rejected = _next_admissible(candidates, current, history, config.allowed_kinds)
        record.rejections = rejected
        if action is None:
            trace.stop_reason = STOP_NO_ACTION
            break
        action = resolve(action, current)
        record.applied = action.to_dict()
        history.append(action)
        prev_spec, pending = current, candidates
        current = apply_action(current, action, seed_kind)
        t += 1
    else:
        trace.stop_reason = STOP_BUDGET
    return trace


class OuterLoopDesigner(BaseEstimator):
    """Estimator wrapper around :func:`run_outer_loop`.

    ``fit(spec)`` stores ``trace_``, ``density_`` (retained-best field, or the
    last solved field when nothing was eligible), ``c_rep_`` and ``stop_reason_``.
    """

    def __init__(self, strategy=None, T_max=5, sigma_yield=SIGMA_YIELD_REFERENCE, seed=42,
                 passive=False, allowed_kinds=None, solver_params=None):
        self.strategy = strategy
        self.T_max = T_max
        self.sigma_yield = sigma_yield
        self.seed = seed
        self.passive = passive
        self.allowed_kinds = allowed_kinds
        self.solver_params = solver_params

    def fit(self, spec, y=None):
        check_spec(spec)
        config = LoopConfig(T_max=self.T_max, sigma_yield=self.sigma_yield, seed=self.seed,
                            passive=self.passive, allowed_kinds=self.allowed_kinds,
                            solver_params=dict(self.solver_params or {}))
        trace = run_outer_loop(spec, self.strategy, config)
        self.trace_ = trace
        self.stop_reason_ = trace.stop_reason
        self.c_rep_ = trace.c_rep
        solved = [f for f in trace.fields if f is not None]
        if trace.retained_step is not None:
            self.density_ = trace.fields[trace.retained_step][0]
        elif solved:
            self.density_ = solved[-1][0]
        else:
            self.density_ = None
        return self

    def transform(self, spec):
        return self.fit(spec).density_

    def score(self, spec, y=None):
        """Negative retained compliance (higher is better)."""
        check_fitted(self, "trace_")
        return -float(self.c_rep_)
