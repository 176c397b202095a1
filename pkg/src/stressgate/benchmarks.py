"""Built-in 22-problem suite and percentile calibration of the stress threshold.

Problem geometry lives in ``data/problems/pNN.json``. Load positions, support
extents and void placements are interpretations of short prose descriptions
(see each file's ``notes``); loads are unit magnitude.
"""
from __future__ import annotations

import json
import logging
from importlib import resources

import numpy as np

from .problem import ProblemSpec
from .simp import SimpOptimizer
from .stress import stress_pass

logger = logging.getLogger(__name__)

PROBLEM_IDS = tuple(range(1, 23))
PROBLEM_IDS_2D = tuple(range(1, 17))
PROBLEM_IDS_3D = tuple(range(17, 23))

# Published thresholds, usable without local calibration.
SIGMA_YIELD_REFERENCE = 120.3
SIGMA_YIELD_FIXED_VOLUME_REFERENCE = 163.457
SENSITIVITY_PERCENTILES = (40, 45, 50, 55, 60, 70)


class CalibrationError(RuntimeError):
    def __init__(self, problem_id, cause):
        super().__init__(f"calibration solve failed for problem {problem_id}: {cause}")
        self.problem_id = problem_id


def builtin_problem(problem_id: int) -> ProblemSpec:
    if problem_id not in PROBLEM_IDS:
        raise KeyError(f"unknown problem id {problem_id}; expected 1..22")
    path = resources.files("stressgate").joinpath(f"data/problems/p{problem_id:02d}.json")
    return ProblemSpec.from_dict(json.loads(path.read_text()))


def parse_problem_ids(text: str) -> list[int]:
    """Parse ``"1..16"``, ``"1,4,7"`` or mixes like ``"1..3,14"``."""
    ids = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            ids.extend(range(int(lo), int(hi) + 1))
        else:
            ids.append(int(part))
    return ids


def percentile(values, q: float) -> float:
    """Percentile with linear interpolation between order statistics."""
    if not 0 <= q <= 100:
        raise ValueError(f"percentile must lie in [0, 100], got {q}")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("no values to take a percentile of")
    return float(np.percentile(values, q, method="linear"))


def reference_max_stress(spec: ProblemSpec, **solver_params) -> float:
    """Solid-element peak von Mises stress of a compliance-only solve."""
    opt = SimpOptimizer(**solver_params).fit(spec)
    if opt.failed_:
        raise RuntimeError("non-finite compliance")
    stress = stress_pass(spec.mesh, spec.boundary_conditions(), opt.density_,
                         solver=opt.solver, poisson_ratio=opt.poisson_ratio)
    return stress.solid_max(opt.density_)


def calibration_maxima(problem_ids=PROBLEM_IDS_2D, **solver_params) -> dict[int, float]:
    maxima = {}
    for pid in problem_ids:
        try:
            maxima[pid] = reference_max_stress(builtin_problem(pid), **solver_params)
        except Exception as exc:
            raise CalibrationError(pid, exc) from exc
        logger.info("calibration problem %d: max von Mises %.6g", pid, maxima[pid])
    return maxima


def calibrate_sigma_yield(problem_ids=PROBLEM_IDS_2D, q: float = 50, maxima=None,
                          **solver_params) -> float:
    """``pct_q`` of the per-problem compliance-only peak stresses."""
    if maxima is None:
        maxima = calibration_maxima(problem_ids, **solver_params)
    return percentile(list(maxima.values()), q)
