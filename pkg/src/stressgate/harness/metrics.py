"""Localization records, feasibility-conditioned endpoints and stress-threshold sweeps."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, asdict

import numpy as np

from ..benchmarks import percentile
from ..controller.actions import SPATIAL_KINDS, Action, action_regions
from ..problem import ProblemSpec
from ..stress import SOLID_THRESHOLD

TOP_FRACTIONS = (1, 5, 10)
ENDPOINTS = {"feas": "c_feas", "final_feas": "c_final_feas", "any": "c_rep"}
TIE_DECIMALS = 2


@dataclass
class LocalizationRecord:
    step: int
    seed_center: tuple
    hotspot_centroid: tuple
    distance: float
    overlap: dict
    seed_elements: int
    stress_change_pct: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seed_center"] = list(self.seed_center)
        d["hotspot_centroid"] = list(self.hotspot_centroid)
        d["overlap"] = {str(k): v for k, v in self.overlap.items()}
        return d


def top_stress_set(sigma_vm, densities, percent: float) -> np.ndarray:
    """Indices of the ``ceil(percent/100 * n_solid)`` highest-stress solid elements (at least one)."""
    sigma = np.asarray(sigma_vm, dtype=float)
    solid = np.flatnonzero(np.asarray(densities, dtype=float) > SOLID_THRESHOLD)
    if solid.size == 0:
        return solid
    k = max(1, math.ceil(percent / 100.0 * solid.size - 1e-9))
    order = solid[np.argsort(-sigma[solid], kind="stable")]
    return np.sort(order[:k])


def seed_elements(action: Action, spec: ProblemSpec) -> np.ndarray:
    """Elements covered by the non-void regions an action adds."""
    mesh = spec.mesh
    mask = np.zeros(mesh.n_elements, dtype=bool)
    for r in action_regions(action):
        if r.kind != "void":
            mask |= r.element_mask(mesh)
    return np.flatnonzero(mask)


def seed_center(action: Action, spec: ProblemSpec) -> np.ndarray:
    centers = [r.center for r in action_regions(action) if r.kind != "void"]
    return np.mean(np.asarray(centers, dtype=float), axis=0)


def overlap_fraction(seed, top) -> float:
    seed = np.asarray(seed)
    if seed.size == 0:
        return 0.0
    return float(np.intersect1d(seed, top).size / seed.size)


def localization_metrics(trace, fields=None) -> list[LocalizationRecord]:
    """One record per applied spatial action that adds seed (or frozen-solid) material.

    ``fields`` is a per-step list of ``(densities, sigma_vm)`` (``None`` for a
    failed step); defaults to the in-memory fields of the trace. Distances use
    the in-plane coordinates normalized by the in-plane domain diagonal.
    """
    fields = trace.fields if fields is None else fields
    records = []
    for t, step in enumerate(trace.steps):
        if step.applied is None or step.applied["kind"] not in SPATIAL_KINDS:
            continue
        if t >= len(fields) or fields[t] is None:
            continue
        action = Action.from_dict(step.applied)
        spec = ProblemSpec.from_dict(step.spec)
        seeds = seed_elements(action, spec)
        if seeds.size == 0:
            continue
        rho, sigma = (np.asarray(a, dtype=float) for a in fields[t])
        solid = np.flatnonzero(rho > SOLID_THRESHOLD)
        if solid.size == 0:
            continue
        peak = int(solid[np.argmax(sigma[solid])])
        hotspot = spec.mesh.centroids[peak][:2]
        center = seed_center(action, spec)
        diag = math.hypot(spec.dims[0], spec.dims[1])
        distance = float(np.linalg.norm(center - hotspot) / diag)
        overlap = {k: overlap_fraction(seeds, top_stress_set(sigma, rho, k)) for k in TOP_FRACTIONS}
        change = None
        if t + 1 < len(fields) and fields[t + 1] is not None:
            cur = float(sigma[solid].max())
            rho_n, sigma_n = (np.asarray(a, dtype=float) for a in fields[t + 1])
            solid_n = rho_n > SOLID_THRESHOLD
            if solid_n.any() and cur > 0:
                change = 100.0 * (cur - float(sigma_n[solid_n].max())) / cur
        records.append(LocalizationRecord(t, tuple(center), tuple(hotspot), distance, overlap,
                                          int(seeds.size), change))
    return records


@dataclass
class EndpointReport:
    endpoint: str
    wins: int = 0
    losses: int = 0
    ties: int = 0
    geo_mean_ratio: float | None = None
    complete: list = field(default_factory=list)
    incomplete: list = field(default_factory=list)
    feasible: int = 0
    completed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def per_problem_means(summaries, condition, attr):
    values = defaultdict(list)
    completed = defaultdict(int)
    for s in summaries:
        if s.condition != condition or s.status != "completed":
            continue
        completed[s.problem_id] += 1
        v = getattr(s, attr)
        if v is not None and math.isfinite(v) and v > 0:
            values[s.problem_id].append(v)
    means = {p: float(np.mean(v)) for p, v in values.items()}
    return means, completed


def feasibility_score(summaries, condition: str, baseline: str, endpoints=tuple(ENDPOINTS)) -> dict:
    """Paired win/loss/tie counts and geometric-mean ratios of ``condition`` vs ``baseline``.

    Pairs are per problem over seed means; lower compliance wins and ties are
    judged at two decimals. A pair missing a value on either side is listed as
    incomplete and left out of the ratio. Feasible counts are over completed
    evaluations of ``condition``.
    """
    problems = sorted({s.problem_id for s in summaries if s.condition in (condition, baseline)})
    report = {}
    if not problems:
        return report
    for ep in endpoints:
        attr = ENDPOINTS[ep]
        cond, n_done = per_problem_means(summaries, condition, attr)
        base, _ = per_problem_means(summaries, baseline, attr)
        r = EndpointReport(ep)
        r.completed = sum(n_done.values())
        r.feasible = sum(1 for s in summaries if s.condition == condition and s.status == "completed"
                         and getattr(s, attr) is not None)
        logs = []
        for p in problems:
            if p in cond and p in base:
                r.complete.append(p)
                a, b = round(cond[p], TIE_DECIMALS), round(base[p], TIE_DECIMALS)
                if a < b:
                    r.wins += 1
                elif a > b:
                    r.losses += 1
                else:
                    r.ties += 1
                logs.append(math.log(cond[p] / base[p]))
            else:
                r.incomplete.append(p)
        r.geo_mean_ratio = float(math.exp(np.mean(logs))) if logs else None
        report[ep] = r
    return report


def geometric_mean_ratio(values, baseline) -> float:
    a = np.asarray(values, dtype=float)
    b = np.asarray(baseline, dtype=float)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("need equal-length non-empty samples")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("compliances must be positive")
    return float(np.exp(np.mean(np.log(a / b))))


def stress_gate_passes(max_stresses: dict, sigma_yield: float) -> set:
    """Problem ids whose solid-element peak stress is within ``sigma_yield``."""
    return {p for p, s in max_stresses.items() if s is not None and s <= sigma_yield}


def sensitivity_table(max_stresses: dict, percentiles, calibration_maxima=None) -> list[dict]:
    """Stress-gate pass counts of fixed designs across calibration percentiles.

    Thresholds are percentiles of ``calibration_maxima`` (defaults to the
    designs' own peak stresses).
    """
    ref = list((calibration_maxima or max_stresses).values())
    rows = []
    for q in percentiles:
        sy = percentile(ref, q)
        passing = stress_gate_passes(max_stresses, sy)
        rows.append({"q": q, "sigma_yield": sy, "n_pass": len(passing), "n_total": len(max_stresses),
                     "passing": sorted(passing)})
    return rows
