"""Deterministic interpreter strategies: rule-based, exact hotspot, random region.

Every strategy maps an :class:`InterpreterContext` to a :class:`Proposal`
(ranked candidate actions plus an optional stop request). The loop applies
the first admissible candidate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..evaluator import EvaluationResult, load_path_cells
from ..regions import DEFAULT_SEED_DENSITY
from ..stress import SOLID_THRESHOLD
from .actions import (
    DEFAULT_HOTSPOT_RADIUS, VF_OPEN_RANGE, Action, global_action, hotspot_action,
)

VF_STEP = 0.04
PENAL_STEP = 0.5
RMIN_STEP = 0.3
CHECKERBOARD_TRIGGER = 0.02
# keeps a raised volume fraction strictly inside the admissible open interval
VF_CAP = VF_OPEN_RANGE[1] - 0.01


@dataclass
class InterpreterContext:
    """Everything an interpreter may look at for one design step."""

    spec: object
    densities: np.ndarray
    stress: object
    evaluation: EvaluationResult
    c_current: float
    c_retained: float
    history: list = field(default_factory=list)
    step: int = 0
    budget: int = 5
    density_png: bytes = b""
    stress_png: bytes = b""
    seed: int = 0
    allowed_kinds: tuple | None = None

    def __post_init__(self):
        if len(self.history) != self.step:
            raise ValueError("history length must equal the step index")


@dataclass
class Proposal:
    actions: list[Action]
    stop: bool = False
    notes: list[str] = field(default_factory=list)


def _ranked(actions) -> list[Action]:
    """Drop duplicate keys (first wins) and renumber priorities 1..n."""
    seen, out = set(), []
    for a in actions:
        k = a.key()
        if k in seen:
            continue
        seen.add(k)
        out.append(a.with_priority(len(out) + 1))
    return out


def rule_actions(evaluation: EvaluationResult, spec) -> list[Action]:
    """Global-parameter policy table keyed on failing gates and diagnostics."""
    g = evaluation.gates
    out = []
    vf_up = global_action("change_volume_fraction", value=min(VF_CAP, round(spec.vf + VF_STEP, 12)))
    if not g["max_stress"].passed:
        out.append(vf_up)
    if not g["grayness"].passed:
        out.append(global_action("change_penalization", delta=PENAL_STEP))
    checker = evaluation.diagnostics.get("checkerboard")
    if checker is not None and checker > CHECKERBOARD_TRIGGER:
        out.append(global_action("change_filter_radius", delta=RMIN_STEP))
    if not g["compliance_ratio"].passed:
        out.append(global_action("change_penalization", delta=-PENAL_STEP))
    if not g["connectivity"].passed:
        out.append(vf_up)
    if vf_up.params["value"] <= spec.vf:
        out = [a for a in out if a.key() != vf_up.key()]
    return _ranked(out)


class RuleBasedStrategy:
    """Scalar adjustments only; stops as soon as every gate passes."""

    name = "rule"

    def propose(self, ctx: InterpreterContext) -> Proposal:
        if ctx.evaluation.all_gates_pass:
            return Proposal([], stop=True, notes=["all gates pass"])
        return Proposal(rule_actions(ctx.evaluation, ctx.spec))


def propose_rule_based(ctx: InterpreterContext) -> list[Action]:
    return RuleBasedStrategy().propose(ctx).actions


def propose_exact_hotspot(stress, densities, spec, radius: float = DEFAULT_HOTSPOT_RADIUS,
                          seed_density: float = DEFAULT_SEED_DENSITY) -> list[Action]:
    """Seed circle on the centroid of the peak-stress solid element (lowest index on ties)."""
    sigma = np.asarray(getattr(stress, "sigma_vm", stress), dtype=float)
    solid = np.asarray(densities, dtype=float) > SOLID_THRESHOLD
    if not solid.any():
        return []
    idx = np.flatnonzero(solid)
    e = int(idx[np.argmax(sigma[idx])])
    center = spec.mesh.centroids[e][:2]
    return [hotspot_action(center, radius, seed_density, source="hotspot")]


def top_stress_candidates(stress, densities, fraction: float = 0.5) -> np.ndarray:
    """Solid elements whose stress is at or above the (1 - fraction) quantile of solid stresses."""
    sigma = np.asarray(getattr(stress, "sigma_vm", stress), dtype=float)
    solid = np.flatnonzero(np.asarray(densities, dtype=float) > SOLID_THRESHOLD)
    if solid.size == 0:
        return solid
    n_keep = max(1, int(np.ceil(fraction * solid.size)))
    # stable sort: ties resolved by element index
    order = solid[np.argsort(-sigma[solid], kind="stable")]
    return np.sort(order[:n_keep])


def propose_random_region(stress, densities, spec, seed: int, step: int = 0,
                          radius: float = DEFAULT_HOTSPOT_RADIUS,
                          seed_density: float = DEFAULT_SEED_DENSITY) -> list[Action]:
    """Seed circle on an element drawn uniformly from the top-half-stress solid elements."""
    candidates = top_stress_candidates(stress, densities)
    if candidates.size == 0:
        return []
    rng = np.random.default_rng([int(seed), int(step)])
    e = int(candidates[rng.integers(candidates.size)])
    center = spec.mesh.centroids[e][:2]
    return [hotspot_action(center, radius, seed_density, source="random")]


class ExactHotspotStrategy:
    """Numerical-argmax hotspot seed, followed by the rule safeguards."""

    name = "exact_hotspot"

    def propose(self, ctx: InterpreterContext) -> Proposal:
        spatial = propose_exact_hotspot(ctx.stress, ctx.densities, ctx.spec)
        return Proposal(_ranked(spatial + rule_actions(ctx.evaluation, ctx.spec)))


class RandomRegionStrategy:
    """Random top-half-stress seed with the same spatial budget, followed by the rule safeguards."""

    name = "random"

    def propose(self, ctx: InterpreterContext) -> Proposal:
        spatial = propose_random_region(ctx.stress, ctx.densities, ctx.spec, ctx.seed, ctx.step)
        return Proposal(_ranked(spatial + rule_actions(ctx.evaluation, ctx.spec)))


def propose_redistribute(stress, densities, spec, radius: float = DEFAULT_HOTSPOT_RADIUS,
                         seed_density: float = DEFAULT_SEED_DENSITY) -> list[Action]:
    """Void the lowest-mean-stress solid 3x3 neighbourhood off the load path; seed the hotspot.

    Neighbourhood means are taken over the in-plane 3x3 block (depth-averaged in
    3D) and only blocks centered on solid elements are considered.
    """
    mesh = spec.mesh
    sigma = np.asarray(getattr(stress, "sigma_vm", stress), dtype=float)
    rho = np.asarray(densities, dtype=float)
    target = propose_exact_hotspot(stress, rho, spec, radius, seed_density)
    if not target:
        return []
    plane = mesh.grid(sigma)
    solid = mesh.grid(rho) > SOLID_THRESHOLD
    if mesh.ndim == 3:
        plane = plane.mean(axis=2)
        solid = solid.any(axis=2)
    nx, ny = plane.shape
    padded = np.pad(plane, 1, mode="edge")
    block = sum(padded[i:i + nx, j:j + ny] for i in range(3) for j in range(3)) / 9.0
    on_path = np.zeros((nx, ny), dtype=bool)
    for cells in load_path_cells(mesh, spec.boundary_conditions()):
        for e in cells:
            ij = np.unravel_index(e, mesh.dims)
            on_path[ij[0], ij[1]] = True
    loads = spec.load_points()
    centroids2 = np.array([[i + 0.5, j + 0.5] for i in range(nx) for j in range(ny)])
    near_load = np.zeros(nx * ny, dtype=bool)
    for p in loads:
        near_load |= np.sum((centroids2 - p[:2]) ** 2, axis=1) <= (radius + 1e-9) ** 2
    ok = (solid & ~on_path).ravel() & ~near_load
    if not ok.any():
        return []
    flat = block.ravel()
    cand = np.flatnonzero(ok)
    c = int(cand[np.argmin(flat[cand])])
    src = centroids2[c]
    tgt = target[0].params
    params = {
        "source": {"center": [float(src[0]), float(src[1])], "radius": float(radius)},
        "target": {"center": list(tgt["center"]), "radius": float(radius),
                   "seed_density": float(seed_density)},
    }
    return [Action("redistribute_material", params, 1, "hotspot")]
