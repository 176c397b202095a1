"""Seven gate checks and four informational diagnostics for one solver state.

Gates: load outside void, connectivity, compliance ratio, grayness, volume
fraction, convergence, maximum stress. Diagnostics (never gating): thin
members, checkerboard, load-path efficiency, stress concentration factor.

The thin-member and load-path measures are heuristics: thin members count
solid elements with a non-solid face neighbour, and load-path efficiency is
the solid fraction of elements crossed by Bresenham segments from each load
point to its nearest supported node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .fea import Mesh
from .stress import SOLID_THRESHOLD

CONNECTIVITY_MIN = 0.99
COMPLIANCE_RATIO_MAX = 2.0
GRAYNESS_MAX = 0.15
VOLUME_TOL = 0.05
CONVERGENCE_FACTOR = 1.5

GATE_NAMES = (
    "load_outside_void", "connectivity", "compliance_ratio", "grayness",
    "volume_fraction", "convergence", "max_stress",
)
DIAGNOSTIC_NAMES = ("thin_members", "checkerboard", "load_path_efficiency", "scf")


@dataclass(frozen=True)
class SolverStats:
    c_final: float
    c_rep: float
    total_iterations: int
    n_max: int


@dataclass
class Gate:
    passed: bool
    value: float | None


@dataclass
class EvaluationResult:
    gates: dict[str, Gate]
    diagnostics: dict[str, float | None]
    sigma_yield: float = field(default=float("nan"))

    @property
    def all_gates_pass(self) -> bool:
        return all(self.gates[name].passed for name in GATE_NAMES)

    def failed(self) -> list[str]:
        return [name for name in GATE_NAMES if not self.gates[name].passed]

    def to_dict(self) -> dict:
        return {
            "gates": {k: {"passed": g.passed, "value": _finite_or_none(g.value)} for k, g in self.gates.items()},
            "diagnostics": {k: _finite_or_none(v) for k, v in self.diagnostics.items()},
            "all_gates_pass": self.all_gates_pass,
            "sigma_yield": _finite_or_none(self.sigma_yield),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationResult":
        gates = {k: Gate(bool(v["passed"]), v["value"]) for k, v in d["gates"].items()}
        sy = d.get("sigma_yield")
        return cls(gates, dict(d["diagnostics"]), float("nan") if sy is None else sy)


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def grayness(densities) -> float:
    rho = np.asarray(densities, dtype=float)
    return float(np.mean(np.minimum(rho, 1 - rho)) / 0.25)


def solid_mask(densities, threshold: float = SOLID_THRESHOLD) -> np.ndarray:
    return np.asarray(densities, dtype=float) > threshold


def connectivity(densities, dims) -> float:
    """Fraction of solid elements in the largest component (8-connected 2D, 6-connected 3D)."""
    solid = solid_mask(densities).reshape(dims)
    n_solid = int(solid.sum())
    if n_solid == 0:
        return 0.0
    structure = ndimage.generate_binary_structure(len(dims), len(dims) if len(dims) == 2 else 1)
    labels, n = ndimage.label(solid, structure=structure)
    sizes = np.bincount(labels.ravel())[1:]
    return float(sizes.max() / n_solid)


def _face_neighbour_solid(solid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per element: count of existing face neighbours and of solid face neighbours."""
    n_nb = np.zeros(solid.shape, dtype=int)
    n_solid = np.zeros(solid.shape, dtype=int)
    for axis in range(solid.ndim):
        for shift in (1, -1):
            nb = np.roll(solid, shift, axis=axis)
            exists = np.ones(solid.shape, dtype=bool)
            edge = [slice(None)] * solid.ndim
            edge[axis] = 0 if shift == 1 else -1
            exists[tuple(edge)] = False
            n_nb += exists
            n_solid += exists & nb
    return n_nb, n_solid


def checkerboard_fraction(densities, dims) -> float:
    """Fraction of solid elements whose face neighbours are all non-solid."""
    solid = solid_mask(densities).reshape(dims)
    if not solid.any():
        return 0.0
    _, n_solid_nb = _face_neighbour_solid(solid)
    return float(np.sum(solid & (n_solid_nb == 0)) / solid.sum())


def thin_member_fraction(densities, dims) -> float:
    """Fraction of solid elements with at least one non-solid face neighbour."""
    solid = solid_mask(densities).reshape(dims)
    if not solid.any():
        return 0.0
    n_nb, n_solid_nb = _face_neighbour_solid(solid)
    return float(np.sum(solid & (n_solid_nb < n_nb)) / solid.sum())


def stress_concentration_factor(sigma_vm, densities) -> float | None:
    """max / mean von Mises over solid elements; ``None`` when no element is solid."""
    solid = solid_mask(densities)
    if not solid.any():
        return None
    s = np.asarray(sigma_vm, dtype=float)[solid]
    mean = s.mean()
    if not mean > 0:
        return None
    return float(s.max() / mean)


def bresenham(start, end) -> list[tuple[int, ...]]:
    """Integer cells on the N-D Bresenham line from ``start`` to ``end`` inclusive."""
    p = [int(v) for v in start]
    q = [int(v) for v in end]
    d = [abs(b - a) for a, b in zip(p, q)]
    s = [1 if b > a else -1 for a, b in zip(p, q)]
    dm = max(d) if d else 0
    err = [dm // 2] * len(p)
    cells = [tuple(p)]
    for _ in range(dm):
        for a in range(len(p)):
            err[a] -= d[a]
            if err[a] < 0:
                err[a] += dm
                p[a] += s[a]
        cells.append(tuple(p))
    return cells


def _point_cell(point, dims) -> tuple[int, ...]:
    return tuple(int(min(n - 1, max(0, math.floor(c)))) for c, n in zip(point, dims))


def load_path_cells(mesh: Mesh, bc) -> list[list[int]]:
    """Element indices on the straight path from each load node to its nearest fixed node."""
    load_nodes = bc.load_nodes(mesh)
    fixed_nodes = bc.fixed_nodes(mesh)
    coords = mesh.node_coords
    paths = []
    for ln in load_nodes:
        d2 = np.sum((coords[fixed_nodes] - coords[ln]) ** 2, axis=1)
        target = coords[fixed_nodes[int(np.argmin(d2))]]
        cells = bresenham(_point_cell(coords[ln], mesh.dims), _point_cell(target, mesh.dims))
        paths.append([int(np.ravel_multi_index(c, mesh.dims)) for c in cells])
    return paths


def load_path_efficiency(densities, mesh: Mesh, bc) -> float:
    """Mean over loads of the solid fraction along the load-to-support segment."""
    solid = solid_mask(densities)
    paths = load_path_cells(mesh, bc)
    if not paths:
        return 0.0
    return float(np.mean([solid[p].mean() for p in paths]))


def void_mask(spec) -> np.ndarray:
    mesh = spec.mesh
    mask = np.zeros(mesh.n_elements, dtype=bool)
    for r in spec.regions:
        if r.kind == "void":
            mask |= r.element_mask(mesh)
    return mask


def loads_in_void(spec) -> int:
    pts = spec.load_points()
    inside = np.zeros(len(pts), dtype=bool)
    for r in spec.regions:
        if r.kind == "void":
            inside |= r.contains(pts)
    return int(inside.sum())


def evaluate(densities, stress, spec, sigma_yield: float, stats: SolverStats) -> EvaluationResult:
    """Run every gate and diagnostic; degenerate states fail gates instead of raising."""
    mesh = spec.mesh
    rho = np.asarray(densities, dtype=float).ravel()
    sigma = np.asarray(getattr(stress, "sigma_vm", stress), dtype=float).ravel()
    bc = spec.boundary_conditions()
    gates = {}

    n_in_void = loads_in_void(spec)
    gates["load_outside_void"] = Gate(n_in_void == 0, float(n_in_void))

    conn = connectivity(rho, mesh.dims)
    gates["connectivity"] = Gate(conn >= CONNECTIVITY_MIN, conn)

    if math.isfinite(stats.c_rep) and stats.c_rep > 0 and math.isfinite(stats.c_final):
        ratio = stats.c_final / stats.c_rep
        gates["compliance_ratio"] = Gate(ratio <= COMPLIANCE_RATIO_MAX, ratio)
    else:
        gates["compliance_ratio"] = Gate(False, None)

    gray = grayness(rho)
    gates["grayness"] = Gate(gray <= GRAYNESS_MAX, gray)

    active = ~void_mask(spec)
    dv = abs(float(rho[active].mean()) - spec.vf) if active.any() else float("inf")
    gates["volume_fraction"] = Gate(dv <= VOLUME_TOL, dv)

    limit = CONVERGENCE_FACTOR * stats.n_max
    gates["convergence"] = Gate(stats.total_iterations <= limit, float(stats.total_iterations))

    solid = solid_mask(rho)
    if solid.any() and np.all(np.isfinite(sigma[solid])):
        smax = float(sigma[solid].max())
        gates["max_stress"] = Gate(smax <= sigma_yield, smax)
    else:
        gates["max_stress"] = Gate(False, None)

    diagnostics = {
        "thin_members": thin_member_fraction(rho, mesh.dims),
        "checkerboard": checkerboard_fraction(rho, mesh.dims),
        "load_path_efficiency": load_path_efficiency(rho, mesh, bc),
        "scf": stress_concentration_factor(sigma, rho),
    }
    return EvaluationResult(gates, diagnostics, float(sigma_yield))
