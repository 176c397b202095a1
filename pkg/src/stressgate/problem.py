"""Problem specifications and their JSON document form.

A spec document looks like::

    {
      "id": 14, "name": "Basic cantilever", "dims": [60, 30], "vf": 0.35,
      "fixed": [{"select": {"x": 0}, "dofs": "xy"}],
      "loads": [{"select": {"x": 60, "y": 15}, "force": [0, -1]}],
      "regions": [{"shape": "circle", "center": [30, 15], "radius": 4, "kind": "void"}]
    }

Node selectors map an axis name to a coordinate or an inclusive ``[lo, hi]``
range; omitted axes match every node. A load's ``force`` is the total force,
shared equally by the selected nodes.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fea import BoundaryConditions, Mesh
from .regions import SeedRegion

AXES = "xyz"
DEFAULT_PENAL = 4.5
DEFAULT_RMIN = 1.2
SCHEMA_VERSION = 1


def select_nodes(mesh: Mesh, selector: dict) -> np.ndarray:
    """Indices of nodes matched by an axis selector."""
    coords = mesh.node_coords
    mask = np.ones(len(coords), dtype=bool)
    for axis, bound in selector.items():
        a = AXES.index(axis)
        if a >= mesh.ndim:
            raise ValueError(f"selector axis {axis!r} does not exist on a {mesh.ndim}D mesh")
        if isinstance(bound, (list, tuple)):
            lo, hi = bound
            mask &= (coords[:, a] >= lo - 1e-9) & (coords[:, a] <= hi + 1e-9)
        else:
            mask &= np.abs(coords[:, a] - bound) <= 1e-9
    return np.flatnonzero(mask)


@dataclass
class ProblemSpec:
    """Mutable design-problem description edited by the outer loop."""

    dims: tuple[int, ...]
    vf: float
    fixed: list[dict]
    loads: list[dict]
    regions: list[SeedRegion] = field(default_factory=list)
    id: int | None = None
    name: str = ""
    penal: float = DEFAULT_PENAL
    rmin: float = DEFAULT_RMIN
    notes: str = ""

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.vf = float(self.vf)
        self.regions = [r if isinstance(r, SeedRegion) else SeedRegion.from_dict(r) for r in self.regions]

    @property
    def mesh(self) -> Mesh:
        return Mesh(self.dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.dims))

    def boundary_conditions(self) -> BoundaryConditions:
        mesh = self.mesh
        d = mesh.dof_per_node
        fixed = []
        for entry in self.fixed:
            nodes = select_nodes(mesh, entry["select"])
            if nodes.size == 0:
                raise ValueError(f"fixed selector {entry['select']} matches no node")
            for comp in entry.get("dofs", AXES[: mesh.ndim]):
                fixed.append(nodes * d + AXES.index(comp))
        loads = []
        for entry in self.loads:
            nodes = select_nodes(mesh, entry["select"])
            if nodes.size == 0:
                raise ValueError(f"load selector {entry['select']} matches no node")
            force = np.asarray(entry["force"], dtype=float)
            if force.shape != (mesh.ndim,):
                raise ValueError(f"load force must have {mesh.ndim} components")
            share = force / nodes.size
            for n in nodes:
                for comp in range(mesh.ndim):
                    if share[comp] != 0.0:
                        loads.append((int(n * d + comp), float(share[comp])))
        fixed_dofs = np.concatenate(fixed) if fixed else np.zeros(0, dtype=int)
        return BoundaryConditions(fixed_dofs, loads)

    def load_points(self) -> np.ndarray:
        mesh = self.mesh
        nodes = self.boundary_conditions().load_nodes(mesh)
        return mesh.node_coords[nodes]

    def validate(self) -> None:
        if not 0.0 < self.vf < 1.0:
            raise ValueError(f"volume fraction must lie in (0, 1), got {self.vf}")
        mesh = self.mesh
        bc = self.boundary_conditions()
        bc.validate(mesh)
        if not bc.loads:
            raise ValueError("spec has no nonzero load")
        for r in self.regions:
            if not r.intersects_domain(mesh):
                raise ValueError(f"region {r.to_dict()} lies outside the domain")
        if not self.penal >= 1.0:
            raise ValueError("penalization must be >= 1")
        if not self.rmin >= 1.0:
            raise ValueError("filter radius must be >= 1")

    def copy(self, **changes) -> "ProblemSpec":
        new = replace(self, **changes)
        new.fixed = copy.deepcopy(new.fixed)
        new.loads = copy.deepcopy(new.loads)
        new.regions = list(new.regions)
        return new

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "name": self.name,
            "dims": list(self.dims),
            "vf": self.vf,
            "fixed": copy.deepcopy(self.fixed),
            "loads": copy.deepcopy(self.loads),
            "regions": [r.to_dict() for r in self.regions],
            "penal": self.penal,
            "rmin": self.rmin,
        }
        if self.notes:
            d["notes"] = self.notes
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported spec schema version {version}")
        return cls(
            dims=d["dims"], vf=d["vf"], fixed=d["fixed"], loads=d["loads"],
            regions=[SeedRegion.from_dict(r) for r in d.get("regions", [])],
            id=d.get("id"), name=d.get("name", ""),
            penal=d.get("penal", DEFAULT_PENAL), rmin=d.get("rmin", DEFAULT_RMIN),
            notes=d.get("notes", ""),
        )

    @classmethod
    def load(cls, path) -> "ProblemSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
