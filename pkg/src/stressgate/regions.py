"""Geometric regions carried by a problem spec: voids, frozen solids and soft seeds.

Regions are defined in the x-y plane and extruded through depth on 3D meshes.
An element belongs to a region when its centroid lies inside (boundary inclusive).
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

KINDS = ("void", "solid", "seed")
SHAPES = ("circle", "rectangle")

DEFAULT_SEED_DENSITY = 0.85
DEFAULT_WIDEN_DENSITY = 0.80
SEED_DENSITY_RANGE = (0.80, 0.95)

_EPS = 1e-9


@dataclass(frozen=True)
class SeedRegion:
    """Circle (``radius``) or axis-aligned rectangle (``half_extents``)."""

    shape: str
    center: tuple[float, float]
    kind: str
    radius: float | None = None
    half_extents: tuple[float, float] | None = None
    seed_density: float | None = None
    tag: str = field(default="", compare=False)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown region shape {self.shape!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center[:2]))
        if self.shape == "circle":
            if self.radius is None or not self.radius > 0:
                raise ValueError("circle regions need a positive radius")
            object.__setattr__(self, "radius", float(self.radius))
            object.__setattr__(self, "half_extents", None)
        else:
            if self.half_extents is None or min(self.half_extents) <= 0:
                raise ValueError("rectangle regions need positive half extents")
            object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents[:2]))
            object.__setattr__(self, "radius", None)
        if self.kind == "seed":
            rho = DEFAULT_SEED_DENSITY if self.seed_density is None else float(self.seed_density)
            if not 0.0 < rho < 1.0:
                raise ValueError(f"seed density must lie in (0, 1), got {rho}")
            object.__setattr__(self, "seed_density", rho)
        else:
            object.__setattr__(self, "seed_density", None)

    @classmethod
    def circle(cls, center, radius, kind="seed", seed_density=None, tag=""):
        return cls("circle", tuple(center), kind, radius=radius, seed_density=seed_density, tag=tag)

    @classmethod
    def rectangle(cls, center, half_extents, kind="void", seed_density=None, tag=""):
        return cls("rectangle", tuple(center), kind, half_extents=tuple(half_extents),
                   seed_density=seed_density, tag=tag)

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points (N, >=2) inside the region, boundary inclusive."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
        d = pts - np.asarray(self.center)
        if self.shape == "circle":
            return np.einsum("ij,ij->i", d, d) <= self.radius**2 + _EPS
        h = np.asarray(self.half_extents)
        return np.all(np.abs(d) <= h + _EPS, axis=1)

    def element_mask(self, mesh) -> np.ndarray:
        return self.contains(mesh.centroids)

    def intersects_domain(self, mesh) -> bool:
        return bool(self.element_mask(mesh).any())

    def with_kind(self, kind: str, seed_density=None) -> "SeedRegion":
        return SeedRegion(self.shape, self.center, kind, radius=self.radius,
                          half_extents=self.half_extents, seed_density=seed_density, tag=self.tag)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        if self.half_extents is not None:
            d["half_extents"] = list(self.half_extents)
        return {k: v for k, v in d.items() if v is not None and v != ""}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedRegion":
        return cls(
            shape=d["shape"], center=tuple(d["center"]), kind=d["kind"],
            radius=d.get("radius"), half_extents=d.get("half_extents"),
            seed_density=d.get("seed_density"), tag=d.get("tag", ""),
        )
