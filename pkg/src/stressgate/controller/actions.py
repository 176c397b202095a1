"""Action vocabulary, admissibility checks and the problem-spec modifier.

Global actions carry either ``delta`` or ``value`` and are resolved against
the current spec to an absolute ``value`` before validation, so two
successive "+0.04 volume fraction" steps are distinct actions while an
identical resolved target is a duplicate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..regions import DEFAULT_SEED_DENSITY, DEFAULT_WIDEN_DENSITY, SEED_DENSITY_RANGE, SeedRegion

GLOBAL_KINDS = {
    "change_volume_fraction": "vf",
    "change_filter_radius": "rmin",
    "change_penalization": "penal",
}
SPATIAL_KINDS = (
    "insert_passive_void", "insert_frozen_solid", "reinforce_hotspot",
    "widen_member", "redistribute_material",
)
ACTION_KINDS = tuple(GLOBAL_KINDS) + SPATIAL_KINDS

VF_OPEN_RANGE = (0.05, 0.95)
PARAM_BOUNDS = {"rmin": (1.0, 6.0), "penal": (1.0, 6.0)}
DEFAULT_HOTSPOT_RADIUS = 2.0
DEFAULT_WIDEN_RADIUS = 1.5

# rejection reasons
MALFORMED = "malformed"
UNKNOWN_KIND = "unknown_kind"
DISALLOWED_KIND = "disallowed_kind"
DUPLICATE = "duplicate"
OUTSIDE_DOMAIN = "outside_domain"
VOID_COVERS_LOAD = "void_covers_load"
VF_OUT_OF_RANGE = "vf_out_of_range"
OUT_OF_BOUNDS = "out_of_bounds"
SEED_DENSITY_OUT_OF_RANGE = "seed_density_out_of_range"


class ActionError(ValueError):
    """Raised when an action's parameters cannot be interpreted."""


@dataclass(frozen=True)
class Action:
    """One ranked candidate. ``source`` records provenance (rule, llm, hotspot, random)."""

    kind: str
    params: dict = field(default_factory=dict, hash=False)
    priority: int = 1
    source: str = "rule"

    def key(self) -> str:
        """Canonical identity used for duplicate detection (ignores priority and source)."""
        return json.dumps({"kind": self.kind, "params": _canonical(self.params)}, sort_keys=True)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _canonical(self.params),
                "priority": int(self.priority), "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("priority", 1)), d.get("source", "rule"))

    def with_priority(self, priority: int) -> "Action":
        return Action(self.kind, self.params, int(priority), self.source)


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer, float, np.floating)):
        # ints become floats so 2 and 2.0 share a key; 12 significant digits absorb last-bit noise
        return float(f"{float(obj):.12g}")
    return obj


def global_action(kind: str, delta=None, value=None, priority: int = 1, source: str = "rule") -> Action:
    if kind not in GLOBAL_KINDS:
        raise ActionError(f"{kind!r} is not a global action")
    if (delta is None) == (value is None):
        raise ActionError("give exactly one of delta or value")
    params = {"delta": float(delta)} if delta is not None else {"value": float(value)}
    return Action(kind, params, priority, source)


def hotspot_action(center, radius: float = DEFAULT_HOTSPOT_RADIUS,
                   seed_density: float = DEFAULT_SEED_DENSITY, priority: int = 1,
                   source: str = "hotspot") -> Action:
    return Action("reinforce_hotspot",
                  {"center": [float(c) for c in center[:2]], "radius": float(radius),
                   "seed_density": float(seed_density)}, priority, source)


def resolve(action: Action, spec) -> Action:
    """Turn a relative global action into an absolute target; spatial actions pass through."""
    if action.kind not in GLOBAL_KINDS:
        return action
    attr = GLOBAL_KINDS[action.kind]
    p = action.params
    if "value" in p:
        value = float(p["value"])
    elif "delta" in p:
        value = float(getattr(spec, attr)) + float(p["delta"])
    else:
        raise ActionError(f"{action.kind} needs 'delta' or 'value'")
    return Action(action.kind, {"value": round(value, 12)}, action.priority, action.source)


def _point(p, name="center") -> tuple[float, float]:
    try:
        x, y = float(p[0]), float(p[1])
    except (TypeError, IndexError, ValueError) as exc:
        raise ActionError(f"{name} must be a coordinate pair") from exc
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ActionError(f"{name} must be finite")
    return x, y


def _circle_from(p: dict, kind: str, seed_density=None) -> SeedRegion:
    center = _point(p.get("center"))
    try:
        radius = float(p["radius"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ActionError("circle needs a numeric radius") from exc
    if not radius > 0:
        raise ActionError("radius must be positive")
    return SeedRegion.circle(center, radius, kind=kind, seed_density=seed_density)


def _shape_from(p: dict, kind: str) -> SeedRegion:
    if p.get("shape", "circle") == "rectangle" or "half_extents" in p:
        center = _point(p.get("center"))
        try:
            hx, hy = (float(h) for h in p["half_extents"][:2])
        except (KeyError, TypeError, ValueError) as exc:
            raise ActionError("rectangle needs two half extents") from exc
        if min(hx, hy) <= 0:
            raise ActionError("half extents must be positive")
        return SeedRegion.rectangle(center, (hx, hy), kind=kind)
    return _circle_from(p, kind)


def polyline_centers(points, spacing: float) -> np.ndarray:
    """Points at equal arc-length steps (at most ``spacing``) along a polyline, ends included."""
    pts = np.asarray([_point(p, "polyline vertex") for p in points], dtype=float)
    if len(pts) == 0:
        raise ActionError("polyline needs at least one vertex")
    if not spacing > 0:
        raise ActionError("spacing must be positive")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(seg.sum())
    if total == 0.0:
        return pts[:1]
    n = math.ceil(total / spacing - 1e-9)
    s = np.linspace(0.0, total, n + 1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


def action_regions(action: Action, seed_kind: str = "seed") -> list[SeedRegion]:
    """Regions a spatial action adds to a spec. ``seed_kind="solid"`` freezes seeds instead."""
    p = action.params
    k = action.kind

    def seed(params, default_rho):
        rho = float(params.get("seed_density", default_rho))
        if seed_kind == "solid":
            return _circle_from(params, "solid")
        return _circle_from(params, "seed", seed_density=rho)

    if k == "insert_passive_void":
        return [_shape_from(p, "void")]
    if k == "insert_frozen_solid":
        return [_shape_from(p, "solid")]
    if k == "reinforce_hotspot":
        return [seed(p, DEFAULT_SEED_DENSITY)]
    if k == "widen_member":
        radius = float(p.get("radius", DEFAULT_WIDEN_RADIUS))
        rho = float(p.get("seed_density", DEFAULT_WIDEN_DENSITY))
        centers = polyline_centers(p.get("polyline", []), radius)
        return [seed({"center": c, "radius": radius, "seed_density": rho}, DEFAULT_WIDEN_DENSITY)
                for c in centers]
    if k == "redistribute_material":
        try:
            src, tgt = p["source"], p["target"]
        except KeyError as exc:
            raise ActionError("redistribute needs 'source' and 'target'") from exc
        target = dict(tgt)
        target.setdefault("seed_density", p.get("seed_density", DEFAULT_SEED_DENSITY))
        return [_circle_from(src, "void"), seed(target, DEFAULT_SEED_DENSITY)]
    raise ActionError(f"{k!r} adds no regions")


def _seed_densities(action: Action) -> list[float]:
    p = action.params
    if action.kind == "reinforce_hotspot":
        return [float(p.get("seed_density", DEFAULT_SEED_DENSITY))]
    if action.kind == "widen_member":
        return [float(p.get("seed_density", DEFAULT_WIDEN_DENSITY))]
    if action.kind == "redistribute_material":
        tgt = p.get("target", {})
        return [float(tgt.get("seed_density", p.get("seed_density", DEFAULT_SEED_DENSITY)))]
    return []


def _inside_domain(points, dims) -> bool:
    lx, ly = dims[0], dims[1]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return bool(np.all((pts[:, 0] >= 0) & (pts[:, 0] <= lx) & (pts[:, 1] >= 0) & (pts[:, 1] <= ly)))


def validate_action(action: Action, spec, history=(), allowed_kinds=None) -> str | None:
    """``None`` when admissible, else a short rejection reason.

    ``history`` holds previously applied (resolved) actions.
    """
    if action.kind not in ACTION_KINDS:
        return UNKNOWN_KIND
    if allowed_kinds is not None and action.kind not in allowed_kinds:
        return DISALLOWED_KIND
    try:
        resolved = resolve(action, spec)
    except (ActionError, TypeError, ValueError):
        return MALFORMED
    key = resolved.key()
    if any(resolve(h, spec).key() == key for h in history):
        return DUPLICATE

    if action.kind in GLOBAL_KINDS:
        value = resolved.params["value"]
        if not math.isfinite(value):
            return MALFORMED
        attr = GLOBAL_KINDS[action.kind]
        if attr == "vf":
            lo, hi = VF_OPEN_RANGE
            return None if lo < value < hi else VF_OUT_OF_RANGE
        lo, hi = PARAM_BOUNDS[attr]
        return None if lo <= value <= hi else OUT_OF_BOUNDS

    try:
        regions = action_regions(action)
    except (ActionError, TypeError, ValueError):
        return MALFORMED
    lo, hi = SEED_DENSITY_RANGE
    if any(not lo <= rho <= hi for rho in _seed_densities(action)):
        return SEED_DENSITY_OUT_OF_RANGE
    centers = [r.center for r in regions]
    if action.kind == "widen_member":
        centers = [_point(v, "polyline vertex") for v in action.params.get("polyline", [])]
    mesh = spec.mesh
    if not _inside_domain(centers, spec.dims) or not all(r.intersects_domain(mesh) for r in regions):
        return OUTSIDE_DOMAIN
    loads = spec.load_points()
    if any(r.kind == "void" and r.contains(loads).any() for r in regions):
        return VOID_COVERS_LOAD
    return None


def apply_action(spec, action: Action, seed_kind: str = "seed"):
    """Return a new spec with ``action`` applied; the input spec is not modified."""
    if action.kind in GLOBAL_KINDS:
        value = resolve(action, spec).params["value"]
        return spec.copy(**{GLOBAL_KINDS[action.kind]: value})
    new = spec.copy()
    new.regions = list(spec.regions) + action_regions(action, seed_kind=seed_kind)
    return new


def first_admissible(actions, spec, history=(), allowed_kinds=None):
    """Highest-priority admissible action and the rejection list ``[(action, reason)]``.

    Candidates are tried in (priority, list position) order.
    """
    order = sorted(range(len(actions)), key=lambda i: (actions[i].priority, i))
    rejected = []
    for i in order:
        a = actions[i]
        reason = validate_action(a, spec, history, allowed_kinds)
        if reason is None:
            return a, rejected
        rejected.append((a, reason))
    return None, rejected
