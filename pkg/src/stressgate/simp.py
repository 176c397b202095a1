"""Compliance-minimizing SIMP with a three-field density scheme.

design x --(cone filter)--> filtered --(tanh projection)--> physical

The physical field drives the FEA and the volume constraint. Frozen elements
(passive voids and solids) keep fixed physical values and are skipped by the
optimality-criteria update.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from ._validation import check_densities, check_fitted, check_spec
from .fea import E0, EMIN, POISSON, Mesh, StiffnessSystem, youngs_modulus
from .regions import SeedRegion

logger = logging.getLogger(__name__)

RHO_MIN = 1e-3
OC_EXPONENT = 0.5
PROJECTION_THRESHOLD = 0.5

FREE, FROZEN_VOID, FROZEN_SOLID = 0, 1, 2
ROLE_NAMES = {FREE: "free", FROZEN_VOID: "frozen_void", FROZEN_SOLID: "frozen_solid"}


class OCConvergenceError(RuntimeError):
    """The volume multiplier bisection failed to hit the target."""


@dataclass
class DensityField:
    """Per-element densities with role tags (free / frozen_void / frozen_solid)."""

    rho: np.ndarray
    roles: np.ndarray

    @property
    def free(self) -> np.ndarray:
        return self.roles == FREE

    def role_names(self) -> list[str]:
        return [ROLE_NAMES[int(r)] for r in self.roles]


@dataclass(frozen=True)
class ContinuationSchedule:
    """Per-iteration penalty, projection sharpness, filter radius and move limit.

    The penalty ramps linearly over the first half of the main loop, then
    beta doubles every ``beta_double_every`` iterations up to ``beta_end``.
    The filter radius shrinks linearly to ``rmin_end`` over the last third of
    the main loop. The tail holds the terminal values with ``tail_move``.

    With ``scale_move`` the main-loop move limit is divided by sqrt(beta)
    (floored at ``tail_move``); a fixed 0.2 step oscillates once the
    projection is sharp.
    """

    max_iter: int = 120
    p_start: float = 1.0
    p_end: float = 4.5
    beta_start: float = 1.0
    beta_end: float = 32.0
    beta_double_every: int = 10
    rmin_start: float = 2.4
    rmin_end: float = 1.2
    move: float = 0.2
    tail_iterations: int = 40
    tail_move: float = 0.05
    scale_move: bool = True

    @classmethod
    def for_spec(cls, spec, **overrides) -> "ContinuationSchedule":
        kw = dict(
            max_iter=120 if spec.ndim == 2 else 80,
            p_end=spec.penal,
            rmin_end=spec.rmin,
            rmin_start=max(cls.rmin_start, spec.rmin),
        )
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    @property
    def total_iterations(self) -> int:
        return self.max_iter + self.tail_iterations

    @property
    def ramp_end(self) -> int:
        return max(1, self.max_iter // 2)

    def at(self, k: int) -> tuple[float, float, float, float]:
        """(penalty, beta, rmin, move) for iteration ``k``."""
        if k >= self.max_iter:
            return self.p_end, self.beta_end, self.rmin_end, self.tail_move
        p = self.p_start + (self.p_end - self.p_start) * min(1.0, k / self.ramp_end)
        if k < self.ramp_end:
            beta = self.beta_start
        else:
            doublings = 1 + (k - self.ramp_end) // self.beta_double_every
            beta = min(self.beta_end, self.beta_start * 2.0**doublings)
        shrink_start = (2 * self.max_iter) // 3
        if k < shrink_start:
            rmin = self.rmin_start
        else:
            span = max(1, self.max_iter - 1 - shrink_start)
            t = min(1.0, (k - shrink_start) / span)
            rmin = self.rmin_start + (self.rmin_end - self.rmin_start) * t
        move = max(self.tail_move, self.move / np.sqrt(beta)) if self.scale_move else self.move
        return p, beta, rmin, float(move)


@lru_cache(maxsize=64)
def filter_matrix(dims: tuple[int, ...], rmin: float) -> tuple[sp.csr_matrix, np.ndarray]:
    """Cone weights ``max(0, rmin - dist)`` between element centroids, and row sums."""
    n = int(np.prod(dims))
    reach = int(np.ceil(rmin)) - 1 if rmin > 1 else 0
    idx = np.indices(dims).reshape(len(dims), -1)
    rows, cols, vals = [], [], []
    for off in np.ndindex(*(2 * reach + 1,) * len(dims)):
        off = np.asarray(off) - reach
        w = rmin - np.sqrt(np.sum(off**2))
        if w <= 0:
            continue
        nb = idx + off[:, None]
        ok = np.all((nb >= 0) & (nb < np.asarray(dims)[:, None]), axis=0)
        rows.append(np.flatnonzero(ok))
        cols.append(np.ravel_multi_index(tuple(nb[:, ok]), dims))
        vals.append(np.full(ok.sum(), w))
    if not rows:
        H = sp.identity(n, format="csr")
    else:
        H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    Hs = np.asarray(H.sum(axis=1)).ravel()
    return H, Hs


def density_filter(rho, dims, rmin: float) -> np.ndarray:
    """Weighted average of ``rho`` over a cone of radius ``rmin`` (identity for rmin <= 1)."""
    rho = np.asarray(rho, dtype=float)
    if rmin <= 1:
        return rho.copy()
    H, Hs = filter_matrix(tuple(dims), float(rmin))
    return H @ rho / Hs


def heaviside_project(filtered, beta: float, eta: float = PROJECTION_THRESHOLD) -> np.ndarray:
    x = np.asarray(filtered, dtype=float)
    denom = np.tanh(beta * eta) + np.tanh(beta * (1 - eta))
    return (np.tanh(beta * eta) + np.tanh(beta * (x - eta))) / denom


def heaviside_derivative(filtered, beta: float, eta: float = PROJECTION_THRESHOLD) -> np.ndarray:
    x = np.asarray(filtered, dtype=float)
    denom = np.tanh(beta * eta) + np.tanh(beta * (1 - eta))
    return beta * (1 - np.tanh(beta * (x - eta)) ** 2) / denom


def compliance_sensitivity(densities, element_energy, penal: float, E0: float = E0,
                           Emin: float = EMIN) -> np.ndarray:
    """dC/drho_e = -p rho^(p-1) (E0 - Emin) u_e^T K_e^0 u_e for the physical field."""
    rho = np.asarray(densities, dtype=float)
    return -penal * rho ** (penal - 1) * (E0 - Emin) * np.asarray(element_energy)


class ThreeField:
    """Design-to-physical map for fixed (dims, rmin, beta) and frozen roles."""

    def __init__(self, dims, rmin: float, beta: float, roles: np.ndarray,
                 rho_min: float = RHO_MIN):
        self.dims = tuple(dims)
        self.rmin = float(rmin)
        self.beta = float(beta)
        self.roles = np.asarray(roles)
        self.rho_min = rho_min
        if self.rmin > 1:
            self.H, self.Hs = filter_matrix(self.dims, self.rmin)
        else:
            self.H = None

    def filtered(self, x):
        return x.copy() if self.H is None else self.H @ x / self.Hs

    def physical(self, x) -> np.ndarray:
        # affine lift keeps the physical field in [rho_min, 1] with a smooth derivative
        xp = self.rho_min + (1 - self.rho_min) * heaviside_project(self.filtered(x), self.beta)
        xp[self.roles == FROZEN_VOID] = self.rho_min
        xp[self.roles == FROZEN_SOLID] = 1.0
        return xp

    def chain(self, x, d_physical) -> np.ndarray:
        """Pull a gradient w.r.t. the physical field back to the design field."""
        xt = self.filtered(x)
        dproj = (1 - self.rho_min) * heaviside_derivative(xt, self.beta)
        dproj[self.roles != FREE] = 0.0
        g = dproj * np.asarray(d_physical)
        if self.H is None:
            return g
        return self.H.T @ (g / self.Hs)


def oc_update(rho, sensitivity, vf: float, move: float, rho_min: float = RHO_MIN,
              free=None, volume=None, volume_sensitivity=None, max_bisect: int = 200,
              tol: float = 1e-6) -> np.ndarray:
    """Optimality-criteria step with a bisected volume multiplier.

    Parameters
    ----------
    rho : array
        Current design densities.
    sensitivity : array
        dC/drho, non-positive on free elements.
    volume : callable, optional
        Maps a candidate design to the constrained volume measure. Defaults to
        the mean over free elements of the candidate itself.
    volume_sensitivity : array, optional
        d(volume)/drho scaled so a plain mean gives ones; the OC ratio is
        ``-dC/drho / (lambda * dV/drho)``. Defaults to ones.
    """
    rho = np.asarray(rho, dtype=float)
    dc = np.asarray(sensitivity, dtype=float)
    free = np.ones(rho.shape, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    if not free.any():
        return rho.copy()
    if np.any(dc[free] > 1e-12 * max(1.0, np.abs(dc[free]).max())):
        raise ValueError("sensitivities must be non-positive on free elements")
    if volume is None:
        def volume(x):
            return x[free].mean()
    neg = np.maximum(-dc[free], 0.0)
    if volume_sensitivity is not None:
        dv = np.asarray(volume_sensitivity, dtype=float)[free]
        with np.errstate(divide="ignore", invalid="ignore"):
            neg = np.where(dv > 0, neg / dv, 0.0)
    scale = neg.max()
    if scale == 0.0:
        # no information: only the volume can be matched, by a uniform shift
        scale = 1.0

    def candidate(lam):
        x = rho.copy()
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = rho[free] * (neg / lam) ** OC_EXPONENT
        x[free] = np.clip(step, lo_move, hi_move)
        return x

    # widen the move limit when the target lies outside the reachable volume range
    while True:
        lo_move = np.maximum(rho_min, rho[free] - move)
        hi_move = np.minimum(1.0, rho[free] + move)
        reachable = (volume(candidate(scale * 1e12)) - tol <= vf
                     <= volume(candidate(np.finfo(float).tiny)) + tol)
        if reachable or move >= 1.0:
            break
        move = min(1.0, 2 * move)

    lo, hi = 0.0, scale * 1e12
    x = candidate(hi)
    vol = volume(x)
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        x = candidate(mid) if mid > 0 else candidate(np.finfo(float).tiny)
        vol = volume(x)
        if abs(vol - vf) <= tol * 1e-3:
            return x
        if vol > vf:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    if abs(vol - vf) <= tol:
        return x
    raise OCConvergenceError(
        f"OC bisection missed the volume target: {vol:.8f} vs {vf:.8f}"
    )


def apply_seed_initialization(spec, regions=None, rho_min: float = RHO_MIN) -> DensityField:
    """Initial design field: v_f everywhere, seed densities in seed regions,
    frozen voids at ``rho_min`` and frozen solids at 1.

    Precedence is void > solid > seed; later regions of one kind overwrite earlier ones.
    """
    mesh = Mesh(spec.dims)
    regions = spec.regions if regions is None else regions
    rho = np.full(mesh.n_elements, float(spec.vf))
    roles = np.full(mesh.n_elements, FREE, dtype=np.int8)
    masks = []
    for r in regions:
        if not isinstance(r, SeedRegion):
            raise TypeError("regions must be SeedRegion instances")
        m = r.element_mask(mesh)
        if not m.any():
            raise ValueError(f"region {r.to_dict()} lies outside the domain")
        masks.append((r, m))
    for r, m in masks:
        if r.kind == "seed":
            rho[m] = r.seed_density
    for r, m in masks:
        if r.kind == "solid":
            rho[m] = 1.0
            roles[m] = FROZEN_SOLID
    for r, m in masks:
        if r.kind == "void":
            rho[m] = rho_min
            roles[m] = FROZEN_VOID
    return DensityField(rho, roles)


@dataclass
class SimpResult:
    density: np.ndarray
    compliance: float
    n_iter: int
    compliance_log: list[float]
    roles: np.ndarray
    design: np.ndarray
    failed: bool = False
    volume_errors: list[float] = field(default_factory=list)
    schedule_log: list[tuple[float, float, float, float]] = field(default_factory=list)


class SimpOptimizer(BaseEstimator):
    """Three-field SIMP/OC compliance minimizer with continuation and a fixed tail.

    ``fit(spec)`` runs the full iteration budget (no early exit) and stores
    ``density_`` (physical field), ``compliance_``, ``n_iter_``,
    ``compliance_history_``, ``volume_errors_`` and ``schedule_log_``.

    Parameters
    ----------
    max_iter : int, optional
        Main-loop iterations; defaults to 120 in 2D and 80 in 3D.
    tail_iterations : int
        Standardized refinement iterations at terminal parameters.
    solver : {"direct", "cg", "dense"}
        Linear solver passed to the FEA kernel.
    """

    def __init__(self, max_iter=None, tail_iterations=40, move=0.2, tail_move=0.05,
                 rmin_start=2.4, rho_min=RHO_MIN, Emin=EMIN, poisson_ratio=POISSON,
                 solver="direct"):
        self.max_iter = max_iter
        self.tail_iterations = tail_iterations
        self.move = move
        self.tail_move = tail_move
        self.rmin_start = rmin_start
        self.rho_min = rho_min
        self.Emin = Emin
        self.poisson_ratio = poisson_ratio
        self.solver = solver

    def schedule(self, spec) -> ContinuationSchedule:
        return ContinuationSchedule.for_spec(
            spec, max_iter=self.max_iter, tail_iterations=self.tail_iterations,
            move=self.move, tail_move=self.tail_move,
            rmin_start=max(self.rmin_start, spec.rmin),
        )

    def fit(self, spec, y=None):
        check_spec(spec)
        schedule = self.schedule(spec)
        mesh = Mesh(spec.dims)
        system = StiffnessSystem(mesh, spec.boundary_conditions(), self.poisson_ratio, self.solver)
        init = apply_seed_initialization(spec, rho_min=self.rho_min)
        x, roles = init.rho.copy(), init.roles
        free = roles == FREE

        log, vol_err, sched_log = [], [], []
        failed = False
        for k in range(schedule.total_iterations):
            p, beta, rmin, move = schedule.at(k)
            sched_log.append((p, beta, rmin, move))
            field3 = ThreeField(spec.dims, rmin, beta, roles, self.rho_min)
            xp = field3.physical(x)
            u, c = system.solve(youngs_modulus(xp, p, E0, self.Emin))
            log.append(c)
            if not np.isfinite(c):
                failed = True
                break
            dc = compliance_sensitivity(xp, system.element_energy(u), p, E0, self.Emin)
            dx = field3.chain(x, dc)
            dv = field3.chain(x, free.astype(float))
            x = oc_update(x, dx, spec.vf, move, self.rho_min, free,
                          volume=lambda z: field3.physical(z)[free].mean(),
                          volume_sensitivity=dv)
            vol_err.append(abs(field3.physical(x)[free].mean() - spec.vf) if free.any() else 0.0)

        p, beta, rmin, _ = schedule.at(schedule.total_iterations - 1)
        density = ThreeField(spec.dims, rmin, beta, roles, self.rho_min).physical(x)
        if failed:
            compliance = float("nan")
        else:
            _, compliance = system.solve(youngs_modulus(density, p, E0, self.Emin))
            failed = not (np.isfinite(compliance) and compliance > 0)
        self.density_ = density
        self.design_ = x
        self.roles_ = roles
        self.compliance_ = float(compliance)
        self.n_iter_ = len(log)
        self.compliance_history_ = log
        self.volume_errors_ = vol_err
        self.schedule_log_ = sched_log
        self.failed_ = failed
        self.n_max_ = schedule.max_iter
        logger.debug("SIMP solve %s: C=%.4f after %d iterations", spec.name, compliance, len(log))
        return self

    def transform(self, spec):
        """Fit on ``spec`` and return the physical density field."""
        return self.fit(spec).density_

    def result(self) -> SimpResult:
        check_fitted(self, "density_")
        return SimpResult(self.density_, self.compliance_, self.n_iter_, list(self.compliance_history_),
                          self.roles_, self.design_, self.failed_, list(self.volume_errors_),
                          list(self.schedule_log_))


def simp_solve(spec, **params) -> SimpResult:
    """Functional wrapper: run :class:`SimpOptimizer` on ``spec``."""
    return SimpOptimizer(**params).fit(spec).result()


__all__ = [
    "ContinuationSchedule", "DensityField", "OCConvergenceError", "SimpOptimizer", "SimpResult",
    "ThreeField", "apply_seed_initialization", "check_densities", "compliance_sensitivity",
    "density_filter", "filter_matrix", "heaviside_derivative", "heaviside_project", "oc_update",
    "simp_solve",
]
