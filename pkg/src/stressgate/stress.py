"""Post-solve stress pass: centroid von Mises stress with fixed-exponent interpolation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fea import E0, EMIN, POISSON, BoundaryConditions, Mesh, StiffnessSystem, constitutive_matrix, \
    element_strains, youngs_modulus

STRESS_PENALTY = 3.0
SOLID_THRESHOLD = 0.5


@dataclass
class StressField:
    sigma_vm: np.ndarray
    components: np.ndarray

    def solid_max(self, densities, threshold: float = SOLID_THRESHOLD) -> float:
        solid = np.asarray(densities) > threshold
        return float(self.sigma_vm[solid].max()) if solid.any() else float("nan")

    def solid_argmax(self, densities, threshold: float = SOLID_THRESHOLD) -> int | None:
        """Lowest-index element attaining the solid-element maximum."""
        solid = np.asarray(densities) > threshold
        if not solid.any():
            return None
        masked = np.where(solid, self.sigma_vm, -np.inf)
        return int(np.argmax(masked))


def von_mises(components) -> np.ndarray:
    """Von Mises stress from (…, 3) plane-stress or (…, 6) 3D component arrays.

    Component order: (xx, yy, xy) or (xx, yy, zz, xy, yz, zx).
    """
    s = np.asarray(components, dtype=float)
    if s.shape[-1] == 3:
        sxx, syy, txy = s[..., 0], s[..., 1], s[..., 2]
        val = sxx**2 + syy**2 - sxx * syy + 3 * txy**2
    elif s.shape[-1] == 6:
        sxx, syy, szz, txy, tyz, tzx = np.moveaxis(s, -1, 0)
        val = 0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2) \
            + 3 * (txy**2 + tyz**2 + tzx**2)
    else:
        raise ValueError("stress components must have 3 (2D) or 6 (3D) entries")
    return np.sqrt(np.maximum(val, 0.0))


def stress_pass(mesh: Mesh, bc: BoundaryConditions, densities, penal: float = STRESS_PENALTY,
                E0: float = E0, Emin: float = EMIN, poisson_ratio: float = POISSON,
                solver: str = "direct") -> StressField:
    """One forward solve with ``E_e = Emin + rho^p (E0 - Emin)`` and centroid stresses."""
    rho = np.asarray(densities, dtype=float).ravel()
    moduli = youngs_modulus(rho, penal, E0, Emin)
    u, _ = StiffnessSystem(mesh, bc, poisson_ratio, solver).solve(moduli)
    return stress_from_displacement(mesh, u, moduli, poisson_ratio)


def stress_from_displacement(mesh: Mesh, u, moduli, poisson_ratio: float = POISSON) -> StressField:
    D = constitutive_matrix(mesh.ndim, poisson_ratio)
    comps = element_strains(mesh, u) @ D.T * np.asarray(moduli)[:, None]
    return StressField(von_mises(comps), comps)
