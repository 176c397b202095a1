"""Structured-grid finite elements: bilinear quads (plane stress) and trilinear hexahedra.

Elements have unit size and unit thickness. Indexing follows C order over the
element grid ``dims`` (``e = ravel_multi_index(idx, dims)``) and over the node
grid ``dims + 1``. Global DOF numbering is ``node * dof_per_node + component``.
The y axis points up; in 3D, z is the depth axis.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

E0 = 1.0
EMIN = 1e-9
POISSON = 0.3
RESIDUAL_TOL = 1e-8
BACKWARD_TOL = 1e-13

# Natural coordinates of the element nodes, counter-clockwise in the x-y plane,
# bottom (z=-1) face first in 3D.
_NODES_2D = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
_NODES_3D = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=float,
)


class FEAError(RuntimeError):
    """Raised when the linear system cannot be solved reliably."""


class SingularSystemError(FEAError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Regular grid of unit elements.

    Parameters
    ----------
    dims : tuple of int
        Element counts per axis, ``(nx, ny)`` or ``(nx, ny, nz)``.
    """

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"mesh must be 2D or 3D, got dims={self.dims}")
        if any(d < 1 for d in dims):
            raise ValueError(f"all mesh dims must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def dof_per_node(self) -> int:
        return self.ndim

    @property
    def node_dims(self) -> tuple[int, ...]:
        return tuple(d + 1 for d in self.dims)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_dims))

    @property
    def n_dofs(self) -> int:
        return self.n_nodes * self.dof_per_node

    @property
    def diagonal(self) -> float:
        return float(np.sqrt(np.sum(np.square(self.dims))))

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """(n_e, 4|8) node indices per element, in local node order."""
        corners = _NODES_2D if self.ndim == 2 else _NODES_3D
        offsets = ((corners + 1) / 2).astype(int)
        idx = np.indices(self.dims).reshape(self.ndim, -1)
        cols = [
            np.ravel_multi_index(tuple(idx[a] + off[a] for a in range(self.ndim)), self.node_dims)
            for off in offsets
        ]
        return np.stack(cols, axis=1)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        d = self.dof_per_node
        nodes = self.element_nodes
        return (nodes[:, :, None] * d + np.arange(d)[None, None, :]).reshape(len(nodes), -1)

    @cached_property
    def centroids(self) -> np.ndarray:
        idx = np.indices(self.dims).reshape(self.ndim, -1).T
        return idx + 0.5

    @cached_property
    def node_coords(self) -> np.ndarray:
        return np.indices(self.node_dims).reshape(self.ndim, -1).T.astype(float)

    def node_index(self, coords) -> int:
        c = tuple(int(round(v)) for v in coords)
        return int(np.ravel_multi_index(c, self.node_dims))

    def grid(self, values) -> np.ndarray:
        """Reshape a per-element vector onto the element grid."""
        return np.asarray(values).reshape(self.dims)


@dataclass
class BoundaryConditions:
    """Fixed DOFs and point loads in global DOF numbering."""

    fixed_dofs: np.ndarray
    loads: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        self.loads = [(int(d), float(m)) for d, m in self.loads]

    def validate(self, mesh: Mesh) -> None:
        if self.fixed_dofs.size == 0:
            raise ValueError("at least one DOF must be fixed")
        if self.fixed_dofs.min() < 0 or self.fixed_dofs.max() >= mesh.n_dofs:
            raise ValueError("fixed DOF index outside the mesh")
        fixed = set(self.fixed_dofs.tolist())
        for dof, _ in self.loads:
            if not 0 <= dof < mesh.n_dofs:
                raise ValueError(f"load DOF {dof} outside the mesh")
            if dof in fixed:
                raise ValueError(f"load DOF {dof} is fixed")

    def force_vector(self, mesh: Mesh) -> np.ndarray:
        f = np.zeros(mesh.n_dofs)
        for dof, mag in self.loads:
            f[dof] += mag
        return f

    def load_nodes(self, mesh: Mesh) -> np.ndarray:
        return np.unique([dof // mesh.dof_per_node for dof, mag in self.loads if mag != 0.0]).astype(int)

    def fixed_nodes(self, mesh: Mesh) -> np.ndarray:
        return np.unique(self.fixed_dofs // mesh.dof_per_node)


def constitutive_matrix(dim: int, poisson_ratio: float = POISSON, youngs: float = 1.0) -> np.ndarray:
    """Plane-stress (dim=2) or 3D isotropic elasticity matrix, engineering shear strains."""
    nu = poisson_ratio
    if dim == 2:
        return youngs / (1 - nu**2) * np.array(
            [[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]]
        )
    lam = youngs * nu / ((1 + nu) * (1 - 2 * nu))
    mu = youngs / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[:3, :3] += 2 * mu * np.eye(3)
    D[3:, 3:] = mu * np.eye(3)
    return D


def strain_displacement(dim: int, xi) -> np.ndarray:
    """B matrix of the unit element at natural coordinates ``xi``.

    Strain order is (xx, yy, xy) in 2D and (xx, yy, zz, xy, yz, zx) in 3D.
    """
    xi = np.asarray(xi, dtype=float)
    corners = _NODES_2D if dim == 2 else _NODES_3D
    # dN/dxi for trilinear/bilinear shape functions; unit element => dx = dxi / 2
    terms = 1 + corners * xi[None, :]
    dN = np.empty((len(corners), dim))
    for a in range(dim):
        others = np.prod(np.delete(terms, a, axis=1), axis=1)
        dN[:, a] = corners[:, a] * others / 2**dim
    dN *= 2.0
    n = len(corners)
    if dim == 2:
        B = np.zeros((3, 2 * n))
        B[0, 0::2] = dN[:, 0]
        B[1, 1::2] = dN[:, 1]
        B[2, 0::2] = dN[:, 1]
        B[2, 1::2] = dN[:, 0]
        return B
    B = np.zeros((6, 3 * n))
    B[0, 0::3] = dN[:, 0]
    B[1, 1::3] = dN[:, 1]
    B[2, 2::3] = dN[:, 2]
    B[3, 0::3] = dN[:, 1]
    B[3, 1::3] = dN[:, 0]
    B[4, 1::3] = dN[:, 2]
    B[4, 2::3] = dN[:, 1]
    B[5, 0::3] = dN[:, 2]
    B[5, 2::3] = dN[:, 0]
    return B


@lru_cache(maxsize=8)
def _element_stiffness(dim: int, nu: float) -> np.ndarray:
    D = constitutive_matrix(dim, nu)
    g = 1 / np.sqrt(3)
    # unit element: det(J) = (1/2)^dim, Gauss weights all 1
    detJ = 0.5**dim
    K = np.zeros((dim * 2**dim,) * 2)
    for xi in itertools.product((-g, g), repeat=dim):
        B = strain_displacement(dim, xi)
        K += B.T @ D @ B * detJ
    K = (K + K.T) / 2
    K.setflags(write=False)
    return K


def element_stiffness(dim: int, poisson_ratio: float = POISSON) -> np.ndarray:
    """Unit-modulus stiffness of a unit quad (8x8) or hexahedron (24x24)."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if not 0.0 <= poisson_ratio < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {poisson_ratio}")
    return _element_stiffness(dim, float(poisson_ratio))


def youngs_modulus(densities, penal, E0=E0, Emin=EMIN) -> np.ndarray:
    return Emin + np.asarray(densities, dtype=float) ** penal * (E0 - Emin)


class StiffnessSystem:
    """Assembly and solution for one mesh/BC pair; reuses sparsity indices.

    Parameters
    ----------
    solver : {"direct", "cg", "dense"}
        Sparse LU, Jacobi-preconditioned CG (rtol 1e-8, maxiter 10 n_dof), or
        dense Cholesky-free ``numpy.linalg.solve`` for small systems.
    """

    def __init__(self, mesh: Mesh, bc: BoundaryConditions, poisson_ratio: float = POISSON,
                 solver: str = "direct"):
        bc.validate(mesh)
        if solver not in ("direct", "cg", "dense"):
            raise ValueError(f"unknown solver {solver!r}")
        self.mesh = mesh
        self.bc = bc
        self.solver = solver
        self.KE = element_stiffness(mesh.ndim, poisson_ratio)
        edofs = mesh.element_dofs
        ndof_e = edofs.shape[1]
        self._rows = np.repeat(edofs, ndof_e, axis=1).ravel()
        self._cols = np.tile(edofs, (1, ndof_e)).ravel()
        self.free = np.setdiff1d(np.arange(mesh.n_dofs), bc.fixed_dofs)
        self.f = bc.force_vector(mesh)

    def stiffness(self, moduli: np.ndarray) -> sp.csc_matrix:
        vals = (self.KE.ravel()[None, :] * moduli[:, None]).ravel()
        n = self.mesh.n_dofs
        K = sp.coo_matrix((vals, (self._rows, self._cols)), shape=(n, n)).tocsc()
        return K

    def solve(self, moduli: np.ndarray) -> tuple[np.ndarray, float]:
        """Displacements and compliance ``f.u`` for per-element moduli."""
        moduli = np.asarray(moduli, dtype=float)
        if moduli.shape != (self.mesh.n_elements,):
            raise ValueError("moduli length must equal the element count")
        u = np.zeros(self.mesh.n_dofs)
        f_free = self.f[self.free]
        if not np.any(f_free):
            return u, 0.0
        K = self.stiffness(moduli)
        Kff = K[self.free][:, self.free]
        u_free = self._linear_solve(Kff, f_free)
        if not np.all(np.isfinite(u_free)):
            raise SingularSystemError("linear solve produced non-finite displacements; check supports")
        r = np.linalg.norm(Kff @ u_free - f_free)
        fnorm = np.linalg.norm(f_free)
        # normwise backward error; near-void regions can carry displacements so
        # large that |Ku - f| / |f| sits above 1e-8 purely from rounding
        backward = r / (spla.norm(Kff, 1) * np.linalg.norm(u_free, 1) + fnorm)
        self.last_residual = r / fnorm
        if not (self.last_residual <= RESIDUAL_TOL or backward <= BACKWARD_TOL):
            raise SingularSystemError(
                f"linear solve failed (relative residual {self.last_residual:.3e}); check supports"
            )
        u[self.free] = u_free
        c = float(self.f @ u)
        # K is SPD when supports suppress rigid motion, so f.u > 0 for any nonzero load
        if not c > 0:
            raise SingularSystemError(f"non-positive compliance {c:.3e}; structure is a mechanism")
        return u, c

    def _linear_solve(self, Kff, f_free):
        if self.solver == "dense":
            try:
                return np.linalg.solve(Kff.toarray(), f_free)
            except np.linalg.LinAlgError as exc:
                raise SingularSystemError(str(exc)) from exc
        if self.solver == "cg":
            diag = Kff.diagonal()
            if np.any(diag <= 0):
                raise SingularSystemError("non-positive stiffness diagonal")
            M = sp.diags(1.0 / diag)
            x, info = spla.cg(Kff, f_free, rtol=1e-8, maxiter=10 * len(f_free), M=M)
            if info != 0:
                raise FEAError(f"CG did not converge (info={info})")
            return x
        # hexahedral meshes factor about twice as fast with a symmetric ordering
        kw = {"permc_spec": "MMD_AT_PLUS_A", "options": {"SymmetricMode": True}} if self.mesh.ndim == 3 else {}
        try:
            lu = spla.splu(Kff.tocsc(), **kw)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        x = lu.solve(f_free)
        # iterative refinement; the SIMP modulus contrast makes K badly conditioned
        fnorm = np.linalg.norm(f_free)
        for _ in range(3):
            r = f_free - Kff @ x
            if np.linalg.norm(r) <= 1e-12 * fnorm:
                break
            x += lu.solve(r)
        return x

    def element_energy(self, u: np.ndarray) -> np.ndarray:
        """Per-element ``u_e^T K_e^0 u_e``."""
        ue = u[self.mesh.element_dofs]
        # K_e^0 is PSD; rounding on large rigid-body motions can dip below zero
        return np.maximum(np.einsum("ij,jk,ik->i", ue, self.KE, ue), 0.0)


def assemble_solve(mesh: Mesh, bc: BoundaryConditions, densities, penal: float,
                   E0: float = E0, Emin: float = EMIN, solver: str = "direct",
                   poisson_ratio: float = POISSON) -> tuple[np.ndarray, float]:
    """Solve ``K(rho) u = f`` with ``K_e = (Emin + rho^p (E0 - Emin)) K_e^0``."""
    rho = np.asarray(densities, dtype=float).ravel()
    system = StiffnessSystem(mesh, bc, poisson_ratio=poisson_ratio, solver=solver)
    return system.solve(youngs_modulus(rho, penal, E0, Emin))


@lru_cache(maxsize=4)
def centroid_B(dim: int) -> np.ndarray:
    B = strain_displacement(dim, np.zeros(dim))
    B.setflags(write=False)
    return B


def element_strain(mesh: Mesh, u, e: int) -> np.ndarray:
    """Centroid strain of element ``e`` from global displacements ``u``."""
    if not 0 <= e < mesh.n_elements:
        raise IndexError(f"element {e} out of range for {mesh.n_elements} elements")
    u = np.asarray(u, dtype=float)
    return centroid_B(mesh.ndim) @ u[mesh.element_dofs[e]]


def element_strains(mesh: Mesh, u) -> np.ndarray:
    """Centroid strains of every element, shape (n_e, 3|6)."""
    u = np.asarray(u, dtype=float)
    return u[mesh.element_dofs] @ centroid_B(mesh.ndim).T
