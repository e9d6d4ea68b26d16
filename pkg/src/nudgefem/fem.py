"""Taylor-Hood spaces on triangles and the bilinear/trilinear forms of the flow models.

Velocity lives in a component-blocked quadratic vector space (all x dofs, then all
y dofs); pressure in continuous linear functions; observations in cellwise constants.
Every form is assembled with one 7-point degree-5 quadrature rule.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from . import kernels
from .linalg import finalize
from .mesh import TriMesh


class Kind(Enum):
    VECTOR_QUADRATIC = "P2v"
    SCALAR_QUADRATIC = "P2"
    SCALAR_LINEAR = "P1"
    SCALAR_CONSTANT = "P0"


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,), sums to 1/2 (reference triangle area)

    @property
    def degree(self) -> int:
        return 5


def degree5_rule() -> QuadratureRule:
    s = np.sqrt(15.0)
    a1, b1 = (6 - s) / 21, (9 + 2 * s) / 21
    a2, b2 = (6 + s) / 21, (9 - 2 * s) / 21
    w1, w2 = (155 - s) / 1200, (155 + s) / 1200
    pts = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a1, a1, b1], [a1, b1, a1], [b1, a1, a1],
        [a2, a2, b2], [a2, b2, a2], [b2, a2, a2],
    ])
    w = np.array([9 / 40, w1, w1, w1, w2, w2, w2]) / 2.0
    return QuadratureRule(pts, w)


QUAD = degree5_rule()

# local edge k of a triangle joins local vertices _EDGE[k]
_EDGE = ((0, 1), (1, 2), (2, 0))


def basis_values(kind: Kind, lam: np.ndarray) -> np.ndarray:
    """Reference basis values at barycentric points ``lam`` (..., 3) -> (..., nloc)."""
    if kind is Kind.SCALAR_CONSTANT:
        return np.ones(lam.shape[:-1] + (1,))
    if kind is Kind.SCALAR_LINEAR:
        return lam.copy()
    vert = lam * (2.0 * lam - 1.0)
    edge = np.stack([4.0 * lam[..., i] * lam[..., j] for i, j in _EDGE], axis=-1)
    return np.concatenate([vert, edge], axis=-1)


def basis_grad_coeffs(kind: Kind, lam: np.ndarray) -> np.ndarray:
    """d(phi_i)/d(lambda_k) at barycentric points: (..., nloc, 3)."""
    shape = lam.shape[:-1]
    if kind is Kind.SCALAR_CONSTANT:
        return np.zeros(shape + (1, 3))
    if kind is Kind.SCALAR_LINEAR:
        return np.broadcast_to(np.eye(3), shape + (3, 3)).copy()
    out = np.zeros(shape + (6, 3))
    for i in range(3):
        out[..., i, i] = 4.0 * lam[..., i] - 1.0
    for k, (i, j) in enumerate(_EDGE):
        out[..., 3 + k, i] = 4.0 * lam[..., j]
        out[..., 3 + k, j] = 4.0 * lam[..., i]
    return out


@dataclass(eq=False)
class Geometry:
    """Per-element affine map data for a mesh."""

    mesh: TriMesh
    det: np.ndarray  # (E,) = 2 |T|
    grad_lam: np.ndarray  # (E, 3, 2)
    qweights: np.ndarray  # (E, Q) physical quadrature weights
    qpoints: np.ndarray  # (E, Q, 2) physical quadrature points

    @classmethod
    def of(cls, mesh: TriMesh) -> "Geometry":
        if "geometry" in mesh._cache:
            return mesh._cache["geometry"]
        p = mesh.vertices[mesh.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        # rows of J^{-T}: gradients of lambda_1, lambda_2
        g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
        grad_lam = np.stack([-g1 - g2, g1, g2], axis=1)
        qw = det[:, None] * QUAD.weights[None, :]
        qp = np.einsum("qk,ekd->eqd", QUAD.points, p)
        geo = cls(mesh, det, grad_lam, qw, qp)
        mesh._cache["geometry"] = geo
        return geo


class FeSpace:
    """A discrete space on a TriMesh.

    ``dof_map`` holds scalar dofs per triangle; the vector space repeats them per
    component with an offset of ``n_scalar``.
    """

    def __init__(self, mesh: TriMesh, kind: Kind):
        self.mesh = mesh
        self.kind = kind
        self.ncomp = 2 if kind is Kind.VECTOR_QUADRATIC else 1
        self.scalar_kind = Kind.SCALAR_QUADRATIC if kind is Kind.VECTOR_QUADRATIC else kind
        nv = mesh.n_vertices
        if self.scalar_kind is Kind.SCALAR_QUADRATIC:
            edges, tri_edges = mesh.edges()
            self.dof_map = np.hstack([mesh.triangles, nv + tri_edges])
            mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.nodes = np.vstack([mesh.vertices, mid])
            bedge = _edge_ids(edges, mesh.boundary_edges)
            bnodes = np.concatenate([mesh.boundary_vertices(), nv + bedge])
        elif self.scalar_kind is Kind.SCALAR_LINEAR:
            self.dof_map = mesh.triangles.copy()
            self.nodes = mesh.vertices.copy()
            bnodes = mesh.boundary_vertices()
        else:
            self.dof_map = np.arange(mesh.n_triangles)[:, None]
            self.nodes = mesh.centroids()
            bnodes = np.zeros(0, dtype=np.int64)
        self.n_scalar = len(self.nodes)
        self.n_dofs = self.ncomp * self.n_scalar
        bnodes = np.sort(bnodes)
        self.boundary_dofs = np.concatenate([bnodes + c * self.n_scalar for c in range(self.ncomp)])
        self.geometry = Geometry.of(mesh)
        self.phi = basis_values(self.scalar_kind, QUAD.points)  # (Q, nloc)
        dl = basis_grad_coeffs(self.scalar_kind, QUAD.points)  # (Q, nloc, 3)
        self.grads = np.einsum("qik,ekd->eqid", dl, self.geometry.grad_lam)  # (E, Q, nloc, 2)
        self._patterns: dict = {}

    def __repr__(self):
        return f"FeSpace({self.kind.value}, n_dofs={self.n_dofs})"

    @property
    def nloc(self) -> int:
        return self.dof_map.shape[1]

    def component_dofs(self) -> np.ndarray:
        """(E, ncomp * nloc) dof indices, component-blocked."""
        return np.hstack([self.dof_map + c * self.n_scalar for c in range(self.ncomp)])

    def interpolate(self, func) -> "FeFunction":
        """Nodal interpolant of ``func(x, y)``; vector spaces expect a pair of arrays back."""
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        vals = func(x, y)
        if self.ncomp == 2:
            c = np.concatenate([np.broadcast_to(vals[0], x.shape), np.broadcast_to(vals[1], x.shape)])
        else:
            c = np.broadcast_to(vals, x.shape)
        return FeFunction(self, np.array(c, dtype=float))

    def boundary_values(self, func) -> np.ndarray:
        return self.interpolate(func).coefficients[self.boundary_dofs]

    def zero(self) -> "FeFunction":
        return FeFunction(self, np.zeros(self.n_dofs))

    # --- quadrature-point evaluation -------------------------------------------------
    def values_at_qp(self, coef: np.ndarray) -> np.ndarray:
        """(E, Q) for scalar spaces, (E, Q, 2) for the vector space."""
        out = [coef[self.dof_map + c * self.n_scalar] @ self.phi.T for c in range(self.ncomp)]
        return out[0] if self.ncomp == 1 else np.stack(out, axis=-1)

    def grads_at_qp(self, coef: np.ndarray) -> np.ndarray:
        """(E, Q, 2) gradient for scalar spaces, (E, Q, 2, 2) Jacobian [comp, dir] for vector."""
        out = [np.einsum("eqid,ei->eqd", self.grads, coef[self.dof_map + c * self.n_scalar])
               for c in range(self.ncomp)]
        return out[0] if self.ncomp == 1 else np.stack(out, axis=-2)

    def basis_at_qp_matrix(self) -> sp.csr_matrix:
        """Sparse (E*Q, n_scalar) matrix of scalar basis values at the quadrature points."""
        if "qp_basis" not in self._patterns:
            E, Q = self.geometry.qweights.shape
            rows = np.repeat(np.arange(E * Q), self.nloc)
            cols = np.repeat(self.dof_map, Q, axis=0).ravel()
            vals = np.broadcast_to(self.phi, (E, Q, self.nloc)).ravel()
            self._patterns["qp_basis"] = finalize(
                sp.csr_matrix((vals, (rows, cols)), shape=(E * Q, self.n_scalar))
            )
        return self._patterns["qp_basis"]

    def pattern(self, other: "FeSpace" | None = None, scalar: bool = False) -> "Pattern":
        other = other or self
        key = (id(other), scalar)
        if key not in self._patterns:
            if scalar:
                rows, cols = self.dof_map, other.dof_map
                shape = (self.n_scalar, other.n_scalar)
            else:
                rows, cols = self.component_dofs(), other.component_dofs()
                shape = (self.n_dofs, other.n_dofs)
            self._patterns[key] = Pattern(rows, cols, shape)
        return self._patterns[key]


@dataclass
class FeFunction:
    space: FeSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.n_dofs,):
            raise ValueError(
                f"coefficient length {self.coefficients.shape} != n_dofs {self.space.n_dofs}"
            )

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coefficients.copy())

    def component(self, c: int) -> np.ndarray:
        n = self.space.n_scalar
        return self.coefficients[c * n:(c + 1) * n]


class Pattern:
    """Fixed CSR sparsity of an element-assembled operator.

    ``positions`` maps each local entry (e, i, j) to its slot in the CSR data array so
    repeated assembly on the same pattern is a single scatter-add.
    """

    def __init__(self, row_dofs: np.ndarray, col_dofs: np.ndarray, shape):
        E, a = row_dofs.shape
        b = col_dofs.shape[1]
        rows = np.repeat(row_dofs, b, axis=1).ravel()
        cols = np.tile(col_dofs, (1, a)).ravel()
        keys = rows.astype(np.int64) * shape[1] + cols
        ukeys, inverse = np.unique(keys, return_inverse=True)
        self.shape = tuple(shape)
        self.local_shape = (E, a, b)
        self.positions = inverse.astype(np.int64)
        self.indices = (ukeys % shape[1]).astype(np.int32)
        urows = ukeys // shape[1]
        self.indptr = np.zeros(shape[0] + 1, dtype=np.int32)
        np.cumsum(np.bincount(urows, minlength=shape[0]), out=self.indptr[1:])
        self.nnz = len(ukeys)

    def data(self, local: np.ndarray) -> np.ndarray:
        if local.shape != self.local_shape:
            raise ValueError(f"local matrices {local.shape} != {self.local_shape}")
        return kernels.scatter_add(self.positions, local.ravel(), self.nnz)

    def matrix(self, local: np.ndarray, keep_zeros: bool = False) -> sp.csr_matrix:
        A = sp.csr_matrix((self.data(local), self.indices.copy(), self.indptr.copy()), shape=self.shape)
        A.has_sorted_indices = True
        return A if keep_zeros else finalize(A)


def _edge_ids(edges: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    n = edges.max() + 1
    keys = edges[:, 0] * n + edges[:, 1]
    p = np.sort(pairs, axis=1)
    idx = np.searchsorted(keys, p[:, 0] * n + p[:, 1])
    if np.any(keys[idx] != p[:, 0] * n + p[:, 1]):
        raise ValueError("boundary edge not found among mesh edges")
    return idx


def _blockdiag_local(local: np.ndarray, ncomp: int) -> np.ndarray:
    if ncomp == 1:
        return local
    E, a, b = local.shape
    out = np.zeros((E, ncomp * a, ncomp * b))
    for c in range(ncomp):
        out[:, c * a:(c + 1) * a, c * b:(c + 1) * b] = local
    return out


# --- local element matrices ---------------------------------------------------------
def mass_local(s: FeSpace) -> np.ndarray:
    W = s.geometry.qweights
    return np.einsum("eq,qi,qj->eij", W, s.phi, s.phi)


def stiffness_local(s: FeSpace) -> np.ndarray:
    W = s.geometry.qweights
    return np.einsum("eq,eqid,eqjd->eij", W, s.grads, s.grads)


def grad_div_local(s: FeSpace) -> np.ndarray:
    W = s.geometry.qweights
    d = np.concatenate([s.grads[..., 0], s.grads[..., 1]], axis=-1)  # (E,Q,12): div of each basis
    return np.einsum("eq,eqi,eqj->eij", W, d, d)


def divergence_local(v: FeSpace, p: FeSpace) -> np.ndarray:
    W = v.geometry.qweights
    d = np.concatenate([v.grads[..., 0], v.grads[..., 1]], axis=-1)
    return np.einsum("eq,qr,eqj->erj", W, p.phi, d)


def convection_local_scalar(w: FeFunction, s: FeSpace) -> np.ndarray:
    """Per-component b*(w, ., .) element matrices on the scalar quadratic basis."""
    W = s.geometry.qweights
    wq = w.space.values_at_qp(w.coefficients)
    X = kernels.advection_local(s.phi, s.grads, wq, W)
    return 0.5 * (X - X.transpose(0, 2, 1))


# --- public assembly operations -------------------------------------------------------
def assemble_mass(s: FeSpace) -> sp.csr_matrix:
    return s.pattern().matrix(_blockdiag_local(mass_local(s), s.ncomp))


def assemble_stiffness(s: FeSpace) -> sp.csr_matrix:
    return s.pattern().matrix(_blockdiag_local(stiffness_local(s), s.ncomp))


def assemble_divergence(v_space: FeSpace, p_space: FeSpace) -> sp.csr_matrix:
    """B[i, j] = integral of r_i div(phi_j); rows pressure, columns velocity."""
    _require_vector(v_space)
    return p_space.pattern(v_space).matrix(divergence_local(v_space, p_space))


def assemble_grad_div(v_space: FeSpace) -> sp.csr_matrix:
    _require_vector(v_space)
    return v_space.pattern().matrix(grad_div_local(v_space))


def assemble_convection(w: FeFunction, v_space: FeSpace) -> sp.csr_matrix:
    """N(w) with (N(w) v, z) = b*(w, v, z) = 1/2 (w.grad v, z) - 1/2 (w.grad z, v)."""
    _require_vector(w.space)
    if w.space.mesh is not v_space.mesh:
        raise ValueError("advecting field and space live on different meshes")
    local = convection_local_scalar(w, v_space)
    return v_space.pattern().matrix(_blockdiag_local(local, v_space.ncomp))


def assemble_scalar_convection(w: FeFunction, p_space: FeSpace) -> sp.csr_matrix:
    """T(w) with (T(w) p, r) = (w . grad p, r)."""
    _require_vector(w.space)
    local = scalar_convection_local(w, p_space)
    return p_space.pattern().matrix(local)


def scalar_convection_local(w: FeFunction, p_space: FeSpace) -> np.ndarray:
    wq = w.space.values_at_qp(w.coefficients)
    return kernels.advection_local(p_space.phi, p_space.grads, wq, p_space.geometry.qweights)


def assemble_load(s: FeSpace, values: np.ndarray) -> np.ndarray:
    """Load vector (f, phi_i) from f sampled at quadrature points.

    ``values`` is (E, Q) for scalar spaces and (E, Q, 2) for the vector space.
    """
    W = s.geometry.qweights
    out = np.zeros(s.n_dofs)
    vals = values if s.ncomp == 2 else values[..., None]
    for c in range(s.ncomp):
        loc = (W * vals[..., c]) @ s.phi
        out[c * s.n_scalar:(c + 1) * s.n_scalar] = np.bincount(
            s.dof_map.ravel(), weights=loc.ravel(), minlength=s.n_scalar
        )
    return out


def integrate(s: FeSpace | TriMesh, values: np.ndarray) -> float:
    geo = Geometry.of(s if isinstance(s, TriMesh) else s.mesh)
    return float(np.sum(geo.qweights * values))


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, bdofs, values):
    """Replace constrained rows by identity rows, eliminating the columns into the rhs.

    Returns a new ``(A, b)``; symmetric input stays symmetric.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    bdofs = np.asarray(bdofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), bdofs.shape)
    if bdofs.size and (bdofs.min() < 0 or bdofs.max() >= n):
        raise IndexError("boundary dof index out of range")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite boundary values")
    g = np.zeros(n)
    g[bdofs] = values
    rhs = np.asarray(b, dtype=float) - A @ g
    free = np.ones(n)
    free[bdofs] = 0.0
    D = sp.diags(free)
    A2 = finalize(sp.csr_matrix(D @ A @ D + sp.diags(1.0 - free)))
    rhs[bdofs] = values
    return A2, rhs


def evaluate(f: FeFunction, tri, bary) -> np.ndarray:
    """Evaluate ``f`` at points given as triangle ids and barycentric coordinates.

    Returns shape (npts,) for scalar spaces, (npts, 2) for the vector space.
    """
    s = f.space
    tri = np.atleast_1d(np.asarray(tri, dtype=np.int64))
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    phi = basis_values(s.scalar_kind, bary)  # (npts, nloc)
    dofs = s.dof_map[tri]
    out = [np.einsum("pi,pi->p", phi, f.coefficients[dofs + c * s.n_scalar]) for c in range(s.ncomp)]
    return out[0] if s.ncomp == 1 else np.stack(out, axis=-1)


def evaluation_matrix(s: FeSpace, tri, bary) -> sp.csr_matrix:
    """Sparse (npts, n_scalar) matrix so that ``E @ coef_component`` evaluates at the points."""
    tri = np.asarray(tri, dtype=np.int64)
    phi = basis_values(s.scalar_kind, np.asarray(bary, dtype=float))
    rows = np.repeat(np.arange(len(tri)), s.nloc)
    return finalize(sp.csr_matrix((phi.ravel(), (rows, s.dof_map[tri].ravel())),
                                  shape=(len(tri), s.n_scalar)))


def _require_vector(s: FeSpace):
    if s.kind is not Kind.VECTOR_QUADRATIC:
        raise ValueError(f"expected the quadratic vector space, got {s.kind}")


def taylor_hood(mesh: TriMesh) -> tuple[FeSpace, FeSpace]:
    return FeSpace(mesh, Kind.VECTOR_QUADRATIC), FeSpace(mesh, Kind.SCALAR_LINEAR)
