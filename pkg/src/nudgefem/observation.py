"""Coarse-grain observation operators and truth transfer onto the assimilation mesh.

Two realisations of I_H are provided:

* :class:`ObsOperator` - L2 projection onto functions constant on observation cells
  (a Cartesian grid of size H, or the triangles of a mesh). All integrals use the
  assimilation mesh quadrature: each quadrature point belongs to exactly one cell, so
  cell measures are quadrature-consistent and constants are reproduced exactly.
* :class:`NodalInterpolation` - Lagrange interpolation onto the assimilation spaces
  themselves (H = mesh width). It is the identity on the discrete model state.

Every operator names the points at which it needs observed values
(:meth:`points`) and turns values there into loads (:meth:`load`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import FeSpace, Geometry
from .linalg import finalize
from .mesh import TriMesh


class MissingObservation(LookupError):
    pass


class ObsGrid:
    """Uniform axis-aligned partition of the domain box into cells of size ~H."""

    kind = "cartesian"

    def __init__(self, H: float, box):
        if not H > 0:
            raise ValueError(f"H must be positive, got {H}")
        x0, x1, y0, y1 = map(float, box)
        self.box = (x0, x1, y0, y1)
        self.H = float(H)
        # tolerate round-off when H divides the box exactly
        self.nx = max(1, math.ceil((x1 - x0) / H - 1e-9))
        self.ny = max(1, math.ceil((y1 - y0) / H - 1e-9))
        self.dx = (x1 - x0) / self.nx
        self.dy = (y1 - y0) / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_of(self, pts: np.ndarray) -> np.ndarray:
        """Floor-index cell of each point; points on a shared face go to the upper cell."""
        x0, _, y0, _ = self.box
        ix = np.clip(np.floor((pts[..., 0] - x0) / self.dx).astype(np.int64), 0, self.nx - 1)
        iy = np.clip(np.floor((pts[..., 1] - y0) / self.dy).astype(np.int64), 0, self.ny - 1)
        return ix + self.nx * iy

    def __repr__(self):
        return f"ObsGrid(H={self.H:g}, cells={self.nx}x{self.ny})"


class MeshCells:
    """Observation cells given by the triangles of a mesh (H = its mesh width)."""

    kind = "mesh"

    def __init__(self, mesh: TriMesh, H: float | None = None):
        self.mesh = mesh
        x0, x1, _, _ = mesh.domain_box
        self.H = H if H is not None else (x1 - x0) / mesh.bins_per_side[0]
        self.box = mesh.domain_box

    @property
    def n_cells(self) -> int:
        return self.mesh.n_triangles

    def cell_of(self, pts: np.ndarray) -> np.ndarray:
        shape = pts.shape[:-1]
        tri, _ = self.mesh.locate(pts.reshape(-1, 2))
        return tri.reshape(shape)

    def __repr__(self):
        return f"MeshCells(H={self.H:g}, cells={self.n_cells})"


def make_grid(kind: str, H: float, mesh: TriMesh):
    if kind == "cartesian":
        return ObsGrid(H, mesh.domain_box)
    if kind == "mesh":
        return MeshCells(mesh, H)
    raise ValueError(f"unknown observation grid kind {kind!r}")


OBS_KINDS = ("cartesian", "mesh", "nodal")


def make_operator(kind: str, H: float, mesh: TriMesh):
    """Observation operator of the given kind on the assimilation mesh."""
    if kind == "nodal":
        return NodalInterpolation(mesh, H)
    return ObsOperator(make_grid(kind, H, mesh), mesh)


class ObsOperator:
    """I_H realised on the quadrature of an assimilation mesh.

    Attributes
    ----------
    P : (n_cells, n_qp) sparse, quadrature weights grouped by cell
    areas : cell measures (quadrature-consistent)
    """

    def __init__(self, grid, mesh: TriMesh):
        self.grid = grid
        self.mesh = mesh
        geo = Geometry.of(mesh)
        if isinstance(grid, MeshCells) and grid.mesh is mesh:
            cells = np.repeat(np.arange(mesh.n_triangles), geo.qweights.shape[1])
        else:
            cells = grid.cell_of(geo.qpoints).ravel()
        self.cells = cells
        G = cells.size
        self.P = finalize(sp.csr_matrix((geo.qweights.ravel(), (cells, np.arange(G))),
                                        shape=(grid.n_cells, G)))
        self.areas = np.asarray(self.P.sum(axis=1)).ravel()
        self.area_inv = np.divide(1.0, self.areas, out=np.zeros_like(self.areas), where=self.areas > 0)
        self._B: dict = {}

    @property
    def H(self) -> float:
        return self.grid.H

    @property
    def kind(self) -> str:
        return self.grid.kind

    def points(self, s: FeSpace) -> np.ndarray:
        """Where observed values are needed: the assimilation quadrature points, (E*Q, 2)."""
        return Geometry.of(self.mesh).qpoints.reshape(-1, 2)

    def cell_means(self, qp_values: np.ndarray) -> np.ndarray:
        """Cell averages of a field sampled at quadrature points: (E,Q) or (E,Q,2)."""
        v = np.asarray(qp_values)
        if v.ndim == 3:
            flat = v.reshape(-1, v.shape[-1])
            return (self.P @ flat) * self.area_inv[:, None]
        return (self.P @ v.ravel()) * self.area_inv

    def basis_integrals(self, s: FeSpace) -> sp.csr_matrix:
        """B[c, j] = integral over cell c of the scalar basis function j."""
        key = id(s)
        if key not in self._B:
            if s.mesh is not self.mesh:
                raise ValueError("space is not on the assimilation mesh")
            self._B[key] = finalize(self.P @ s.basis_at_qp_matrix())
        return self._B[key]

    def coupling(self, s: FeSpace) -> sp.csr_matrix:
        """S[i, j] = (I_H phi_j, phi_i), block-diagonal over vector components."""
        B = self.basis_integrals(s)
        S = finalize(B.T @ sp.diags(self.area_inv) @ B)
        if s.ncomp == 2:
            S = finalize(sp.block_diag([S, S]))
        return S

    def coupling_factor(self, s: FeSpace) -> tuple[sp.csr_matrix, np.ndarray]:
        """``(L, w)`` with ``coupling(s) = L.T @ diag(1 / w) @ L``; empty cells dropped."""
        B = self.basis_integrals(s)
        keep = np.flatnonzero(self.areas > 0)
        L, w = B[keep], self.areas[keep]
        if s.ncomp == 2:
            L, w = sp.block_diag([L, L]), np.concatenate([w, w])
        return finalize(L), w

    def coupling_nnz(self, s: FeSpace) -> int:
        """Nonzeros of the explicit coupling (upper bound; each cell couples all its dofs)."""
        k = np.diff(self.basis_integrals(s).indptr)
        return int(np.sum(k.astype(np.int64) ** 2)) * s.ncomp

    def load(self, s: FeSpace, qp_values: np.ndarray) -> np.ndarray:
        """(I_H f, phi_i) for f sampled at :meth:`points` (flat or (E, Q[, 2]))."""
        B = self.basis_integrals(s)
        v = np.asarray(qp_values, dtype=float)
        if v.ndim == 1 or (v.ndim == 2 and v.shape[-1] == 2 and s.ncomp == 2):
            v = v.reshape(Geometry.of(self.mesh).qweights.shape + v.shape[1:])
        means = self.cell_means(v)
        if s.ncomp == 2:
            return np.concatenate([B.T @ means[:, 0], B.T @ means[:, 1]])
        return B.T @ means

    def apply(self, f: fem.FeFunction) -> np.ndarray:
        """Cell values of I_H f."""
        return self.cell_means(f.space.values_at_qp(f.coefficients))

    def projected_qp(self, qp_values: np.ndarray) -> np.ndarray:
        """I_H f evaluated at the quadrature points, for scalar f sampled there."""
        v = np.asarray(qp_values, dtype=float)
        return self.cell_means(v)[self.cells].reshape(v.shape)


class NodalInterpolation:
    """I_H as nodal interpolation onto the assimilation spaces (H is the mesh width).

    On the discrete state I_H is the identity, so the coupling matrix is the mass
    matrix and the load is the mass matrix applied to the interpolant of the data.
    """

    kind = "nodal"

    def __init__(self, mesh: TriMesh, H: float | None = None):
        self.mesh = mesh
        x0, x1, _, _ = mesh.domain_box
        self.H = float(H) if H is not None else (x1 - x0) / mesh.bins_per_side[0]
        self._M: dict = {}

    def __repr__(self):
        return f"NodalInterpolation(H={self.H:g})"

    def points(self, s: FeSpace) -> np.ndarray:
        return s.nodes

    def _mass(self, s: FeSpace) -> sp.csr_matrix:
        if s.mesh is not self.mesh:
            raise ValueError("space is not on the assimilation mesh")
        if id(s) not in self._M:
            self._M[id(s)] = fem.assemble_mass(s)
        return self._M[id(s)]

    def coupling(self, s: FeSpace) -> sp.csr_matrix:
        return self._mass(s)

    def load(self, s: FeSpace, node_values: np.ndarray) -> np.ndarray:
        v = np.asarray(node_values, dtype=float)
        coef = np.concatenate([v[:, 0], v[:, 1]]) if s.ncomp == 2 else v.ravel()
        return self._mass(s) @ coef

    def apply(self, f: fem.FeFunction) -> np.ndarray:
        return f.coefficients.copy()

    def projected_qp(self, qp_values: np.ndarray, f=None) -> np.ndarray:
        raise NotImplementedError("nodal interpolation needs point values, not quadrature data")


def project_p0(f, grid, mesh: TriMesh) -> np.ndarray:
    """Cell averages of ``f(x, y)`` using the quadrature of ``mesh``."""
    op = grid if isinstance(grid, ObsOperator) else ObsOperator(grid, mesh)
    geo = Geometry.of(mesh)
    vals = f(geo.qpoints[..., 0], geo.qpoints[..., 1])
    if isinstance(vals, tuple):
        vals = np.stack(vals, axis=-1)
    return op.cell_means(np.broadcast_to(vals, geo.qweights.shape + np.shape(vals)[2:]))


def a1_ratio(f, grad_f, op) -> float:
    """||f - I_H f|| / (H ||grad f||) for a scalar field with known gradient."""
    geo = Geometry.of(op.mesh)
    x, y = geo.qpoints[..., 0], geo.qpoints[..., 1]
    fv = np.broadcast_to(f(x, y), x.shape).astype(float)
    if isinstance(op, NodalInterpolation):
        P1 = FeSpace(op.mesh, fem.Kind.SCALAR_LINEAR)
        proj = P1.values_at_qp(P1.interpolate(f).coefficients)
    else:
        proj = op.projected_qp(fv)
    err = np.sqrt(np.sum(geo.qweights * (fv - proj) ** 2))
    gx, gy = grad_f(x, y)
    gnorm = np.sqrt(np.sum(geo.qweights * (np.asarray(gx) ** 2 + np.asarray(gy) ** 2)))
    return float(err / (op.H * gnorm))


@dataclass
class LowRankTerm:
    """The matrix ``coef * L.T @ diag(1 / w) @ L`` kept in factored form.

    A solver adds one unknown per row of ``L``, the cell mean ``m = L x / w``,
    with the constraint rows ``L x - w m = 0`` and the term ``coef * L.T @ m``.
    This avoids the dense cell-by-cell coupling of coarse observation grids.
    """

    L: sp.csr_matrix
    w: np.ndarray
    coef: float

    def dense(self) -> sp.csr_matrix:
        return finalize(self.coef * (self.L.T @ sp.diags(1.0 / self.w) @ self.L))


@dataclass
class NudgingBlocks:
    """Matrix contributions and load builders of the nudging terms.

    The full velocity block is ``velocity_matrix`` plus ``velocity_low_rank`` (when
    set), and likewise for pressure.
    """

    chi: float
    mu1: float
    mu2: float
    velocity_matrix: sp.csr_matrix  # chi * S_v
    pressure_matrix: sp.csr_matrix  # mu1 * S_p + mu2 * (M_p - S_p)
    op: "ObsOperator | NodalInterpolation"
    v_space: FeSpace
    p_space: FeSpace
    velocity_low_rank: LowRankTerm | None = None
    pressure_low_rank: LowRankTerm | None = None

    @property
    def low_rank_terms(self) -> list[tuple[str, LowRankTerm]]:
        out = [("v", self.velocity_low_rank), ("p", self.pressure_low_rank)]
        return [(k, t) for k, t in out if t is not None]

    def total_velocity_matrix(self) -> sp.csr_matrix:
        A = self.velocity_matrix
        return A if self.velocity_low_rank is None else finalize(A + self.velocity_low_rank.dense())

    def total_pressure_matrix(self) -> sp.csr_matrix:
        A = self.pressure_matrix
        return A if self.pressure_low_rank is None else finalize(A + self.pressure_low_rank.dense())

    def velocity_load(self, u_obs: np.ndarray) -> np.ndarray:
        """chi (I_H u_obs, w_i) from velocity values at ``op.points(v_space)``."""
        if self.chi == 0.0:
            return np.zeros(self.v_space.n_dofs)
        return self.chi * self.op.load(self.v_space, u_obs)

    def pressure_load(self, p_obs: np.ndarray) -> np.ndarray:
        """mu1 (I_H p_obs, r_i) from pressure values at ``op.points(p_space)``."""
        if self.mu1 == 0.0:
            return np.zeros(self.p_space.n_dofs)
        return self.mu1 * self.op.load(self.p_space, p_obs)

    @property
    def pressure_singular(self) -> bool:
        # with mu1 = 0 the pressure block annihilates constants
        return self.mu1 == 0.0


# explicit coupling is kept while its nonzeros stay within this multiple of the mass matrix
FACTOR_THRESHOLD = 4.0


def _use_factored(op, s: FeSpace, factored: bool | None) -> bool:
    if not hasattr(op, "coupling_factor"):
        return False
    if factored is not None:
        return factored
    return op.coupling_nnz(s) > FACTOR_THRESHOLD * fem.assemble_mass(s).nnz


def assemble_nudging_blocks(op, v_space: FeSpace, p_space: FeSpace,
                            chi: float, mu1: float, mu2: float,
                            factored: bool | None = None) -> NudgingBlocks:
    """Velocity block chi*S_v and pressure block mu1*S_p + mu2*(M_p - S_p).

    Continuity reads (div v, r) + (mu1 I_H q + mu2 (q - I_H q), r) = mu1 (I_H p_obs, r),
    which damps q toward I_H p_obs.

    ``factored`` keeps the S terms as :class:`LowRankTerm` instead of assembling them.
    The default decides per space from the size of the explicit coupling.
    """
    for name, val in (("chi", chi), ("mu1", mu1), ("mu2", mu2)):
        if val < 0 or not np.isfinite(val):
            raise ValueError(f"nudging parameter {name} must be finite and >= 0, got {val}")
    nv, np_ = v_space.n_dofs, p_space.n_dofs
    Av, lr_v = sp.csr_matrix((nv, nv)), None
    if chi > 0:
        if _use_factored(op, v_space, factored):
            lr_v = LowRankTerm(*op.coupling_factor(v_space), float(chi))
        else:
            Av = chi * op.coupling(v_space)
    Cp, lr_p = sp.csr_matrix((np_, np_)), None
    if mu1 > 0 or mu2 > 0:
        # mu1 S + mu2 (M - S) = mu2 M + (mu1 - mu2) S
        if _use_factored(op, p_space, factored):
            Cp = mu2 * fem.assemble_mass(p_space)
            if mu1 != mu2:
                lr_p = LowRankTerm(*op.coupling_factor(p_space), float(mu1 - mu2))
        else:
            Sp = op.coupling(p_space)
            Cp = mu1 * Sp + mu2 * (fem.assemble_mass(p_space) - Sp)
    return NudgingBlocks(float(chi), float(mu1), float(mu2), finalize(Av), finalize(Cp), op,
                         v_space, p_space, lr_v, lr_p)


def observation_points(op, v_space: FeSpace, p_space: FeSpace):
    """Velocity and pressure observation points required by ``op``."""
    return op.points(v_space), op.points(p_space)


class AnalyticTruth:
    """Observations from closed-form fields ``u(x, y, t) -> (ux, uy)`` and ``p(x, y, t)``.

    Values are returned at ``points_v`` (N, 2) and ``points_p`` (M, 2).
    """

    def __init__(self, u, p, points_v: np.ndarray, points_p: np.ndarray | None = None):
        self.u, self.p = u, p
        self.points_v = np.asarray(points_v, dtype=float).reshape(-1, 2)
        self.points_p = self.points_v if points_p is None else np.asarray(points_p, dtype=float).reshape(-1, 2)

    def sample(self, t: float):
        x, y = self.points_v[:, 0], self.points_v[:, 1]
        ux, uy = self.u(x, y, t)
        uv = np.column_stack([np.broadcast_to(ux, x.shape), np.broadcast_to(uy, x.shape)])
        x, y = self.points_p[:, 0], self.points_p[:, 1]
        pv = np.broadcast_to(self.p(x, y, t), x.shape).astype(float)
        return uv, pv


class TruthSampler:
    """Reference trajectory stored on its own mesh and evaluated at fixed target points.

    Frames are keyed by step index ``round(t / dt)``; times off the grid or not stored
    raise :class:`MissingObservation`. Target points are located once; evaluation is
    then a sparse product per frame.
    """

    def __init__(self, v_space: FeSpace, p_space: FeSpace, dt: float,
                 points_v: np.ndarray | None = None, points_p: np.ndarray | None = None,
                 frames: dict | None = None):
        self.v_space, self.p_space = v_space, p_space
        self.dt = float(dt)
        self.frames: dict[int, tuple[np.ndarray, np.ndarray]] = {} if frames is None else frames
        self.Ev = self.Ep = None
        if points_v is not None:
            self.Ev = self._evaluation(v_space, points_v)
            self.Ep = self._evaluation(p_space, points_v if points_p is None else points_p)

    @staticmethod
    def _evaluation(space: FeSpace, pts) -> sp.csr_matrix:
        tri, bary = space.mesh.locate(np.asarray(pts, dtype=float).reshape(-1, 2))
        return fem.evaluation_matrix(space, tri, bary)

    def at(self, points_v: np.ndarray, points_p: np.ndarray | None = None) -> "TruthSampler":
        """A sampler sharing this one's frames, evaluating at other points."""
        return TruthSampler(self.v_space, self.p_space, self.dt, points_v, points_p, self.frames)

    def _key(self, t: float) -> int:
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise MissingObservation(f"t={t} is not on the stored time grid (dt={self.dt})")
        return k

    def store(self, t: float, v: np.ndarray, p: np.ndarray) -> None:
        self.frames[self._key(t)] = (np.array(v, dtype=float), np.array(p, dtype=float))

    def has(self, t: float) -> bool:
        try:
            return self._key(t) in self.frames
        except MissingObservation:
            return False

    @property
    def times(self) -> np.ndarray:
        return np.round(np.array(sorted(self.frames)) * self.dt, 12)

    def coefficients(self, t: float):
        k = self._key(t)
        if k not in self.frames:
            raise MissingObservation(f"no reference frame stored at t={t}")
        return self.frames[k]

    def sample(self, t: float):
        """Velocity (N, 2) and pressure (M,) at the target points."""
        if self.Ev is None:
            raise ValueError("sampler has no target points; use .at(points)")
        v, p = self.coefficients(t)
        n = self.v_space.n_scalar
        return np.column_stack([self.Ev @ v[:n], self.Ev @ v[n:]]), self.Ep @ p


def sample_truth(ts, t: float):
    """Truth velocity and pressure at the sampler's target points at time ``t``."""
    return ts.sample(t)
