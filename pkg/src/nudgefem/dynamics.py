"""BDF2/IMEX time stepping for the reference, nudged and free flow models.

All three models share the Taylor-Hood pair and one linear solve per step:

* reference (slightly compressible):
  momentum  BDF(u) + nu K u + nu/3 G u + N(u_hat) u - B^T p = f
  continuity  1/c^2 [BDF(p) + T(u_hat) p] + B u = 0
* nudged (incompressible with data):
  momentum  BDF(v) + nu K v + N(v_hat) v + chi S_v v - B^T q = f + chi (I_H u_obs, .)
  continuity  B v + [mu1 S_p + mu2 (M_p - S_p)] q = mu1 (I_H p_obs, .)
* free: the nudged model with chi = mu1 = mu2 = 0 and the pressure mean pinned.

``u_hat = 2 u^n - u^{n-1}``; the first step is backward Euler with ``u_hat = u^n``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import FeSpace
from .linalg import DEFAULT_TOL, LaggedSolver, SingularSystem
from .mesh import TriMesh
from .observation import AnalyticTruth, NudgingBlocks, assemble_nudging_blocks

log = logging.getLogger(__name__)


class ModelKind(Enum):
    REFERENCE = "reference"
    NUDGED = "nudged"
    FREE = "free"


@dataclass(frozen=True)
class PhysicalParams:
    nu: float
    c: float
    include_pressure_transport: bool = True
    include_grad_div: bool = True
    include_convection: bool = True

    @classmethod
    def linear(cls, nu: float, c: float) -> "PhysicalParams":
        """Linear acoustics about rest: no convection and no pressure transport."""
        return cls(nu, c, include_pressure_transport=False, include_convection=False)

    def __post_init__(self):
        if not (self.nu > 0 and self.c > 0):
            raise ValueError(f"need nu > 0 and c > 0, got nu={self.nu}, c={self.c}")


@dataclass
class NudgingParams:
    chi: float
    mu1: float
    mu2: float
    obs: object | None = None  # ObsOperator or NodalInterpolation

    def __post_init__(self):
        for name in ("chi", "mu1", "mu2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.obs is None and (self.chi > 0 or self.mu1 > 0 or self.mu2 > 0):
            raise ValueError("an observation operator is required when nudging is active")

    @property
    def active(self) -> bool:
        return self.chi > 0 or self.mu1 > 0 or self.mu2 > 0


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    T: float

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        r = self.T / self.dt
        if abs(r - round(r)) > 1e-10 * max(1.0, r):
            raise ValueError(f"T/dt = {r} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def time(self, k: int) -> float:
        return k * self.dt


@dataclass
class FluidState:
    """Velocity and pressure coefficients at time t plus the BDF2 history."""

    t: float
    v: np.ndarray
    p: np.ndarray
    v_prev: np.ndarray | None = None
    p_prev: np.ndarray | None = None

    def copy(self) -> "FluidState":
        return FluidState(self.t, self.v.copy(), self.p.copy(),
                          None if self.v_prev is None else self.v_prev.copy(),
                          None if self.p_prev is None else self.p_prev.copy())


# --- manufactured solutions ------------------------------------------------------------
@dataclass
class ManufacturedCase:
    """Closed-form velocity/pressure pair with all derivatives the forcing needs.

    Every callable takes ``(x, y, t)``. Vector fields return tuples of components;
    ``grad_u`` returns ((du1/dx, du1/dy), (du2/dx, du2/dy)).
    """

    name: str
    u: Callable
    u_t: Callable
    grad_u: Callable
    lap_u: Callable
    grad_div_u: Callable
    p: Callable
    p_t: Callable
    grad_p: Callable
    params: dict = field(default_factory=dict)
    include_pressure_transport: bool = True

    def forcing(self, x, y, t, nu: float, grad_div: bool = True):
        """f = u_t + (u.grad)u + 1/2 (div u) u - nu lap u - nu/3 grad div u + grad p."""
        u1, u2 = self.u(x, y, t)
        (a, b), (c, d) = self.grad_u(x, y, t)
        ut1, ut2 = self.u_t(x, y, t)
        l1, l2 = self.lap_u(x, y, t)
        g1, g2 = self.grad_div_u(x, y, t)
        px, py = self.grad_p(x, y, t)
        div = a + d
        k = nu / 3.0 if grad_div else 0.0
        f1 = ut1 + u1 * a + u2 * b + 0.5 * div * u1 - nu * l1 - k * g1 + px
        f2 = ut2 + u1 * c + u2 * d + 0.5 * div * u2 - nu * l2 - k * g2 + py
        return f1, f2

    def continuity_residual(self, x, y, t, c: float):
        """1/c^2 (p_t + [u.grad p]) + div u; zero for a consistent case."""
        u1, u2 = self.u(x, y, t)
        (a, _), (_, d) = self.grad_u(x, y, t)
        px, py = self.grad_p(x, y, t)
        adv = u1 * px + u2 * py if self.include_pressure_transport else 0.0
        return (self.p_t(x, y, t) + adv) / c**2 + a + d


def forcing_eval(case: ManufacturedCase, x, t, nu: float, grad_div: bool = True):
    x = np.asarray(x, dtype=float)
    return np.array(case.forcing(x[..., 0], x[..., 1], t, nu, grad_div))


def pressure_accuracy_case(eps: float = 1e-3, c: float = 10.0, P0: float = 1e-3) -> ManufacturedCase:
    """u = -eps e^t (x, y), p = c^2 [2 eps (e^t - 1) + sin(a(t) x) + P0], a = exp(eps (e^t - 1))."""
    c2 = c * c

    def amp(t):
        return np.exp(eps * (np.exp(t) - 1.0))

    def u(x, y, t):
        s = -eps * np.exp(t)
        return s * x, s * y

    def grad_u(x, y, t):
        s = -eps * np.exp(t) + 0.0 * x
        z = 0.0 * x
        return (s, z), (z, s)

    def lap(x, y, t):
        z = 0.0 * x
        return z, z

    def p(x, y, t):
        return c2 * (2 * eps * (np.exp(t) - 1.0) + np.sin(amp(t) * x) + P0) + 0.0 * y

    def p_t(x, y, t):
        a = amp(t)
        return c2 * (2 * eps * np.exp(t) + np.cos(a * x) * x * a * eps * np.exp(t)) + 0.0 * y

    def grad_p(x, y, t):
        a = amp(t)
        return c2 * a * np.cos(a * x) + 0.0 * y, 0.0 * x + 0.0 * y

    return ManufacturedCase("pressure_accuracy", u, u, grad_u, lap, lap, p, p_t, grad_p,
                            dict(eps=eps, c=c, P0=P0), include_pressure_transport=True)


def velocity_accuracy_case(eps: float = 1.0, c: float = 1000.0) -> ManufacturedCase:
    """u = -eps e^t (x^2, y^2), p = 2 c^2 eps e^t (x + y); pressure transport omitted."""

    def u(x, y, t):
        s = -eps * np.exp(t)
        return s * x**2, s * y**2

    def grad_u(x, y, t):
        s = -eps * np.exp(t)
        z = 0.0 * x * y
        return (2 * s * x + z, z), (z, 2 * s * y + z)

    def lap(x, y, t):
        s = -eps * np.exp(t) + 0.0 * x * y
        return 2 * s, 2 * s

    def p(x, y, t):
        return 2 * c * c * eps * np.exp(t) * (x + y)

    def grad_p(x, y, t):
        g = 2 * c * c * eps * np.exp(t) + 0.0 * x * y
        return g, g

    return ManufacturedCase("velocity_accuracy", u, u, grad_u, lap, lap, p, p, grad_p,
                            dict(eps=eps, c=c), include_pressure_transport=False)


# --- system template -------------------------------------------------------------------
class _Template:
    """Union sparsity of every block of one model plus Dirichlet-reduced views."""

    def __init__(self, n: int, coo_parts: list[tuple[np.ndarray, np.ndarray]], fixed: np.ndarray):
        rows = np.concatenate([r for r, _ in coo_parts])
        cols = np.concatenate([c for _, c in coo_parts])
        self.n = n
        self.keys = np.unique(rows.astype(np.int64) * n + cols)
        self.nnz = len(self.keys)
        r = self.keys // n
        c = self.keys % n
        free = np.ones(n, dtype=bool)
        free[fixed] = False
        self.free_idx = np.flatnonzero(free)
        self.fixed_idx = np.asarray(fixed, dtype=np.int64)
        newf = -np.ones(n, dtype=np.int64)
        newf[self.free_idx] = np.arange(len(self.free_idx))
        newb = -np.ones(n, dtype=np.int64)
        newb[self.fixed_idx] = np.arange(len(self.fixed_idx))
        ff = free[r] & free[c]
        fb = free[r] & ~free[c]
        self.ff_sel = np.flatnonzero(ff)
        self.fb_sel = np.flatnonzero(fb)
        nf, nb = len(self.free_idx), len(self.fixed_idx)
        self.ff_indices = newf[c[ff]].astype(np.int32)
        self.ff_indptr = np.zeros(nf + 1, dtype=np.int32)
        np.cumsum(np.bincount(newf[r[ff]], minlength=nf), out=self.ff_indptr[1:])
        self.fb_indices = newb[c[fb]].astype(np.int32)
        self.fb_indptr = np.zeros(nf + 1, dtype=np.int32)
        np.cumsum(np.bincount(newf[r[fb]], minlength=nf), out=self.fb_indptr[1:])
        self.shape_fb = (nf, nb)

    def positions(self, rows, cols) -> np.ndarray:
        k = rows.astype(np.int64) * self.n + cols
        pos = np.searchsorted(self.keys, k)
        return pos

    def data_of(self, A: sp.spmatrix) -> np.ndarray:
        A = sp.coo_matrix(A)
        return np.bincount(self.positions(A.row, A.col), weights=A.data, minlength=self.nnz)

    def full(self, data) -> sp.csr_matrix:
        r = self.keys // self.n
        return sp.csr_matrix((data, (r, self.keys % self.n)), shape=(self.n, self.n))

    def reduced(self, data):
        A_ff = sp.csr_matrix((data[self.ff_sel], self.ff_indices, self.ff_indptr),
                             shape=(len(self.free_idx),) * 2)
        A_ff.has_sorted_indices = True
        A_fb = sp.csr_matrix((data[self.fb_sel], self.fb_indices, self.fb_indptr), shape=self.shape_fb)
        return A_ff, A_fb


def _coo(A):
    A = sp.coo_matrix(A)
    return A.row.astype(np.int64), A.col.astype(np.int64)


class FlowModel:
    """One of the three flow models on a fixed mesh, advanced by :meth:`step`.

    Parameters
    ----------
    mesh : TriMesh
    kind : ModelKind
    phys : PhysicalParams
    nudging : NudgingParams, optional
        Required for NUDGED; FREE ignores it.
    forcing : callable ``f(x, y, t) -> (f1, f2)``, optional
    bc : callable ``g(x, y, t) -> (g1, g2)``, optional
        Velocity Dirichlet data; homogeneous when omitted.
    pressure_mean : float
        Background pressure. The linear systems are solved for ``p - pressure_mean``
        (a constant pressure is a discrete steady state), so a large absolute
        background does not eat into the solver tolerance. It is also the gauge value
        of the pressure mean when the pressure block is singular.
    factored : bool, optional
        Keep the observation coupling in factored form (see
        :class:`nudgefem.observation.LowRankTerm`);
        chosen from the coupling size when omitted.
    """

    def __init__(self, mesh: TriMesh, kind: ModelKind, phys: PhysicalParams,
                 nudging: NudgingParams | None = None, forcing=None, bc=None,
                 pressure_mean: float = 0.0, tol: float = DEFAULT_TOL, backend: str | None = None,
                 factored: bool | None = None):
        self.mesh, self.kind, self.phys = mesh, ModelKind(kind), phys
        if self.kind is ModelKind.FREE:
            nudging = NudgingParams(0.0, 0.0, 0.0, nudging.obs if nudging else None)
        if self.kind is ModelKind.NUDGED and nudging is None:
            raise ValueError("NUDGED model requires NudgingParams")
        self.nudging = nudging
        self.forcing, self.bc = forcing, bc
        self.pressure_mean = float(pressure_mean)
        self.V, self.Q = fem.taylor_hood(mesh)
        V, Q = self.V, self.Q
        nv, npr = V.n_dofs, Q.n_dofs
        self.nv, self.npr = nv, npr

        self.Mv = fem.assemble_mass(V)
        self.Mp = fem.assemble_mass(Q)
        Kv = fem.assemble_stiffness(V)
        B = fem.assemble_divergence(V, Q)
        self.B = B
        reference = self.kind is ModelKind.REFERENCE
        inv_c2 = 1.0 / phys.c**2

        static = [sp.block_diag([phys.nu * Kv, sp.csr_matrix((npr, npr))])]
        if reference and phys.include_grad_div:
            static.append(sp.block_diag([phys.nu / 3.0 * fem.assemble_grad_div(V),
                                         sp.csr_matrix((npr, npr))]))
        static.append(sp.bmat([[None, -B.T], [B, None]]))
        self.blocks: NudgingBlocks | None = None
        self.gauge = False
        if not reference:
            if nudging.active:
                self.blocks = assemble_nudging_blocks(nudging.obs, V, Q, nudging.chi,
                                                      nudging.mu1, nudging.mu2, factored)
                static.append(sp.block_diag([self.blocks.velocity_matrix,
                                             self.blocks.pressure_matrix]))
            self.gauge = nudging.mu1 == 0.0
        mass = sp.block_diag([self.Mv, inv_c2 * self.Mp if reference else sp.csr_matrix((npr, npr))])

        # unknowns: v, p, the gauge multiplier, then the cell means of factored terms
        low_rank = self.blocks.low_rank_terms if self.blocks is not None else []
        self.n_extra = (1 if self.gauge else 0) + sum(t.L.shape[0] for _, t in low_rank)
        n = nv + npr + self.n_extra
        self.n = n
        if self.gauge:
            m = np.asarray(self.Mp.sum(axis=0)).ravel()
            self.mean_weights = m
            g = nv + npr
            rows = np.concatenate([nv + np.arange(npr), np.full(npr, g)])
            cols = np.concatenate([np.full(npr, g), nv + np.arange(npr)])
            static.append(sp.csr_matrix((np.concatenate([m, m]), (rows, cols)), shape=(n, n)))
        a = nv + npr + (1 if self.gauge else 0)
        for which, term in low_rank:
            static.append(_low_rank_block(term, 0 if which == "v" else nv, a, n))
            a += term.L.shape[0]
        static = [sp.csr_matrix(_pad(A, n)) for A in static]
        mass = sp.csr_matrix(_pad(mass, n))

        # convection (and pressure transport) are assembled on the scalar pattern, whose
        # slots map to fixed positions of the template
        ps = V.pattern(scalar=True)
        srows = np.repeat(np.arange(V.n_scalar), np.diff(ps.indptr))
        conv_rows = [srows + c * V.n_scalar for c in range(2)]
        conv_cols = [ps.indices.astype(np.int64) + c * V.n_scalar for c in range(2)]
        parts = [_coo(A) for A in static] + [_coo(mass)] + list(zip(conv_rows, conv_cols))
        self.transport = reference and phys.include_pressure_transport
        if self.transport:
            pq = Q.pattern()
            tr = nv + np.repeat(np.arange(npr), np.diff(pq.indptr))
            tc = nv + pq.indices.astype(np.int64)
            parts.append((tr, tc))
        self.template = _Template(n, parts, V.boundary_dofs)
        T = self.template
        self.static_data = sum(T.data_of(A) for A in static)
        self.mass_data = T.data_of(mass)
        self.conv_pos = [T.positions(r, c) for r, c in zip(conv_rows, conv_cols)]
        if self.transport:
            self.transport_pos = T.positions(tr, tc)
        self._base: dict[float, np.ndarray] = {}  # static + a0 * mass, per BDF coefficient
        self.solver = LaggedSolver(tol=tol, backend=backend)
        self._prev_solution: np.ndarray | None = None
        self._prev2_solution: np.ndarray | None = None
        self._Fq = None

    # --- helpers --------------------------------------------------------------------
    def function(self, coef, space="v") -> fem.FeFunction:
        return fem.FeFunction(self.V if space == "v" else self.Q, coef)

    def initial_state(self, u0=None, p0=None, t0: float = 0.0) -> FluidState:
        """Nodal interpolants of ``u0(x, y)`` and ``p0(x, y)`` (zero when omitted)."""
        v = self.V.interpolate(u0).coefficients if u0 is not None else np.zeros(self.nv)
        if p0 is None:
            p = np.zeros(self.npr)
        elif np.isscalar(p0):
            p = np.full(self.npr, float(p0))
        else:
            p = self.Q.interpolate(p0).coefficients
        if self.bc is not None:
            v[self.V.boundary_dofs] = self.V.boundary_values(lambda x, y: self.bc(x, y, t0))
        else:
            v[self.V.boundary_dofs] = 0.0
        return FluidState(t0, v, p)

    def _forcing_load(self, t):
        if self.forcing is None:
            return np.zeros(self.nv)
        q = self.V.geometry.qpoints
        f1, f2 = self.forcing(q[..., 0], q[..., 1], t)
        vals = np.stack([np.broadcast_to(f1, q.shape[:2]), np.broadcast_to(f2, q.shape[:2])], axis=-1)
        return fem.assemble_load(self.V, vals)

    def system(self, state: FluidState, dt: float, obs=None):
        """Assembled full matrix data, right-hand side and BDF data for one step."""
        first = state.v_prev is None
        P = self.pressure_mean
        if first:
            a0 = 1.0 / dt
            hist_v = state.v / dt
            hist_p = (state.p - P) / dt
            w = state.v
        else:
            a0 = 1.5 / dt
            hist_v = (4.0 * state.v - state.v_prev) / (2.0 * dt)
            hist_p = (4.0 * (state.p - P) - (state.p_prev - P)) / (2.0 * dt)
            w = 2.0 * state.v - state.v_prev
        t_new = state.t + dt
        T = self.template
        wf = fem.FeFunction(self.V, w)
        if a0 not in self._base:
            self._base[a0] = self.static_data + a0 * self.mass_data
        data = self._base[a0].copy()
        if self.phys.include_convection:
            conv = self.V.pattern(scalar=True).data(fem.convection_local_scalar(wf, self.V))
            data[self.conv_pos[0]] += conv
            data[self.conv_pos[1]] += conv
        if self.transport:
            tl = self.Q.pattern().data(fem.scalar_convection_local(wf, self.Q))
            data[self.transport_pos] += tl / self.phys.c**2

        rhs = np.zeros(self.n)
        rhs[:self.nv] = self._forcing_load(t_new) + self.Mv @ hist_v
        if self.kind is ModelKind.REFERENCE:
            rhs[self.nv:self.nv + self.npr] = (self.Mp @ hist_p) / self.phys.c**2
        elif self.blocks is not None:
            if obs is None:
                raise ValueError("nudged step requires observations at t_{n+1}")
            uq, pq = obs
            rhs[:self.nv] += self.blocks.velocity_load(uq)
            rhs[self.nv:self.nv + self.npr] += self.blocks.pressure_load(np.asarray(pq) - P)
        return data, rhs, t_new

    def boundary_values(self, t) -> np.ndarray:
        if self.bc is None:
            return np.zeros(len(self.V.boundary_dofs))
        return self.V.boundary_values(lambda x, y: self.bc(x, y, t))

    def step(self, state: FluidState, dt: float, truth=None) -> FluidState:
        """Advance one step; ``truth.sample(t)`` supplies observations for NUDGED."""
        t_new = state.t + dt
        obs = None
        if self.blocks is not None:
            if truth is None:
                raise ValueError("nudged step requires a truth sampler")
            obs = truth.sample(t_new)
        data, rhs, _ = self.system(state, dt, obs)
        T = self.template
        A_ff, A_fb = T.reduced(data)
        g = self.boundary_values(t_new)
        b = rhs[T.free_idx] - A_fb @ g
        guess = None
        if self._prev_solution is not None and state.v_prev is not None and self._prev2_solution is not None:
            guess = (2.0 * self._prev_solution - self._prev2_solution)[T.free_idx]
        try:
            x_free = self.solver.solve(A_ff, b, guess)
        except SingularSystem as exc:
            raise SingularSystem(f"step to t={t_new:.6g} failed: {exc}", exc.residual) from exc
        x = np.empty(self.n)
        x[T.free_idx] = x_free
        x[T.fixed_idx] = g
        self._prev2_solution = self._prev_solution
        self._prev_solution = x
        return FluidState(t_new, x[:self.nv].copy(), x[self.nv:self.nv + self.npr] + self.pressure_mean,
                          state.v, state.p)

    def full_system(self, state: FluidState, dt: float, obs=None):
        """Unreduced matrix and rhs of one step (Dirichlet rows not yet applied).

        The pressure unknown is ``p - pressure_mean``.
        """
        data, rhs, t_new = self.system(state, dt, obs)
        return self.template.full(data), rhs

    def reset_history(self):
        self._prev_solution = None
        self._prev2_solution = None

    def sync_history(self, state: FluidState):
        """Prime the solver's initial-guess history from a state with BDF history."""
        if state.v_prev is None:
            self.reset_history()
            return
        pad = [np.zeros(self.n_extra)]
        P = self.pressure_mean
        self._prev_solution = np.concatenate([state.v, state.p - P] + pad)
        self._prev2_solution = np.concatenate([state.v_prev, state.p_prev - P] + pad)


def _low_rank_block(term, offset: int, aux: int, n: int) -> sp.csr_matrix:
    """Rows ``L x - w m = 0`` and columns ``coef L.T m`` of a factored term."""
    L = term.L.tocoo()
    k = L.shape[0]
    rows = np.concatenate([aux + L.row, offset + L.col, aux + np.arange(k)])
    cols = np.concatenate([offset + L.col, aux + L.row, aux + np.arange(k)])
    vals = np.concatenate([L.data, term.coef * L.data, -term.w])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _pad(A, n):
    A = sp.csr_matrix(A)
    if A.shape == (n, n):
        return A
    A = A.tocoo()
    return sp.csr_matrix((A.data, (A.row, A.col)), shape=(n, n))


def step_reference(model: FlowModel, state: FluidState, dt: float) -> FluidState:
    if model.kind is not ModelKind.REFERENCE:
        raise ValueError("model is not a reference model")
    return model.step(state, dt)


def step_nudged(model: FlowModel, state: FluidState, truth, dt: float) -> FluidState:
    if model.kind is ModelKind.REFERENCE:
        raise ValueError("model is a reference model")
    return model.step(state, dt, truth)


@dataclass
class Trajectory:
    states: list
    records: list

    @property
    def final(self) -> FluidState:
        return self.states[-1]


def run(model: FlowModel, state0: FluidState, grid: TimeGrid, truth=None,
        observe: Callable | None = None, output_every: int = 1, on_step: Callable | None = None,
        keep_states: bool = False) -> Trajectory:
    """Advance ``grid.n_steps`` steps (first step BDF1).

    ``observe(state)`` is called on the initial state and every ``output_every`` steps
    (and at the final step); its return values form ``Trajectory.records``.
    ``on_step(state)`` is called after every step.
    """
    model.reset_history()
    state = state0
    states = [state0] if keep_states else []
    records = [observe(state0)] if observe else []
    n = grid.n_steps
    for k in range(1, n + 1):
        try:
            state = model.step(state, grid.dt, truth)
        except SingularSystem as exc:
            raise SingularSystem(f"[t={state.t + grid.dt:.6g}] {exc}", exc.residual) from exc
        if on_step:
            on_step(state)
        if k % output_every == 0 or k == n:
            if keep_states:
                states.append(state)
            if observe:
                records.append(observe(state))
    if not keep_states:
        states = [state]
    log.info("%s run: %d steps, %d factorizations", model.kind.value, n, model.solver.n_factorizations)
    return Trajectory(states, records)


def analytic_truth(case: ManufacturedCase, model: FlowModel) -> AnalyticTruth:
    """Closed-form observations at the points the model's observation operator needs."""
    op = model.nudging.obs if model.nudging is not None else None
    if op is None:
        raise ValueError("model has no observation operator")
    return AnalyticTruth(case.u, case.p, op.points(model.V), op.points(model.Q))
