"""Flow statistics, error norms, rate estimators and the parameter-condition checker."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import fem
from .fem import FeFunction, FeSpace

# reference norms below this make relative errors undefined
REL_FLOOR = 1e-14


@dataclass
class DiagnosticsRecord:
    """Statistics of one state, optionally against a reference.

    Relative errors are NaN (and ``relative_defined`` False) when the reference norm
    is below ``REL_FLOOR``; error fields are NaN when no reference was given.
    """

    t: float
    kinetic_energy: float
    enstrophy: float
    divergence_norm: float
    l2_velocity_error: float = math.nan
    l2_pressure_error: float = math.nan
    relative_velocity_error: float = math.nan
    relative_pressure_error: float = math.nan
    lyapunov: float = math.nan
    relative_defined: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


def _sq_norm(W, vals) -> float:
    d = vals**2
    if d.ndim == 3:
        d = d.sum(axis=-1)
    return float(np.sum(W * d))


def _exact_at_qp(space: FeSpace, exact):
    """Quadrature-point values of ``exact``: a callable of (x, y) or an array of qp values."""
    geo = space.geometry
    shape = geo.qweights.shape + ((2,) if space.ncomp == 2 else ())
    if callable(exact):
        x, y = geo.qpoints[..., 0], geo.qpoints[..., 1]
        vals = exact(x, y)
        if space.ncomp == 2:
            vals = np.stack([np.broadcast_to(vals[0], x.shape), np.broadcast_to(vals[1], x.shape)], axis=-1)
        return np.broadcast_to(np.asarray(vals, dtype=float), shape)
    return np.asarray(exact, dtype=float).reshape(shape)


def l2_norm(f: FeFunction) -> float:
    s = f.space
    return math.sqrt(_sq_norm(s.geometry.qweights, s.values_at_qp(f.coefficients)))


def l2_error(f: FeFunction, exact) -> float:
    """||f - exact|| by the assimilation-mesh quadrature.

    ``exact`` is a callable ``(x, y)`` (returning a pair for vector spaces), an array
    of quadrature-point values, or an FeFunction on the same space.
    """
    s = f.space
    if isinstance(exact, FeFunction):
        if exact.space is not s:
            raise ValueError("reference FeFunction lives on another space")
        return l2_norm(FeFunction(s, f.coefficients - exact.coefficients))
    diff = s.values_at_qp(f.coefficients) - _exact_at_qp(s, exact)
    return math.sqrt(_sq_norm(s.geometry.qweights, diff))


def vorticity_qp(V: FeSpace, v: np.ndarray) -> np.ndarray:
    """omega = d u2/dx - d u1/dy at the quadrature points, (E, Q)."""
    J = V.grads_at_qp(v)  # [..., comp, dir]
    return J[..., 1, 0] - J[..., 0, 1]


def divergence_qp(V: FeSpace, v: np.ndarray) -> np.ndarray:
    J = V.grads_at_qp(v)
    return J[..., 0, 0] + J[..., 1, 1]


def vorticity_field(V: FeSpace, v: np.ndarray, P: FeSpace | None = None) -> FeFunction:
    """L2 projection of the vorticity onto continuous linears (for visualisation only)."""
    from scipy.sparse.linalg import spsolve

    P = P or FeSpace(V.mesh, fem.Kind.SCALAR_LINEAR)
    rhs = fem.assemble_load(P, vorticity_qp(V, v))
    return FeFunction(P, spsolve(fem.assemble_mass(P).tocsc(), rhs))


def flow_stats(t: float, V: FeSpace, Q: FeSpace, v: np.ndarray, q: np.ndarray,
               reference=None, c: float = math.inf) -> DiagnosticsRecord:
    """Energy, enstrophy, divergence and (with ``reference``) errors of one state.

    ``reference`` is ``(u, p)`` as coefficient vectors on (V, Q) or as quadrature-point
    values ((E, Q, 2), (E, Q)). ``c`` enters the Lyapunov functional
    ||e||^2 + ||e_p||^2 / c^2.
    """
    W = V.geometry.qweights
    vq = V.values_at_qp(v)
    rec = DiagnosticsRecord(
        t=float(t),
        kinetic_energy=0.5 * _sq_norm(W, vq),
        enstrophy=0.5 * _sq_norm(W, vorticity_qp(V, v)),
        divergence_norm=math.sqrt(_sq_norm(W, divergence_qp(V, v))),
    )
    if reference is None:
        return rec
    u, p = reference
    uq = V.values_at_qp(u) if np.ndim(u) == 1 else np.asarray(u).reshape(vq.shape)
    qq = Q.values_at_qp(q)
    pq = Q.values_at_qp(p) if np.ndim(p) == 1 else np.asarray(p).reshape(qq.shape)
    ev2 = _sq_norm(W, vq - uq)
    ep2 = _sq_norm(W, qq - pq)
    rec.l2_velocity_error = math.sqrt(ev2)
    rec.l2_pressure_error = math.sqrt(ep2)
    rec.lyapunov = ev2 + ep2 / c**2
    nu_ref = math.sqrt(_sq_norm(W, uq))
    np_ref = math.sqrt(_sq_norm(W, pq))
    rec.relative_defined = nu_ref >= REL_FLOOR and np_ref >= REL_FLOOR
    if nu_ref >= REL_FLOOR:
        rec.relative_velocity_error = rec.l2_velocity_error / nu_ref
    if np_ref >= REL_FLOOR:
        rec.relative_pressure_error = rec.l2_pressure_error / np_ref
    return rec


def convergence_rate(errors, factor: float = 2.0) -> list[float]:
    """rate_k = log(e_{k-1} / e_k) / log(factor); one entry fewer than ``errors``."""
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0):
        raise ValueError("errors must be positive")
    return list(np.log(e[:-1] / e[1:]) / math.log(factor))


def temporal_order(v_dt, v_tau, v_tau2, tau: float = 0.5, norm=None) -> float:
    """Observed order from end states at dt, tau*dt, tau^2*dt on a fixed mesh.

    ratio = ||v_dt - v_tau|| / ||v_tau - v_tau2|| = tau^-p, so p = log(ratio) / log(1/tau).
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    norm = norm or (lambda a: float(np.linalg.norm(a)))
    a, b, c = (x.coefficients if isinstance(x, FeFunction) else np.asarray(x, dtype=float)
               for x in (v_dt, v_tau, v_tau2))
    num, den = norm(a - b), norm(b - c)
    if den == 0:
        raise ValueError("successive solutions coincide; order undefined")
    return math.log(num / den) / math.log(1.0 / tau)


@dataclass(frozen=True)
class ConditionReport:
    nu: float
    chi: float
    H: float
    C1: float
    C2: float
    alpha: float
    grad_bound: float
    mu1: float
    chi_margin: float
    resolution_margin: float
    beta: float

    @property
    def chi_ok(self) -> bool:
        return bool(self.chi_margin > 0)

    @property
    def resolution_ok(self) -> bool:
        return bool(self.resolution_margin > 0)

    @property
    def passed(self) -> bool:
        return self.chi_ok and self.resolution_ok


def check_conditions(nu: float, chi: float, H: float, C1: float = 1.0, C2: float = 1.0,
                     alpha: float = 0.5, grad_bound: float = 1.0, mu1: float = 0.0) -> ConditionReport:
    """Margins of the two sufficient conditions for synchronisation.

    chi_margin = chi - 27/16 C2^4 / nu^3 ||grad v||^4 - alpha chi  (nudging strong enough)
    resolution_margin = nu - 2 (C1 H)^2 chi  (observations fine enough for chi)
    beta = min(alpha chi, mu1 / 4) is the resulting decay rate.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    m7 = chi - 27.0 / 16.0 * C2**4 / nu**3 * grad_bound**4 - alpha * chi
    m8 = nu - 2.0 * (C1 * H) ** 2 * chi
    return ConditionReport(nu, chi, H, C1, C2, alpha, grad_bound, mu1, m7, m8,
                           min(alpha * chi, mu1 / 4.0))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    plateau: float
    window: int  # number of samples used by the exponential fit


def decay_analysis(t, series, flat_tol: float = 0.01, tail: float = 0.2) -> DecayFit:
    """Exponential rate on the initial window and the plateau of a positive series.

    The window runs until the first successive relative change below ``flat_tol``; the
    rate is minus the least-squares slope of log(series) there. The plateau is the
    median of the final ``tail`` fraction of samples.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(series, dtype=float)
    if t.shape != s.shape or s.ndim != 1 or len(s) < 2:
        raise ValueError("need matching 1-D time and value arrays of length >= 2")
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ValueError("series entries must be positive and finite")
    change = np.abs(np.diff(s)) / s[:-1]
    flat = np.flatnonzero(change < flat_tol)
    end = int(flat[0]) + 1 if len(flat) else len(s)
    if end >= 2:
        slope = np.polyfit(t[:end], np.log(s[:end]), 1)[0]
        rate = -float(slope)
    else:
        rate = 0.0
    k = max(1, int(math.ceil(tail * len(s))))
    return DecayFit(rate, float(np.median(s[-k:])), end if end >= 2 else 0)
