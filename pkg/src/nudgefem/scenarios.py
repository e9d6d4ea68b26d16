"""Experiment drivers: manufactured-solution convergence, Taylor-Green synchronisation and
the acoustic-pulse ablation. Each driver returns plain result objects; file output is
done by :func:`write_outputs` helpers so the drivers stay testable in memory.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from . import dynamics as dy
from . import fem
from . import mesh as msh
from . import observation as ob
from .config import ScenarioConfig

log = logging.getLogger(__name__)


def build_mesh(cfg: ScenarioConfig, n: int) -> msh.TriMesh:
    m = msh.build_structured(n, tuple(cfg["box"]))
    return msh.barycentric_refine(m) if cfg.get("refine", False) else m


def _backend(cfg: ScenarioConfig):
    b = cfg.get("backend", "auto")
    return None if b == "auto" else b


def _map(fn, tasks, threads: int):
    """Run independent tasks, in worker processes when ``threads > 1``; order preserved."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# --- manufactured-solution convergence -----------------------------------------------
@dataclass
class AccuracyRow:
    n: int
    h: float
    dt: float
    vel_l2_error: float
    p_l2_error: float
    seconds: float
    vel_rate: float = math.nan
    p_rate: float = math.nan
    error: str = ""

    def as_row(self):
        return (self.n, self.h, self.dt, self.vel_l2_error, self.vel_rate, self.p_l2_error, self.p_rate)


def manufactured_case(cfg: ScenarioConfig) -> dy.ManufacturedCase:
    if cfg.scenario == "accuracy-pressure":
        return dy.pressure_accuracy_case(cfg["eps"], cfg["c"], cfg["P0"])
    if cfg.scenario == "accuracy-velocity":
        return dy.velocity_accuracy_case(cfg["eps"], cfg["c"])
    raise ValueError(f"{cfg.scenario} has no manufactured solution")


def accuracy_level(task) -> AccuracyRow:
    """One row of a convergence table: nudge the manufactured truth on an n x n mesh."""
    cfg, n = task
    case = manufactured_case(cfg)
    nu, T = cfg["nu"], cfg["T"]
    dt = cfg.value("dt", n)
    m = build_mesh(cfg, n)
    h = (cfg["box"][1] - cfg["box"][0]) / n
    op = ob.make_operator(cfg["obs_kind"], cfg.value("H", n), m)
    phys = dy.PhysicalParams(nu, cfg["c"], include_pressure_transport=cfg["pressure_transport"])
    nud = dy.NudgingParams(cfg.value("chi", n), cfg.value("mu1", n), cfg.value("mu2", n), op)
    model = dy.FlowModel(m, dy.ModelKind.NUDGED, phys, nud,
                         forcing=lambda x, y, t: case.forcing(x, y, t, nu),
                         bc=lambda x, y, t: case.u(x, y, t), tol=cfg["tol"], backend=_backend(cfg))
    s0 = model.initial_state(lambda x, y: case.u(x, y, 0.0), lambda x, y: case.p(x, y, 0.0))
    t0 = time.perf_counter()
    try:
        traj = dy.run(model, s0, dy.TimeGrid(dt, T), dy.analytic_truth(case, model))
    except dy.SingularSystem as exc:
        log.error("n=%d failed: %s", n, exc)
        return AccuracyRow(n, h, dt, math.nan, math.nan, time.perf_counter() - t0, error=str(exc))
    s = traj.final
    ev = dg.l2_error(model.function(s.v, "v"), lambda x, y: case.u(x, y, s.t))
    ep = dg.l2_error(model.function(s.p, "p"), lambda x, y: case.p(x, y, s.t))
    secs = time.perf_counter() - t0
    log.info("n=%d: vel %.6e  p %.6e  (%.1fs)", n, ev, ep, secs)
    return AccuracyRow(n, h, dt, ev, ep, secs)


def run_accuracy(cfg: ScenarioConfig) -> list[AccuracyRow]:
    """Convergence table over ``cfg.levels``; rates against the previous row."""
    rows = _map(accuracy_level, [(cfg, n) for n in cfg.levels], cfg["threads"])
    for prev, row in zip(rows, rows[1:]):
        factor = row.n / prev.n
        if prev.vel_l2_error > 0 and row.vel_l2_error > 0:
            row.vel_rate = math.log(prev.vel_l2_error / row.vel_l2_error) / math.log(factor)
        if prev.p_l2_error > 0 and row.p_l2_error > 0:
            row.p_rate = math.log(prev.p_l2_error / row.p_l2_error) / math.log(factor)
    return rows


run_accuracy_pressure = run_accuracy
run_accuracy_velocity = run_accuracy


# --- Taylor-Green synchronisation ----------------------------------------------------
def taylor_green_fields():
    tp = 2.0 * np.pi

    def u0(x, y):
        return np.sin(tp * x) * np.cos(tp * y), np.sin(tp * y) * np.cos(tp * x)

    def p0(x, y):
        return 0.25 * (np.cos(2 * tp * x) + np.cos(2 * tp * y))

    return u0, p0


@dataclass
class SnapshotFields:
    velocity: np.ndarray  # vertex values (nv, 2)
    pressure: np.ndarray
    vorticity: np.ndarray


def snapshot(model: dy.FlowModel, state: dy.FluidState) -> SnapshotFields:
    nv = model.mesh.n_vertices
    ns = model.V.n_scalar
    vel = np.column_stack([state.v[:nv], state.v[ns:ns + nv]])
    vort = dg.vorticity_field(model.V, state.v, model.Q).coefficients
    return SnapshotFields(vel, state.p.copy(), vort)


@dataclass
class TaylorGreenResult:
    reference: list  # DiagnosticsRecord per output time
    nudged: dict  # H -> list of DiagnosticsRecord
    mesh: msh.TriMesh | None = None
    snapshots: dict = field(default_factory=dict)
    seconds: float = 0.0


def run_taylor_green(cfg: ScenarioConfig, observers=None, snapshots: bool = False) -> TaylorGreenResult:
    """Reference and nudged model(s) advanced in lockstep on the same mesh and step.

    ``observers`` lists ``(obs_kind, H)`` pairs, one nudged model each, all fed by the
    same reference trajectory (default: the configured kind and H). ``nudged`` in the
    result is keyed by these pairs.
    """
    n = cfg.levels[0]
    m = build_mesh(cfg, n)
    nu, c = cfg["nu"], cfg["c"]
    grid = dy.TimeGrid(cfg.value("dt", n), cfg["T"])
    u0, p0 = taylor_green_fields()
    backend, tol = _backend(cfg), cfg["tol"]
    ref = dy.FlowModel(m, dy.ModelKind.REFERENCE, dy.PhysicalParams(nu, c), tol=tol, backend=backend)
    observers = [tuple(o) for o in observers] if observers is not None else [(cfg["obs_kind"], cfg.value("H", n))]
    chi, mu1, mu2 = cfg.value("chi", n), cfg.value("mu1", n), cfg.value("mu2", n)
    store = ob.TruthSampler(ref.V, ref.Q, grid.dt)
    nudged, samplers = [], []
    for kind, H in observers:
        op = ob.make_operator(kind, H, m)
        mk = dy.ModelKind.NUDGED if max(chi, mu1, mu2) > 0 else dy.ModelKind.FREE
        model = dy.FlowModel(m, mk, dy.PhysicalParams(nu, c), dy.NudgingParams(chi, mu1, mu2, op),
                             tol=tol, backend=backend)
        nudged.append(model)
        samplers.append(store.at(*ob.observation_points(op, model.V, model.Q)))

    t0 = time.perf_counter()
    rs = ref.initial_state(u0, p0)
    ns = [mdl.initial_state() for mdl in nudged]  # at rest, zero pressure
    for mdl in nudged:
        mdl.reset_history()
    ref.reset_history()

    def record(k, rstate, nstates):
        t = grid.time(k)
        ref_rec.append(dg.flow_stats(t, ref.V, ref.Q, rstate.v, rstate.p))
        for key, mdl, st in zip(observers, nudged, nstates):
            out[key].append(dg.flow_stats(t, mdl.V, mdl.Q, st.v, st.p, (rstate.v, rstate.p), c))

    ref_rec: list = []
    out: dict = {key: [] for key in observers}
    record(0, rs, ns)
    every = int(cfg.get("output_every", 1))
    for k in range(1, grid.n_steps + 1):
        rs = ref.step(rs, grid.dt)
        store.frames.clear()
        store.store(rs.t, rs.v, rs.p)
        ns = [mdl.step(st, grid.dt, smp) for mdl, st, smp in zip(nudged, ns, samplers)]
        if k % every == 0 or k == grid.n_steps:
            record(k, rs, ns)
    res = TaylorGreenResult(ref_rec, out, m, seconds=time.perf_counter() - t0)
    if snapshots:
        res.snapshots["reference"] = snapshot(ref, rs)
        for key, mdl, st in zip(observers, nudged, ns):
            res.snapshots["nudged" if key == observers[0] else observer_label(key)] = snapshot(mdl, st)
    return res


def observer_label(key) -> str:
    kind, H = key
    return f"nudged_{kind}_H{H:g}"


def stats_rows(records, relative: bool = True):
    rows = []
    for r in records:
        rows.append((r.t, r.kinetic_energy, r.enstrophy, r.divergence_norm,
                     r.relative_velocity_error if relative else math.nan,
                     r.relative_pressure_error if relative else math.nan,
                     r.lyapunov if relative else math.nan))
    return rows


def plateau_observers(cfg: ScenarioConfig) -> list:
    """The two observation grids (H and H/2) of the plateau-scaling study."""
    H = cfg.value("plateau_H", cfg.levels[0])
    return [(cfg["plateau_obs_kind"], H), (cfg["plateau_obs_kind"], H / 2)]


def plateau_ratio(res: TaylorGreenResult, keys, t_from: float | None = None) -> tuple[float, dict]:
    """Ratio of lyapunov plateaus for the observers ``keys = (coarse, fine)``.

    Only records with ``t >= t_from`` (default: the second half of the run) are used.
    """
    plateaus = {}
    for key in keys:
        recs = res.nudged[key]
        t_min = 0.5 * recs[-1].t if t_from is None else t_from
        t = np.array([r.t for r in recs if r.t >= t_min])
        y = np.array([r.lyapunov for r in recs if r.t >= t_min])
        plateaus[key] = dg.decay_analysis(t, y).plateau
    coarse, fine = keys
    return plateaus[coarse] / plateaus[fine], plateaus


# --- acoustic pulse ablation ---------------------------------------------------------
CASE_PARAMS = {"FREE": (0, 0, 0), "VEL": (1, 0, 0), "FULL": (1, 1, 1)}


@dataclass
class AcousticResult:
    times: np.ndarray
    probes: dict  # case -> (n_times, n_probes) perturbations
    errors: dict  # case -> (n_times,) L2 pressure error
    final_errors: dict
    reductions: dict
    peak_times: dict  # case -> list of peak times per probe
    wave_speed: dict
    seconds: dict = field(default_factory=dict)


def pulse(cfg: ScenarioConfig):
    P0, dp, sig = cfg["P0"], cfg["delta_p"], cfg["sigma"]
    xc, yc = cfg["center"]

    def p_init(x, y):
        return P0 + dp * np.exp(-((x - xc) ** 2 + (y - yc) ** 2) / (2 * sig**2))

    return p_init


def acoustic_physics(cfg: ScenarioConfig) -> dy.PhysicalParams:
    if cfg["linear"]:
        return dy.PhysicalParams.linear(cfg["nu"], cfg["c"])
    return dy.PhysicalParams(cfg["nu"], cfg["c"])


def _probe_points(cfg):
    return np.array([[x, cfg["probe_y"]] for x in cfg["probes"]], dtype=float)


def acoustic_truth(cfg: ScenarioConfig):
    """Fine-mesh reference run; frames stored at every assimilation step."""
    m = build_mesh(cfg, int(cfg["n_true"]))
    model = dy.FlowModel(m, dy.ModelKind.REFERENCE, acoustic_physics(cfg),
                         pressure_mean=cfg["P0"], tol=cfg["tol"], backend=_backend(cfg))
    grid = dy.TimeGrid(cfg.value("dt"), cfg["T"])
    store = ob.TruthSampler(model.V, model.Q, grid.dt)
    s = model.initial_state(None, pulse(cfg))
    store.store(0.0, s.v, s.p)
    dy.run(model, s, grid, on_step=lambda st: store.store(st.t, st.v, st.p))
    return store, grid


def acoustic_case(task):
    """One assimilation case on the coarse mesh, fed by stored truth frames."""
    cfg, case, frames, truth_n = task
    P0 = cfg["P0"]
    grid = dy.TimeGrid(cfg.value("dt"), cfg["T"])
    n = cfg.levels[0]
    m = build_mesh(cfg, n)
    tm = build_mesh(cfg, truth_n)
    tV, tQ = fem.taylor_hood(tm)
    store = ob.TruthSampler(tV, tQ, grid.dt, frames=frames)
    a, b, c_ = CASE_PARAMS[case]
    chi, mu1, mu2 = a * cfg.value("chi", n), b * cfg.value("mu1", n), c_ * cfg.value("mu2", n)
    op = ob.make_operator(cfg["obs_kind"], cfg.value("H", n), m)
    kind = dy.ModelKind.FREE if case == "FREE" else dy.ModelKind.NUDGED
    model = dy.FlowModel(m, kind, acoustic_physics(cfg),
                         dy.NudgingParams(chi, mu1, mu2, op), pressure_mean=P0,
                         tol=cfg["tol"], backend=_backend(cfg))
    sampler = store.at(*ob.observation_points(op, model.V, model.Q))
    qps = model.Q.geometry.qpoints.reshape(-1, 2)
    on_qp = store.at(qps, qps)
    tri, bary = m.locate(_probe_points(cfg))
    Eprobe = fem.evaluation_matrix(model.Q, tri, bary)
    W = model.Q.geometry.qweights

    def observe(st):
        _, p_true = on_qp.sample(st.t)
        e = math.sqrt(float(np.sum(W * (model.Q.values_at_qp(st.p) - p_true.reshape(W.shape)) ** 2)))
        return st.t, Eprobe @ st.p - P0, e

    t0 = time.perf_counter()
    traj = dy.run(model, model.initial_state(None, P0), grid, sampler, observe=observe)
    secs = time.perf_counter() - t0
    t = np.array([r[0] for r in traj.records])
    return case, t, np.array([r[1] for r in traj.records]), np.array([r[2] for r in traj.records]), secs


def peak_time(t: np.ndarray, y: np.ndarray) -> float:
    """Time of the maximum of a sampled signal, refined by a parabola through 3 samples."""
    k = int(np.argmax(y))
    if 0 < k < len(y) - 1:
        y0, y1, y2 = y[k - 1], y[k], y[k + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            return float(t[k] + 0.5 * (y0 - y2) / den * (t[k + 1] - t[k]))
    return float(t[k])


def wave_speed(cfg, t, probe_series) -> tuple[list, float]:
    xs = list(cfg["probes"])
    peaks = [peak_time(t, probe_series[:, j]) for j in range(len(xs))]
    if len(xs) < 2 or peaks[-1] == peaks[0]:
        return peaks, math.nan
    return peaks, (xs[-1] - xs[0]) / (peaks[-1] - peaks[0])


def run_acoustic(cfg: ScenarioConfig) -> AcousticResult:
    t0 = time.perf_counter()
    store, grid = acoustic_truth(cfg)
    secs = {"TRUE": time.perf_counter() - t0}
    P0 = cfg["P0"]
    # truth probes and reference errors on its own mesh
    tri, bary = store.v_space.mesh.locate(_probe_points(cfg))
    Ep = fem.evaluation_matrix(store.p_space, tri, bary)
    times = store.times
    probes = {"TRUE": np.array([Ep @ store.coefficients(t)[1] - P0 for t in times])}
    errors, finals = {}, {}
    tasks = [(cfg, case, store.frames, int(cfg["n_true"])) for case in cfg["cases"]]
    for case, t, pr, err, s in _map(acoustic_case, tasks, cfg["threads"]):
        probes[case] = pr
        errors[case] = err
        finals[case] = float(err[-1])
        secs[case] = s
    red = {}
    if "FREE" in finals:
        red = {k: (1.0 - v / finals["FREE"]) * 100.0 for k, v in finals.items()}
    peaks, speeds = {}, {}
    for case in probes:
        peaks[case], speeds[case] = wave_speed(cfg, times, probes[case])
    return AcousticResult(times, probes, errors, finals, red, peaks, speeds, secs)
