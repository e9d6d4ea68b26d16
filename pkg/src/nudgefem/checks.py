"""Pass/fail thresholds for the benchmark scenarios (used by ``--check``)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# target L2 errors of the default pressure-accuracy run, n -> (velocity, pressure)
PRESSURE_CASE_TARGETS = {
    8: (5.31352e-4, 4.04032e-2),
    16: (1.07629e-4, 1.00944e-2),
    32: (2.51825e-5, 2.52187e-3),
    64: (6.33607e-6, 6.30158e-4),
}
TARGET_FACTOR = 3.0

RUNTIME_LIMITS = {  # seconds
    "accuracy-pressure": 15 * 60,
    "accuracy-velocity": 20 * 60,
    "taylor-green": 30 * 60,
    "acoustic": 20 * 60,
}


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _in(x, lo, hi) -> bool:
    return bool(np.isfinite(x) and lo <= x <= hi)


def _runtime(scenario, seconds) -> Check:
    lim = RUNTIME_LIMITS[scenario]
    return Check(f"{scenario} runtime", seconds <= lim, f"{seconds:.0f}s (limit {lim}s)")


def check_accuracy_pressure(rows, seconds: float) -> list[Check]:
    out = []
    p_rates = [r.p_rate for r in rows[1:]]
    v_rates = [r.vel_rate for r in rows[1:]]
    out.append(Check("pressure rates in [1.85, 2.15]", bool(p_rates) and all(_in(r, 1.85, 2.15) for r in p_rates),
                     " ".join(f"{r:.3f}" for r in p_rates)))
    out.append(Check("velocity rates in [1.8, 2.5]", bool(v_rates) and all(_in(r, 1.8, 2.5) for r in v_rates),
                     " ".join(f"{r:.3f}" for r in v_rates)))
    if v_rates:
        out.append(Check("finest velocity rate in [1.85, 2.15]", _in(v_rates[-1], 1.85, 2.15), f"{v_rates[-1]:.3f}"))
    for r in rows:
        if r.n in PRESSURE_CASE_TARGETS:
            tv, tp = PRESSURE_CASE_TARGETS[r.n]
            ok = all(_in(e / t, 1 / TARGET_FACTOR, TARGET_FACTOR) for e, t in ((r.vel_l2_error, tv), (r.p_l2_error, tp)))
            out.append(Check(f"n={r.n} errors within {TARGET_FACTOR:g}x of target", ok,
                             f"vel {r.vel_l2_error:.4e} (target {tv:.4e}), p {r.p_l2_error:.4e} (target {tp:.4e})"))
    out.append(_runtime("accuracy-pressure", seconds))
    return out


def check_accuracy_velocity(rows, seconds: float) -> list[Check]:
    out = []
    p_rates = [r.p_rate for r in rows[1:]]
    v_rates = [r.vel_rate for r in rows[1:]]
    out.append(Check("pressure rates in [1.85, 2.15]", bool(p_rates) and all(_in(r, 1.85, 2.15) for r in p_rates),
                     " ".join(f"{r:.3f}" for r in p_rates)))
    mono = bool(v_rates) and all(np.isfinite(v_rates)) and all(b > a for a, b in zip(v_rates, v_rates[1:]))
    out.append(Check("velocity rates increasing", mono, " ".join(f"{r:.3f}" for r in v_rates)))
    if v_rates:
        out.append(Check("finest velocity rate >= 1.75", _in(v_rates[-1], 1.75, math.inf), f"{v_rates[-1]:.3f}"))
    out.append(_runtime("accuracy-velocity", seconds))
    return out


def _strictly_decreasing(t, y, t_from) -> bool:
    y = np.asarray(y)[np.asarray(t) >= t_from]
    return len(y) >= 2 and bool(np.all(np.isfinite(y))) and bool(np.all(np.diff(y) < 0))


def check_taylor_green(reference, nudged, seconds: float | None = None) -> list[Check]:
    """``reference``/``nudged``: DiagnosticsRecord series at common output times."""
    t = np.array([r.t for r in nudged])
    rv = np.array([r.relative_velocity_error for r in nudged])
    rp = np.array([r.relative_pressure_error for r in nudged])
    out = [
        Check("relative velocity error at final time <= 5e-3", _in(rv[-1], 0, 5e-3), f"{rv[-1]:.3e}"),
        Check("relative pressure error at final time <= 5e-3", _in(rp[-1], 0, 5e-3), f"{rp[-1]:.3e}"),
        Check("relative velocity error strictly decreasing after t=0.5", _strictly_decreasing(t, rv, 0.5),
              " ".join(f"{x:.2e}" for x in rv[t >= 0.5])),
        Check("relative pressure error strictly decreasing after t=0.5", _strictly_decreasing(t, rp, 0.5),
              " ".join(f"{x:.2e}" for x in rp[t >= 0.5])),
    ]
    ke_r = np.array([r.kinetic_energy for r in reference])
    ke_n = np.array([r.kinetic_energy for r in nudged])
    late = t >= 1.0
    dev = float(np.max(np.abs(ke_n[late] - ke_r[late]) / ke_r[late])) if late.any() else math.nan
    out.append(Check("kinetic energy within 1% for t >= 1", _in(dev, 0, 0.01), f"max deviation {dev:.3e}"))
    if seconds is not None:
        out.append(_runtime("taylor-green", seconds))
    return out


def check_plateau(ratio: float) -> Check:
    return Check("lyapunov plateau ratio H vs H/2 in [2, 8]", _in(ratio, 2.0, 8.0), f"{ratio:.3f}")


def check_acoustic(res, c: float, seconds: float | None = None) -> list[Check]:
    out = []
    red = res.reductions
    if "FULL" in red:
        out.append(Check("FULL reduction >= 90%", _in(red["FULL"], 90.0, math.inf), f"{red['FULL']:.2f}%"))
    if "VEL" in red:
        out.append(Check("VEL reduction <= 20%", _in(red["VEL"], -math.inf, 20.0), f"{red['VEL']:.2f}%"))
    if "FREE" in res.probes:
        free = np.max(np.abs(res.probes["FREE"]), axis=0)
        true = np.max(np.abs(res.probes["TRUE"]), axis=0)
        ok = bool(np.all(free <= 0.05 * true))
        out.append(Check("FREE probe perturbation <= 5% of true", ok,
                         " ".join(f"{f:.3e}/{t:.3e}" for f, t in zip(free, true))))
    sp = res.wave_speed.get("TRUE", math.nan)
    out.append(Check("wave speed within 10% of c", _in(abs(sp - c) / c, 0, 0.1), f"{sp:.4f} (c={c:g})"))
    if seconds is not None:
        out.append(_runtime("acoustic", seconds))
    return out


# hand-computed margins: (inputs, chi_margin, resolution_margin, beta)
CONDITION_CASES = [
    # 100 - 27/16 - 50; 1 - 2 * 0.01^2 * 100
    (dict(nu=1.0, chi=100.0, H=0.01), 48.3125, 0.98, 0.0),
    # no nudging: the chi condition fails
    (dict(nu=1.0, chi=0.0, H=0.01), -1.6875, 1.0, 0.0),
    # coarse observations: 1 - 2 * 0.1^2 * 100 fails the resolution condition
    (dict(nu=1.0, chi=100.0, H=0.1), 48.3125, -1.0, 0.0),
    # 4096 - 27/16 * 16 / 0.125 - 2048; 0.5 - 2 * 4096 / 64^2
    (dict(nu=0.5, chi=4096.0, H=1 / 64, grad_bound=2.0), 1832.0, -1.5, 0.0),
    # 10 - 27/16 * 16 / 8 - 2.5; 2 - 2 * 0.05^2 * 10; min(2.5, 8/4)
    (dict(nu=2.0, chi=10.0, H=0.1, C1=0.5, C2=2.0, alpha=0.25, mu1=8.0), 4.125, 1.95, 2.0),
]


def check_condition_cases(tol: float = 1e-12) -> Check:
    from .diagnostics import check_conditions

    bad = []
    for inputs, m7, m8, beta in CONDITION_CASES:
        r = check_conditions(**inputs)
        if max(abs(r.chi_margin - m7), abs(r.resolution_margin - m8), abs(r.beta - beta)) > tol:
            bad.append(f"{inputs}: got ({r.chi_margin}, {r.resolution_margin}, {r.beta})")
    fails = {(check_conditions(**i).chi_ok, check_conditions(**i).resolution_ok) for i, *_ in CONDITION_CASES}
    both = (False, True) in fails and (True, False) in fails
    detail = "; ".join(bad) if bad else f"{len(CONDITION_CASES)} tuples reproduced, both failure modes covered"
    return Check("condition checker margins", not bad and both, detail)
