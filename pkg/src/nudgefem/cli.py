"""Command-line harness: ``nudgefem <scenario> [options]``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 a ``--check``
threshold failed.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import checks
from . import diagnostics as dg
from . import mesh as msh
from . import observation as ob
from . import scenarios as sc
from . import writers
from .config import SCENARIOS, ConfigError, ScenarioConfig, parse_value, read_config_file
from .linalg import SingularSystem

log = logging.getLogger("nudgefem")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--n", help="mesh level(s), comma separated")
    common.add_argument("--dt", help="time step; may be an expression in n, e.g. 1/n**2")
    common.add_argument("--chi")
    common.add_argument("--mu1")
    common.add_argument("--mu2")
    common.add_argument("--threads", type=int)
    common.add_argument("--write-vtk", dest="write_vtk", action="store_true", default=None)
    common.add_argument("--check", action="store_true", help="apply acceptance thresholds (exit 4 on failure)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nudgefem", description="Pressure-velocity nudging benchmarks.")
    sub = p.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name, parents=[common])
        if name == "taylor-green":
            sp.add_argument("--plateau", action="store_true",
                            help="also nudge with observation spacing H/2 and report the plateau ratio")
        if name == "check-conditions":
            for k in ("nu", "H", "C1", "C2", "alpha", "grad-bound"):
                sp.add_argument(f"--{k}", dest=k.replace("-", "_"))
    return p


def _overrides(args) -> dict:
    out = {}
    for key in ("out_dir", "n", "dt", "chi", "mu1", "mu2", "threads", "write_vtk",
                "nu", "H", "C1", "C2", "alpha", "grad_bound"):
        v = getattr(args, key, None)
        if v is None:
            continue
        out[key] = parse_value(v) if isinstance(v, str) and key not in ("out_dir", "dt", "chi", "mu1", "mu2", "H") else v
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v)
    if isinstance(out.get("n"), int):
        out["n"] = [out["n"]]
    return out


def load_config(args) -> ScenarioConfig:
    file_values = read_config_file(args.config) if args.config else {}
    return ScenarioConfig.build(args.scenario, file_values, _overrides(args))


def _report(results: list) -> bool:
    for c in results:
        print(c.line())
    return all(c.passed for c in results)


# --- scenario commands -----------------------------------------------------------------
def cmd_accuracy(cfg: ScenarioConfig, check: bool) -> int:
    t0 = time.perf_counter()
    rows = sc.run_accuracy(cfg)
    secs = time.perf_counter() - t0
    out = Path(cfg["out_dir"])
    path = writers.write_csv(out / f"{cfg.scenario.replace('-', '_')}.csv", "accuracy",
                             [r.as_row() for r in rows], cfg.header_lines())
    for r in rows:
        print(f"n={r.n:4d} vel={r.vel_l2_error:.6e} rate={r.vel_rate:.3f} "
              f"p={r.p_l2_error:.6e} rate={r.p_rate:.3f} ({r.seconds:.1f}s)")
    print(f"wrote {path}")
    failed = [r for r in rows if r.error]
    code = EXIT_OK
    if check:
        fn = checks.check_accuracy_pressure if cfg.scenario == "accuracy-pressure" else checks.check_accuracy_velocity
        if not _report(fn(rows, secs)):
            code = EXIT_CHECK
    if failed:
        for r in failed:
            print(f"solver failure at n={r.n}: {r.error}", file=sys.stderr)
        return EXIT_SOLVER
    return code


def cmd_taylor_green(cfg: ScenarioConfig, check: bool, plateau: bool) -> int:
    n = cfg.levels[0]
    main_key = (cfg["obs_kind"], cfg.value("H", n))
    pkeys = sc.plateau_observers(cfg) if plateau else []
    observers = [main_key] + [k for k in pkeys if k != main_key]
    res = sc.run_taylor_green(cfg, observers, snapshots=cfg["write_vtk"])
    out = Path(cfg["out_dir"])
    head = cfg.header_lines()
    writers.write_csv(out / "stats_reference.csv", "stats", sc.stats_rows(res.reference, relative=False), head)
    for key in observers:
        name = "stats_nudged.csv" if key == main_key else f"stats_{sc.observer_label(key)}.csv"
        writers.write_csv(out / name, "stats", sc.stats_rows(res.nudged[key]),
                          head + [f"observation={key[0]}", f"observation_H={key[1]!r}"])
    if cfg["write_vtk"]:
        for label, snap in res.snapshots.items():
            writers.write_vtk(out / f"{label}_t{cfg['T']:g}.vtk", res.mesh, snap.velocity, snap.pressure,
                              snap.vorticity, title=f"{label} t={cfg['T']:g}")
    final = res.nudged[main_key][-1]
    print(f"t={final.t:g} rel_vel_err={final.relative_velocity_error:.3e} "
          f"rel_p_err={final.relative_pressure_error:.3e} ({res.seconds:.1f}s)")
    results = checks.check_taylor_green(res.reference, res.nudged[main_key], res.seconds) if check else []
    if plateau:
        ratio, plat = sc.plateau_ratio(res, pkeys)
        print("plateaus: " + " ".join(f"{k[0]} H={k[1]:g}: {v:.3e}" for k, v in plat.items()) + f" ratio={ratio:.3f}")
        if check:
            results.append(checks.check_plateau(ratio))
    if check and not _report(results):
        return EXIT_CHECK
    return EXIT_OK


def cmd_acoustic(cfg: ScenarioConfig, check: bool) -> int:
    t0 = time.perf_counter()
    res = sc.run_acoustic(cfg)
    secs = time.perf_counter() - t0
    out = Path(cfg["out_dir"])
    head = cfg.header_lines()
    xs = list(cfg["probes"])
    rows = [(t, case, x, pr[k, j]) for case, pr in res.probes.items()
            for k, t in enumerate(res.times[:len(pr)]) for j, x in enumerate(xs)]
    writers.write_csv(out / "probes.csv", "probes", rows, head)
    rows = [(case, res.final_errors[case], res.reductions.get(case, math.nan)) for case in res.final_errors]
    writers.write_csv(out / "acoustic_summary.csv", "acoustic_summary", rows, head)
    rows = [(t, case, e) for case, err in res.errors.items() for t, e in zip(res.times, err)]
    writers.write_csv(out / "acoustic_errors.csv", "acoustic_errors", rows, head)
    rows = [(case, pk[0], pk[-1], res.wave_speed[case]) for case, pk in res.peak_times.items()]
    writers.write_csv(out / "wave_speed.csv", "wave_speed", rows, head)
    for case in res.final_errors:
        print(f"{case:5s} final L2 p error {res.final_errors[case]:.6e} "
              f"reduction {res.reductions.get(case, math.nan):6.2f}%")
    print(f"wave speed (TRUE) {res.wave_speed.get('TRUE', math.nan):.4f}; total {secs:.1f}s")
    if check and not _report(checks.check_acoustic(res, cfg["c"], secs)):
        return EXIT_CHECK
    return EXIT_OK


def measured_c1(H: float, n: int | None = None) -> float:
    """A1 ratio of the cell-average operator on a smooth test field."""
    n = n or max(2, int(round(2.0 / H)))
    m = msh.build_structured(n)
    op = ob.make_operator("cartesian", H, m)
    tp = 2 * np.pi
    return ob.a1_ratio(lambda x, y: np.sin(tp * x) * np.sin(tp * y),
                       lambda x, y: (tp * np.cos(tp * x) * np.sin(tp * y), tp * np.sin(tp * x) * np.cos(tp * y)), op)


def cmd_check_conditions(cfg: ScenarioConfig, check: bool) -> int:
    H = cfg.value("H")
    C1 = cfg["C1"]
    C1 = measured_c1(H) if C1 == "auto" else float(C1)
    rep = dg.check_conditions(cfg["nu"], cfg.value("chi"), H, C1, float(cfg["C2"]), float(cfg["alpha"]),
                              float(cfg["grad_bound"]), cfg.value("mu1"))
    for k, v in rep.__dict__.items():
        print(f"{k}={v!r}")
    print(f"chi_ok={rep.chi_ok} resolution_ok={rep.resolution_ok} passed={rep.passed}")
    if check and not rep.passed:
        return EXIT_CHECK
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if cfg.scenario in ("accuracy-pressure", "accuracy-velocity"):
            return cmd_accuracy(cfg, args.check)
        if cfg.scenario == "taylor-green":
            return cmd_taylor_green(cfg, args.check, args.plateau)
        if cfg.scenario == "acoustic":
            return cmd_acoustic(cfg, args.check)
        return cmd_check_conditions(cfg, args.check)
    except SingularSystem as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
