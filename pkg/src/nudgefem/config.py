"""Scenario configuration: flat ``key = value`` files, per-scenario defaults, flag overrides.

Values are parsed as bool, int, float, comma lists or strings. Numeric parameters that
depend on the mesh (``dt``, ``chi``, ``mu1``, ``mu2``, ``H``) may be arithmetic
expressions in ``n``, e.g. ``dt = 1/n**2`` or ``mu1 = n**2``; they are evaluated per
mesh level by :meth:`ScenarioConfig.value`.
"""
from __future__ import annotations

import ast
import operator
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


SCENARIOS = ("accuracy-pressure", "accuracy-velocity", "taylor-green", "acoustic", "check-conditions")

_COMMON = dict(out_dir="results", threads=1, write_vtk=False, tol=1e-10, backend="auto",
               output_every=1)

DEFAULTS: dict[str, dict] = {
    "accuracy-pressure": dict(
        n=[8, 16, 32, 64], refine=True, box=[0.0, 1.0, 0.0, 1.0], dt="1/64", T=2.0,
        nu=1.0, c=10.0, eps=1e-3, P0=1e-3, chi="100", mu1="n**2", mu2="n**2",
        obs_kind="nodal", H="1/n", pressure_transport=True,
    ),
    "accuracy-velocity": dict(
        n=[8, 16, 32, 64], refine=True, box=[0.0, 1.0, 0.0, 1.0], dt="1/n**2", T=2.0,
        nu=1.0, c=1000.0, eps=1.0, chi="n**2", mu1="n**2", mu2="n**2",
        obs_kind="nodal", H="1/n", pressure_transport=False,
    ),
    "taylor-green": dict(
        n=[64], refine=True, box=[0.0, 1.0, 0.0, 1.0], dt="0.01", T=2.0,
        nu=0.3, c=1.0, chi="n**2", mu1="n**2", mu2="n**2",
        obs_kind="nodal", H="1/n", output_every=10,
        plateau_obs_kind="cartesian", plateau_H="1/8",
    ),
    "acoustic": dict(
        n=[32], n_true=128, refine=False, box=[0.0, 10.0, 0.0, 10.0], dt="0.05", T=3.5,
        nu=1e-3, c=1.0, P0=1e5, delta_p=1.0, sigma=0.5, center=[5.0, 5.0],
        chi="20", mu1="20", mu2="20", obs_kind="cartesian", H="0.3125",
        probes=[7.0, 8.0], probe_y=5.0, cases=["FREE", "VEL", "FULL"],
        linear=True,
    ),
    "check-conditions": dict(
        nu=1.0, chi="100", H="0.01", C1="auto", C2=1.0, alpha=0.5, grad_bound=1.0, mu1="0",
    ),
}

# keys that may be expressions in n
EXPRESSION_KEYS = ("dt", "chi", "mu1", "mu2", "H", "plateau_H")

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos}


def evaluate_expression(text: str, **names: float) -> float:
    """Evaluate an arithmetic expression over numbers and the given names."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name) and node.id in names:
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported expression {text!r}")

    try:
        tree = ast.parse(str(text).replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}") from exc
    return float(ev(tree))


def parse_value(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in t:
        return [parse_value(x) for x in t.split(",") if x.strip()]
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for k, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{k}: expected key=value, got {line!r}")
        key, val = (x.strip() for x in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{k}: empty key")
        out[key] = parse_value(val)
    return out


@dataclass
class ScenarioConfig:
    scenario: str
    params: dict = field(default_factory=dict)

    @classmethod
    def build(cls, scenario: str, file_values: dict | None = None, overrides: dict | None = None):
        """Defaults, then file values, then flag overrides (flags win)."""
        if scenario not in DEFAULTS:
            raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
        params = dict(_COMMON)
        params.update(DEFAULTS[scenario])
        file_values = dict(file_values or {})
        declared = file_values.pop("scenario", scenario)
        if declared != scenario:
            raise ConfigError(f"config file is for {declared!r}, not {scenario!r}")
        for source in (file_values, overrides or {}):
            for k, v in source.items():
                if v is None:
                    continue
                if k not in params:
                    raise ConfigError(f"unknown key {k!r} for scenario {scenario}")
                params[k] = v
        cfg = cls(scenario, params)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.params[key]

    def get(self, key, default=None):
        return self.params.get(key, default)

    def value(self, key: str, n: int | None = None) -> float:
        """Numeric value of ``key``, evaluating expressions in ``n``."""
        v = self.params[key]
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return float(v)
        names = {} if n is None else {"n": float(n)}
        return evaluate_expression(str(v), **names)

    @property
    def levels(self) -> list[int]:
        n = self.params.get("n", [])
        return [int(x) for x in (n if isinstance(n, list) else [n])]

    def validate(self) -> None:
        p = self.params
        for k in ("nu", "c", "T"):
            if k in p and not (isinstance(p[k], (int, float)) and p[k] > 0):
                raise ConfigError(f"{k} must be a positive number, got {p[k]!r}")
        if "n" in p:
            if not self.levels or any(n < 1 for n in self.levels):
                raise ConfigError(f"n must be positive integers, got {p['n']!r}")
        for k in EXPRESSION_KEYS:
            if k in p:
                for n in self.levels or [1]:
                    try:
                        val = self.value(k, n)
                    except (ConfigError, ZeroDivisionError) as exc:
                        raise ConfigError(f"bad value for {k}: {exc}") from exc
                    if val < 0 or (k in ("dt", "H") and val <= 0):
                        raise ConfigError(f"{k} evaluates to {val} at n={n}")
        for k in ("obs_kind", "plateau_obs_kind"):
            if k in p and p[k] not in ("cartesian", "mesh", "nodal"):
                raise ConfigError(f"{k} must be cartesian, mesh or nodal, got {p[k]!r}")
        for k in ("refine", "pressure_transport", "linear", "write_vtk"):
            if k in p and not isinstance(p[k], bool):
                raise ConfigError(f"{k} must be true or false, got {p[k]!r}")
        if "box" in p:
            b = p["box"]
            if not (isinstance(b, list) and len(b) == 4 and b[1] > b[0] and b[3] > b[2]):
                raise ConfigError(f"box must be x0,x1,y0,y1 with x1>x0, y1>y0; got {b!r}")
        if not isinstance(p.get("threads", 1), int) or p.get("threads", 1) < 1:
            raise ConfigError("threads must be a positive integer")
        if p.get("backend") not in ("auto", "pardiso", "superlu"):
            raise ConfigError(f"backend must be auto, pardiso or superlu, got {p.get('backend')!r}")
        if self.scenario == "acoustic":
            bad = set(p["cases"]) - {"FREE", "VEL", "FULL"}
            if bad:
                raise ConfigError(f"unknown acoustic cases {sorted(bad)}")

    def header_lines(self) -> list[str]:
        """``key=value`` lines that reproduce this configuration."""
        lines = [f"scenario={self.scenario}"]
        lines += [f"{k}={format_value(v)}" for k, v in sorted(self.params.items())]
        return lines

    def to_text(self) -> str:
        return "\n".join(self.header_lines()) + "\n"
