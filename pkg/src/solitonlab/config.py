"""Experiment configs: flat INI files with typed fields and declared expectations.

Sections
    [experiment]   name, job, backend, seed
    [geometry]     n, M, L, shape, amplitude, factors
    [perturbation] epsilon
    [solver]       kind, horizon, entropy_tol, residual_tol, dt_max,
                   curvature_ceiling, fd_step, samples, max_steps
    [expect]       quantity = op args   (see ``Expectation``)
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass
from pathlib import Path

JOBS = ("entropy", "flow", "spectrum", "variations", "lojasiewicz", "isd")
BACKENDS = ("warped", "homogeneous")
SHAPES = ("round", "bump")
OPS = ("approx", "lt", "le", "gt", "ge", "between", "eq", "true", "false")


class ConfigError(ValueError):
    """Config problem with the file, line and field it was found at."""

    def __init__(self, message, path=None, line=None, field=None):
        where = ":".join(str(p) for p in (path, line) if p is not None)
        prefix = f"{where}: " if where else ""
        what = f"[{field}] " if field else ""
        super().__init__(f"{prefix}{what}{message}")
        self.path, self.line, self.field = path, line, field


@dataclass(frozen=True)
class Expectation:
    """One declared check on a job output.

    approx V TOL   |q - V| <= TOL (TOL scaled by the tolerance scale)
    lt V / le V    q < V / q <= V (a positive V is an error bound and is scaled)
    gt V / ge V    q > V / q >= V
    between A B    A <= q <= B
    eq TEXT        string equality
    true / false   boolean output
    """

    quantity: str
    op: str
    args: tuple

    def text(self) -> str:
        return " ".join([self.op, *map(str, self.args)])


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    job: str
    backend: str = "warped"
    seed: int = 0
    n: int = 2
    M: int = 400
    L: float = math.pi
    shape: str = "round"
    amplitude: float = 0.0
    factors: tuple = ()
    epsilon: float = 0.0
    kind: str = "modified"
    horizon: float = 20.0
    entropy_tol: float = 1e-10
    residual_tol: float = 1e-7
    dt_max: float = 0.5
    curvature_ceiling: float = 1e4
    fd_step: float = 1e-2
    samples: int = 20
    max_steps: int = 20000
    expectations: tuple = ()
    source: str = ""

    def canonical(self) -> str:
        """Stable text form of every field that affects the outputs."""
        skip = {"source", "expectations"}
        parts = [f"{k}={getattr(self, k)!r}" for k in self.__dataclass_fields__ if k not in skip]
        parts += [f"expect.{e.quantity}={e.text()}" for e in self.expectations]
        return "\n".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields["seed"] = int(seed)
        return ExperimentConfig(**fields)


# section -> key -> (type, validator or None)
_POSITIVE = lambda v: v > 0  # noqa: E731
_SCHEMA = {
    "experiment": {"name": (str, None), "job": (str, JOBS.__contains__),
                   "backend": (str, BACKENDS.__contains__), "seed": (int, lambda v: v >= 0)},
    "geometry": {"n": (int, lambda v: v >= 2), "M": (int, lambda v: v >= 16), "L": (float, _POSITIVE),
                 "shape": (str, SHAPES.__contains__), "amplitude": (float, lambda v: abs(v) < 1),
                 "factors": (str, None)},
    "perturbation": {"epsilon": (float, lambda v: abs(v) < 1)},
    "solver": {"kind": (str, ("normalized", "tau", "modified").__contains__),
               "horizon": (float, _POSITIVE), "entropy_tol": (float, _POSITIVE),
               "residual_tol": (float, _POSITIVE), "dt_max": (float, _POSITIVE),
               "curvature_ceiling": (float, _POSITIVE), "fd_step": (float, _POSITIVE),
               "samples": (int, _POSITIVE), "max_steps": (int, _POSITIVE)},
}


def _line_of(text: str, section: str, key: str | None = None):
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", line, re.I):
            return i
    return None


def _parse_factors(value, err):
    out = []
    for tok in filter(None, (t.strip() for t in value.split(","))):
        m = re.fullmatch(r"[sS](\d+)", tok)
        if not m or int(m.group(1)) < 2:
            raise err(f"factor {tok!r} is not a sphere S<k> with k >= 2")
        out.append(int(m.group(1)))
    return tuple(out)


def _parse_expectation(key, value, err) -> Expectation:
    toks = value.split()
    if not toks or toks[0] not in OPS:
        raise err(f"expectation must start with one of {OPS}")
    op, rest = toks[0], toks[1:]
    arity = {"approx": 2, "lt": 1, "le": 1, "gt": 1, "ge": 1, "between": 2, "true": 0, "false": 0}
    if op == "eq":
        if not rest:
            raise err("eq needs a value")
        return Expectation(key, op, (" ".join(rest),))
    if len(rest) != arity[op]:
        raise err(f"{op} takes {arity[op]} numeric argument(s)")
    try:
        args = tuple(float(t) for t in rest)
    except ValueError:
        raise err(f"non-numeric argument in {value!r}") from None
    if op == "approx" and not args[1] > 0:
        raise err("approx tolerance must be positive")
    if op == "between" and args[0] > args[1]:
        raise err("between bounds are reversed")
    return Expectation(key, op, args)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " "), source, getattr(exc, "lineno", None)) from None
    known = set(_SCHEMA) | {"expect"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section; expected one of {sorted(known)}", source,
                              _line_of(text, sec), sec)
    fields = {}
    for sec, keys in _SCHEMA.items():
        if not cp.has_section(sec):
            continue
        for key, raw in cp.items(sec):
            line = _line_of(text, sec, key)
            where = f"{sec}.{key}"
            if key not in keys:
                raise ConfigError("unknown field", source, line, where)

            def err(msg, line=line, where=where):
                return ConfigError(msg, source, line, where)

            typ, ok = keys[key]
            if key == "factors":
                fields[key] = _parse_factors(raw, err)
                continue
            try:
                value = typ(raw.strip())
            except ValueError:
                raise err(f"expected {typ.__name__}, got {raw!r}") from None
            if isinstance(value, float) and not math.isfinite(value):
                raise err("value must be finite")
            if ok is not None and not ok(value):
                raise err(f"invalid value {raw!r}")
            fields[key] = value
    for key in ("name", "job"):
        if key not in fields:
            raise ConfigError("required field missing", source, None, f"experiment.{key}")
    expectations = []
    if cp.has_section("expect"):
        for key, raw in cp.items("expect"):
            line = _line_of(text, "expect", key)

            def err(msg, line=line, key=key):
                return ConfigError(msg, source, line, f"expect.{key}")

            expectations.append(_parse_expectation(key, raw, err))
    fields["expectations"] = tuple(expectations)
    fields["source"] = source
    cfg = ExperimentConfig(**fields)
    if cfg.backend == "homogeneous" and not cfg.factors:
        raise ConfigError("homogeneous backend needs a factor list", source,
                          _line_of(text, "geometry"), "geometry.factors")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))


def bundled_configs() -> list:
    """The shipped experiment configs, one per acceptance experiment."""
    return sorted((Path(__file__).parent / "configs").glob("*.ini"))
