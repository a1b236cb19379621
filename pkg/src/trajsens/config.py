"""Experiment configuration files.

INI-style text read with :mod:`configparser`::

    [experiment]
    system = pendulum          ; registered fixture name
    T = 40
    h = 0.05
    seed = 0
    threads = 1
    output_dir = out/pendulum

    [system]                   ; keyword arguments of the fixture
    M = 1.0
    k = 9.81

    [initial]
    x0 = 0.0                   ; whitespace or comma separated vector
    x_neg1 = 0.0               ; or v0 = ..., giving x_neg1 = x0 - h*v0
    u_init = zero              ; zero | random | explicit vector of T*m values
    u_init_scale = 1.0         ; std. dev. for u_init = random

    [objective]
    target = 3.141592653589793
    q_diag = 100
    rho = 0.01
    mode = terminal

    [optimizer]
    hessian_mode = gauss_newton
    grad_tol = 1e-6
    ...

Unknown sections and keys are rejected. Errors carry the line number of the
offending entry.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .dynamics import DynamicalSystem, make_system
from .errors import ConfigError, TrajsensError
from .objectives import QuadraticTrackingObjective
from .optimizer import HESSIAN_MODES, OptimizerConfig
from .simulate import InitialConditions

SECTIONS = ("experiment", "system", "initial", "objective", "optimizer")
EXPERIMENT_KEYS = ("system", "t", "h", "seed", "threads", "output_dir")
INITIAL_KEYS = ("x0", "x_neg1", "v0", "u_init", "u_init_scale")
OBJECTIVE_KEYS = ("target", "q_diag", "rho", "mode")
OPTIMIZER_KEYS = tuple(f.name for f in fields(OptimizerConfig) if f.name not in ("threads", "backend"))

HESSIAN_ALIASES = {"gn": "gauss_newton", "full": "full", "gd": "gradient_descent"}


@dataclass
class ExperimentConfig:
    path: Optional[Path]
    system_name: str
    T: int
    h: float
    system_params: Dict[str, float]
    x0: np.ndarray
    x_neg1: np.ndarray
    u_init: str
    u_init_scale: float
    u_explicit: Optional[np.ndarray]
    target: np.ndarray
    q_diag: np.ndarray
    rho: float
    mode: str
    optimizer: OptimizerConfig
    output_dir: Path
    seed: int = 0
    lines: Dict[Tuple[str, str], int] = field(default_factory=dict, repr=False)

    def build_system(self) -> DynamicalSystem:
        try:
            return make_system(self.system_name, T=self.T, h=self.h, **self.system_params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for system {self.system_name!r}: {exc}",
                              self.lines.get(("experiment", "system"))) from None
        except TrajsensError as exc:
            raise ConfigError(f"cannot build system {self.system_name!r}: {exc}",
                              self.lines.get(("experiment", "system"))) from None

    def build_objective(self, n):
        target = _broadcast(self.target, n, "target", self.lines.get(("objective", "target")))
        q = _broadcast(self.q_diag, n, "q_diag", self.lines.get(("objective", "q_diag")))
        try:
            return QuadraticTrackingObjective(target, np.diag(q), rho=self.rho, mode=self.mode)
        except TrajsensError as exc:
            raise ConfigError(str(exc), self.lines.get(("objective", "q_diag"))) from None

    def initial_conditions(self, n) -> InitialConditions:
        x0 = _broadcast(self.x0, n, "x0", self.lines.get(("initial", "x0")))
        xm = _broadcast(self.x_neg1, n, "x_neg1", self.lines.get(("initial", "x_neg1")))
        return InitialConditions(x0, xm)

    def initial_controls(self, m):
        if self.u_init == "zero":
            return np.zeros((self.T, m))
        if self.u_init == "random":
            rng = np.random.default_rng(self.seed)
            return self.u_init_scale * rng.standard_normal((self.T, m))
        u = self.u_explicit
        if u.size != self.T * m:
            raise ConfigError(f"u_init has {u.size} values, expected T*m = {self.T * m}",
                              self.lines.get(("initial", "u_init")))
        return u.reshape(self.T, m)

    def build(self):
        """Return ``(system, objective, u_init, initial_conditions)``."""
        system = self.build_system()
        n, m = system.dims.n, system.dims.m
        return system, self.build_objective(n), self.initial_controls(m), self.initial_conditions(n)


def _broadcast(vec, n, name, line):
    vec = np.asarray(vec, dtype=float)
    if vec.size == 1:
        return np.full(n, float(vec[0]))
    if vec.size != n:
        raise ConfigError(f"{name} has {vec.size} entries, system state dimension is {n}", line)
    return vec


def _line_numbers(text):
    """Map ``(section, key)`` (lower case) to 1-based line numbers."""
    lines = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, None)] = lineno
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", s)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = lineno
    return lines


def _vector(text, name, line):
    parts = [p for p in re.split(r"[\s,]+", text.strip()) if p]
    if not parts:
        raise ConfigError(f"{name} is empty", line)
    try:
        vec = np.array([float(p) for p in parts])
    except ValueError:
        raise ConfigError(f"{name} must be a list of numbers, got {text!r}", line) from None
    if not np.all(np.isfinite(vec)):
        raise ConfigError(f"{name} must be finite", line)
    return vec


def _number(text, name, line, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise ConfigError(f"{name} must be {'an integer' if kind is int else 'a number'}, got {text!r}", line) from None
    if kind is float and not np.isfinite(value):
        raise ConfigError(f"{name} must be finite", line)
    return value


def _scalar_param(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_config(text, path=None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str  # system parameters are case sensitive (M vs m)
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("content before the first [section] header", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected 'key = value')", lineno) from None

    lines = _line_numbers(text)

    def line(sec, key=None):
        return lines.get((sec, key))

    for sec in parser.sections():
        if sec.lower() not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]; expected one of {', '.join(SECTIONS)}", line(sec.lower()))
    sections = {sec.lower(): parser[sec] for sec in parser.sections()}

    def section(name):
        return {k.lower(): v for k, v in sections[name].items()} if name in sections else {}

    allowed = {"experiment": EXPERIMENT_KEYS, "initial": INITIAL_KEYS,
               "objective": OBJECTIVE_KEYS, "optimizer": OPTIMIZER_KEYS}
    for sec, keys in allowed.items():
        for key in section(sec):
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", line(sec, key))

    if "experiment" not in sections:
        raise ConfigError("missing [experiment] section")
    ex = section("experiment")
    for key in ("system", "t", "h"):
        if key not in ex:
            raise ConfigError(f"[experiment] requires key {key!r}", line("experiment"))
    T = _number(ex["t"], "T", line("experiment", "t"), int)
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}", line("experiment", "t"))
    h = _number(ex["h"], "h", line("experiment", "h"))
    if h <= 0:
        raise ConfigError(f"h must be positive, got {h}", line("experiment", "h"))
    seed = _number(ex.get("seed", "0"), "seed", line("experiment", "seed"), int)
    threads = _number(ex.get("threads", "1"), "threads", line("experiment", "threads"), int)
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}", line("experiment", "threads"))
    output_dir = Path(ex.get("output_dir", "trajsens_out"))
    if path is not None and not output_dir.is_absolute():
        output_dir = Path(path).parent / output_dir

    params = {}
    for key, val in (sections["system"].items() if "system" in sections else ()):
        try:
            params[key] = _scalar_param(val)
        except ValueError:
            raise ConfigError(f"system parameter {key!r} must be numeric, got {val!r}",
                              line("system", key.lower())) from None

    ini = section("initial")
    if "x0" not in ini:
        raise ConfigError("[initial] requires x0", line("initial"))
    x0 = _vector(ini["x0"], "x0", line("initial", "x0"))
    if "x_neg1" in ini and "v0" in ini:
        raise ConfigError("give either x_neg1 or v0, not both", line("initial", "v0"))
    if "x_neg1" in ini:
        x_neg1 = _vector(ini["x_neg1"], "x_neg1", line("initial", "x_neg1"))
    elif "v0" in ini:
        x_neg1 = x0 - h * _vector(ini["v0"], "v0", line("initial", "v0"))
    else:
        x_neg1 = x0.copy()
    u_init_text = ini.get("u_init", "zero").strip()
    u_explicit = None
    if u_init_text.lower() in ("zero", "random"):
        u_init = u_init_text.lower()
    else:
        u_init = "explicit"
        u_explicit = _vector(u_init_text, "u_init", line("initial", "u_init"))
    u_init_scale = _number(ini.get("u_init_scale", "1.0"), "u_init_scale", line("initial", "u_init_scale"))

    ob = section("objective")
    if "target" not in ob:
        raise ConfigError("[objective] requires target", line("objective"))
    target = _vector(ob["target"], "target", line("objective", "target"))
    q_diag = _vector(ob.get("q_diag", "1.0"), "q_diag", line("objective", "q_diag"))
    if np.any(q_diag < 0):
        raise ConfigError("q_diag entries must be >= 0", line("objective", "q_diag"))
    rho = _number(ob.get("rho", "1e-2"), "rho", line("objective", "rho"))
    if rho < 0:
        raise ConfigError(f"rho must be >= 0, got {rho}", line("objective", "rho"))
    mode = ob.get("mode", "terminal").strip().lower()
    if mode not in QuadraticTrackingObjective.MODES:
        raise ConfigError(f"mode must be terminal or full, got {mode!r}", line("objective", "mode"))

    opt_kwargs = {"threads": threads}
    opt_section = section("optimizer")
    for f in fields(OptimizerConfig):
        if f.name in opt_section:
            raw = opt_section[f.name].strip()
            ln = line("optimizer", f.name)
            if f.name == "hessian_mode":
                raw = HESSIAN_ALIASES.get(raw, raw)
                if raw not in HESSIAN_MODES:
                    raise ConfigError(f"hessian_mode must be one of {HESSIAN_MODES}, got {raw!r}", ln)
                opt_kwargs[f.name] = raw
            elif f.name in ("max_iters", "ls_max_backtracks"):
                opt_kwargs[f.name] = _number(raw, f.name, ln, int)
            else:
                opt_kwargs[f.name] = _number(raw, f.name, ln)
    try:
        opt = OptimizerConfig(**opt_kwargs)
    except TrajsensError as exc:
        raise ConfigError(str(exc), line("optimizer")) from None

    return ExperimentConfig(
        path=Path(path) if path else None,
        system_name=ex["system"].strip(),
        T=T,
        h=h,
        system_params=params,
        x0=x0,
        x_neg1=x_neg1,
        u_init=u_init,
        u_init_scale=u_init_scale,
        u_explicit=u_explicit,
        target=target,
        q_diag=q_diag,
        rho=rho,
        mode=mode,
        optimizer=opt,
        output_dir=output_dir,
        seed=seed,
        lines=lines,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)
