"""Run configuration: an INI-style document with ``[swaption]``, ``[market]``,
``[model]``, ``[numerics]`` and ``[output]`` sections."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass

from .market import (REFERENCE_FORWARDS, REFERENCE_STRIKE, REFERENCE_VOLS, MarketCurve,
                     SwaptionSpec, TenorStructure)
from .model import NUMERAIRE_CONVENTIONS, Measure, SabrLmmParams
from .montecarlo import SCHEMES, McConfig
from .pde import SolverConfig

MODES = ("full", "sparse", "mc", "compare")
FORMATS = ("csv", "json")
SOLVERS = ("gauss-seidel", "direct")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is set when the problem has a location."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class RunConfig:
    mode: str = "full"
    # swaption
    a: int = 1
    b: int = 2
    strike: float = REFERENCE_STRIKE
    # market
    dates: tuple[float, ...] = tuple(float(k) for k in range(len(REFERENCE_FORWARDS) + 1))
    forwards: tuple[float, ...] = REFERENCE_FORWARDS
    vols: tuple[float, ...] = REFERENCE_VOLS
    # model
    beta: float = 1.0
    sigma: float = 0.0
    phi: float = 0.4
    lam: float = 0.1
    v0: float = 1.0
    # numerics
    theta: float = 0.5
    time_steps: int = 256
    levels: tuple[int, int] = (3, 8)
    tolerance: float = 1e-6
    max_iterations: int = 10_000
    solver: str = "gauss-seidel"
    f_max: float = 0.1
    v_max: float = 3.5
    numeraire: str = "auto"
    paths: int = 1_000_000
    steps_per_year: int = 256
    seed: int = 2024
    scheme: str = "log-euler"
    workers: int = 1
    # output
    out: str | None = None
    fmt: str = "csv"
    timing: bool = True
    figure: bool = True

    # -- derived objects -------------------------------------------------
    @property
    def tenor(self) -> TenorStructure:
        return TenorStructure(self.dates)

    @property
    def curve(self) -> MarketCurve:
        return MarketCurve(self.forwards, self.vols)

    @property
    def swaption(self) -> SwaptionSpec:
        return SwaptionSpec(self.a, self.b, self.strike)

    @property
    def measure(self) -> Measure:
        return Measure.forward(self.a)

    @property
    def params(self) -> SabrLmmParams:
        return SabrLmmParams.from_curve(self.curve, beta=self.beta, sigma=self.sigma, phi=self.phi,
                                        lam=self.lam, v0=self.v0)

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.theta, self.time_steps, self.tolerance, self.max_iterations, self.solver)

    @property
    def mc_config(self) -> McConfig:
        return McConfig(self.paths, self.steps_per_year, self.seed, self.scheme)

    @property
    def level_range(self) -> range:
        return range(self.levels[0], self.levels[1] + 1)

    @property
    def dim(self) -> int:
        return self.b - self.a + 1

    def config_hash(self) -> str:
        """Digest of everything that affects the numbers (not workers or output settings)."""
        skip = {"workers", "out", "fmt", "timing", "figure"}
        payload = {k: v for k, v in dataclasses.asdict(self).items() if k not in skip}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def validated(self) -> "RunConfig":
        check(self)
        return self


# section -> key -> (field name, converter)
def _floats(text):
    return tuple(float(x) for x in re.split(r"[,\s]+", text.strip()) if x)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_levels(text) -> tuple[int, int]:
    """``"7"`` or ``"3..8"``."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", str(text))
    if not m:
        raise ValueError(f"levels must look like N or LO..HI, got {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.group(2) is not None else lo
    if hi < lo:
        raise ValueError(f"empty level range {lo}..{hi}")
    return lo, hi


def _choice(options):
    def conv(text):
        value = text.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return value
    return conv


SCHEMA = {
    "swaption": {"a": ("a", int), "b": ("b", int), "strike": ("strike", float)},
    "market": {"preset": (None, _choice(("reference",))), "dates": ("dates", _floats),
               "forwards": ("forwards", _floats), "vols": ("vols", _floats)},
    "model": {"beta": ("beta", float), "sigma": ("sigma", float), "phi": ("phi", float),
              "lambda": ("lam", float), "v0": ("v0", float)},
    "numerics": {"mode": ("mode", _choice(MODES)), "theta": ("theta", float),
                 "time_steps": ("time_steps", int), "levels": ("levels", parse_levels), "tolerance": ("tolerance", float),
                 "max_iterations": ("max_iterations", int), "solver": ("solver", _choice(SOLVERS)),
                 "f_max": ("f_max", float), "v_max": ("v_max", float),
                 "numeraire": ("numeraire", _choice(NUMERAIRE_CONVENTIONS)),
                 "paths": ("paths", int), "steps_per_year": ("steps_per_year", int),
                 "seed": ("seed", int), "scheme": ("scheme", _choice(SCHEMES)),
                 "workers": ("workers", int)},
    "output": {"path": ("out", str), "format": ("fmt", _choice(FORMATS)),
               "timing": ("timing", _bool), "figure": ("figure", _bool)},
}
REQUIRED_SECTIONS = ("swaption", "market")


def _key_lines(text: str) -> dict:
    """``(section, key) -> line number`` for error messages."""
    where, section = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            where.setdefault((section, None), n)
        elif "=" in line and section is not None:
            where.setdefault((section, line.split("=", 1)[0].strip().lower()), n)
    return where


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document."""
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       delimiters=("=",), interpolation=None, default_section="\0")
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header before any key", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line, expected key = value", lineno) from None

    lines = _key_lines(text)
    for section in parser.sections():
        if section.lower() not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section.lower(), None)))
    present = {s.lower() for s in parser.sections()}
    missing = [s for s in REQUIRED_SECTIONS if s not in present]
    if missing:
        raise ConfigError("missing required section(s): " + ", ".join(f"[{s}]" for s in missing))

    values = {}
    preset = False
    for section in parser.sections():
        schema = SCHEMA[section.lower()]
        for key, raw in parser.items(section):
            line = lines.get((section.lower(), key))
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            name, conv = schema[key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}", line) from None
            if name is None:
                preset = True
            else:
                values[name] = value
    market_keys = {"dates", "forwards", "vols"} & values.keys()
    if preset and market_keys:
        raise ConfigError("[market] takes either preset = reference or explicit data, not both")
    if not preset and not {"forwards", "vols"} <= market_keys:
        raise ConfigError("[market] needs forwards and vols (or preset = reference)")
    if "forwards" in values and "dates" not in values:
        values["dates"] = tuple(float(k) for k in range(len(values["forwards"]) + 1))
    return check(RunConfig(**values))


def check(cfg: RunConfig) -> RunConfig:
    """Validate the whole configuration before any computation; raise ``ConfigError``."""
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if cfg.fmt not in FORMATS:
        raise ConfigError(f"unknown format {cfg.fmt!r}")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    if cfg.levels[0] < 0 or cfg.levels[1] < cfg.levels[0]:
        raise ConfigError(f"level range {cfg.levels[0]}..{cfg.levels[1]} is empty or negative")
    try:
        tenor, curve, swaption = cfg.tenor, cfg.curve, cfg.swaption
        curve.check_tenor(tenor)
        swaption.check_tenor(tenor)
        if tenor.dates[0] != 0.0:
            raise ValueError("the first date must be 0 (valuation date)")
        cfg.params
        cfg.solver_config
        cfg.mc_config
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not (cfg.f_max > 0 and cfg.v_max > cfg.v0 > 0):
        raise ConfigError("need f_max > 0 and v_max > v0 > 0")
    if any(f >= cfg.f_max for f in cfg.forwards[cfg.a:cfg.b]):
        raise ConfigError("a swap forward lies outside [0, f_max]")
    if cfg.mode in ("sparse", "compare") and cfg.levels[0] < cfg.dim - 1:
        raise ConfigError(f"sparse level {cfg.levels[0]} is below d-1 = {cfg.dim - 1}")
    return cfg
