"""Run configuration stored as TOML, one section per module, with named presets."""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .market_data import default_curve_path
from .volatility import FORM_ABCD, FORM_HUMP, HumpParams, Variant

OUTPUT_ENV = "MFLMM_OUTPUT_DIR"
DEFAULT_OUTPUT = "mflmm_output"


class ConfigError(ValueError):
    """Validation failure; ``problems`` lists ``(field path, message)`` pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.problems))


@dataclass
class MarketSection:
    curve: str = "default"
    horizon: int = 50
    displacement: float = 0.01
    convention: str = "annual"

    def curve_path(self) -> Path:
        return default_curve_path() if self.curve == "default" else Path(self.curve)


@dataclass
class VolatilitySection:
    variant: str = "deterministic"
    form: str = FORM_ABCD
    a: float = 0.07
    b: float = 0.2
    c: float = 0.6
    d: float = 0.075
    threshold: str = "l10-displaced-squared"

    def hump(self) -> HumpParams:
        return HumpParams(self.a, self.b, self.c, self.d, self.form)


@dataclass
class EngineSection:
    particles: int = 10_000
    seed: int = 1
    workers: int = 1
    chunk_size: int = 4096
    backend: str = "auto"
    until: int = -1  # stop after this tenor index; -1 runs the full horizon


@dataclass
class PricingSection:
    strike: str = "atm"
    expiries: list = field(default_factory=list)
    swaption_expiry: int = 10
    swaption_tenor: int = 10
    nominal: float = 1.0
    z: float = 1.96


@dataclass
class CalibrationSection:
    implied_vol: float = 1.55
    fixing_time: float = 20.0 - 1.0 / 30.0
    strike: float = 0.02
    l0: float = 0.02
    threshold: float = 1.55 / 20.0
    h: float = 1.0 / 30.0
    paths: int = 100_000
    seed: int = 1
    tol: float = 1e-6
    max_iter: int = 10
    n_starts: int = 8
    a: float = 0.14
    b: float = 0.01
    c: float = 0.05
    d: float = 0.2


@dataclass
class DiagnosticsSection:
    thresholds: list = field(default_factory=lambda: [0.5, 1.0])
    histogram_times: list = field(default_factory=lambda: [10, 20, 30, 40])
    bin_width: float = 0.05
    bin_max: float = 2.0


@dataclass
class OutputSection:
    dir: str = ""
    formats: list = field(default_factory=lambda: ["binary"])

    def resolve_dir(self) -> Path:
        return Path(self.dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


_SECTIONS = {
    "market_data": MarketSection,
    "volatility": VolatilitySection,
    "mf_engine": EngineSection,
    "pricing": PricingSection,
    "calibration": CalibrationSection,
    "diagnostics": DiagnosticsSection,
    "output": OutputSection,
}


@dataclass
class RunConfig:
    market_data: MarketSection = field(default_factory=MarketSection)
    volatility: VolatilitySection = field(default_factory=VolatilitySection)
    mf_engine: EngineSection = field(default_factory=EngineSection)
    pricing: PricingSection = field(default_factory=PricingSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_toml())
        return path

    @classmethod
    def from_dict(cls, data: dict, check_files: bool = True) -> "RunConfig":
        problems = []
        sections = {}
        for name in data:
            if name not in _SECTIONS:
                problems.append((name, "unknown section"))
        for name, sec_cls in _SECTIONS.items():
            raw = data.get(name, {})
            if not isinstance(raw, dict):
                problems.append((name, "must be a table"))
                continue
            sections[name] = _build_section(name, sec_cls, raw, problems)
        if problems:
            raise ConfigError(problems)
        cfg = cls(**sections)
        cfg.validate(check_files)
        return cfg

    @classmethod
    def from_toml(cls, text: str, check_files: bool = True) -> "RunConfig":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError([("<file>", f"invalid TOML: {exc}")]) from None
        return cls.from_dict(data, check_files)

    @classmethod
    def load(cls, path, check_files: bool = True) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError([("<file>", f"config file {str(path)!r} not found")])
        return cls.from_toml(path.read_text(), check_files)

    def validate(self, check_files: bool = True) -> None:
        p = []
        m, v, e, c = self.market_data, self.volatility, self.mf_engine, self.calibration
        if check_files and not m.curve_path().is_file():
            p.append(("market_data.curve", f"file {str(m.curve_path())!r} does not exist"))
        if m.horizon < 2:
            p.append(("market_data.horizon", "must be >= 2"))
        if m.displacement < 0:
            p.append(("market_data.displacement", "must be >= 0"))
        if m.convention not in ("annual", "continuous"):
            p.append(("market_data.convention", "must be 'annual' or 'continuous'"))
        try:
            variant = Variant.parse(v.variant)
        except ValueError as exc:
            p.append(("volatility.variant", str(exc)))
            variant = None
        if variant is Variant.ANTICORRELATE and m.horizon % 2:
            p.append(("market_data.horizon", "must be even for the anticorrelate variant"))
        if v.form not in (FORM_ABCD, FORM_HUMP):
            p.append(("volatility.form", f"must be '{FORM_ABCD}' or '{FORM_HUMP}'"))
        if not _threshold_ok(v.threshold):
            p.append(
                (
                    "volatility.threshold",
                    "use a positive number, 'fixed:<value>', 'l10-squared', 'l10-displaced-squared' or 'inf'",
                )
            )
        elif str(v.threshold).lower().replace("_", "-").startswith("l10") and m.horizon < 10:
            p.append(("volatility.threshold", "the l10 policies need a horizon of at least 10 periods"))
        if e.particles < 2:
            p.append(("mf_engine.particles", "must be >= 2"))
        if e.workers < 1:
            p.append(("mf_engine.workers", "must be >= 1"))
        if e.chunk_size < 1:
            p.append(("mf_engine.chunk_size", "must be >= 1"))
        if not 0 <= e.seed < 2**64:
            p.append(("mf_engine.seed", "must be an unsigned 64-bit integer"))
        if not (e.until == -1 or 0 <= e.until <= m.horizon):
            p.append(("mf_engine.until", f"must be -1 (full run) or lie in 0..{m.horizon}"))
        if e.backend not in ("auto", "cython", "python"):
            p.append(("mf_engine.backend", "must be 'auto', 'cython' or 'python'"))
        pr = self.pricing
        if pr.strike != "atm":
            try:
                float(pr.strike)
            except ValueError:
                p.append(("pricing.strike", "must be 'atm' or a number"))
        if any(not 1 <= int(i) <= m.horizon for i in pr.expiries):
            p.append(("pricing.expiries", f"expiries must lie in 1..{m.horizon}"))
        if pr.swaption_expiry < 0 or pr.swaption_tenor < 1:
            p.append(("pricing.swaption_tenor", "need expiry >= 0 and tenor >= 1"))
        if c.implied_vol <= 0:
            p.append(("calibration.implied_vol", "must be > 0"))
        if c.h <= 0 or c.fixing_time <= 0:
            p.append(("calibration.h", "step and fixing time must be > 0"))
        elif abs(round(c.fixing_time / c.h) * c.h - c.fixing_time) > 1e-9 * max(1.0, c.fixing_time):
            p.append(("calibration.fixing_time", "must be a multiple of calibration.h"))
        if c.paths < 2:
            p.append(("calibration.paths", "must be >= 2"))
        if c.threshold <= 0:
            p.append(("calibration.threshold", "must be > 0"))
        if c.max_iter < 1:
            p.append(("calibration.max_iter", "must be >= 1"))
        d = self.diagnostics
        if not d.thresholds:
            p.append(("diagnostics.thresholds", "need at least one threshold"))
        if d.bin_width <= 0 or d.bin_max <= 0:
            p.append(("diagnostics.bin_width", "bin width and range must be > 0"))
        bad = [f for f in self.output.formats if f not in ("binary", "csv")]
        if bad:
            p.append(("output.formats", f"unknown formats {bad}; use 'binary' and/or 'csv'"))
        if p:
            raise ConfigError(p)


def _threshold_ok(value) -> bool:
    text = str(value).strip().lower().replace("_", "-")
    if text in ("l10-squared", "l10-displaced-squared", "inf", "none", "off"):
        return True
    if text.startswith("fixed:"):
        text = text[6:]
    try:
        x = float(text)
    except ValueError:
        return False
    return x > 0 and not math.isnan(x)


def _build_section(name, sec_cls, raw, problems):
    kwargs = {}
    known = {f.name: f for f in dataclasses.fields(sec_cls)}
    defaults = sec_cls()
    for key, value in raw.items():
        if key not in known:
            problems.append((f"{name}.{key}", "unknown field"))
            continue
        expected = type(getattr(defaults, key))
        try:
            kwargs[key] = _coerce(value, expected)
        except (TypeError, ValueError):
            problems.append((f"{name}.{key}", f"expected {expected.__name__}, got {value!r}"))
    return sec_cls(**kwargs)


def _coerce(value, expected):
    if expected is bool or isinstance(value, bool):
        if not isinstance(value, bool) or expected is not bool:
            raise TypeError
        return value
    if expected is int:
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int):
            raise TypeError
        return value
    if expected is float:
        if not isinstance(value, (int, float)):
            raise TypeError
        return float(value)
    if expected is str:
        if isinstance(value, (int, float)):
            return str(value)
        if not isinstance(value, str):
            raise TypeError
        return value
    if expected is list:
        if not isinstance(value, list):
            raise TypeError
        return list(value)
    return value


def _vol(variant, hump: HumpParams, threshold="l10-displaced-squared") -> VolatilitySection:
    a, b, c, d = hump.as_tuple()
    return VolatilitySection(variant, hump.form, a, b, c, d, threshold)


def preset(name: str) -> RunConfig:
    """Named parameter sets.

    ``rmw``          normal-state hump, ``(a + b tau) e^{-c tau} + d`` with (0.07, 0.2, 0.6, 0.075)
    ``rmw-literal``  the same numbers in ``(a tau + d) e^{-b tau} + c``
    ``excited``      ``(a tau + d) e^{-b tau} + c`` with (0.01, 0.05, 0.2, 0.14)
    ``toy``          single-caplet calibration setup
    """
    from .volatility import EXCITED, RMW, RMW_LITERAL, TOY

    key = name.strip().lower()
    cfg = RunConfig()
    if key == "rmw":
        cfg.volatility = _vol("deterministic", RMW)
    elif key == "rmw-literal":
        cfg.volatility = _vol("deterministic", RMW_LITERAL)
    elif key == "excited":
        cfg.volatility = _vol("deterministic", EXCITED)
    elif key == "toy":
        cfg.volatility = _vol("deterministic", TOY)
        a, b, c, d = TOY.as_tuple()
        cfg.calibration = CalibrationSection(a=a, b=b, c=c, d=d)
    else:
        raise ConfigError([("preset", f"unknown preset {name!r}; choose from {PRESETS}")])
    return cfg


PRESETS = ("rmw", "rmw-literal", "excited", "toy")
