"""Run configuration files (TOML or JSON) with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .continuation import ContinuationConfig
from .errors import GeometryError, ParseError, RefugiaError, ValidationError
from .evolution import EvolutionConfig
from .geometry import DomainSpec, Grid, build_grid
from .steady import ModelParams, NewtonConfig

TOP_KEYS = {"seed", "output", "domain", "params", "newton", "continuation", "evolution",
            "multistart", "sweep"}


@dataclass(frozen=True)
class MultistartConfig:
    n_starts: int = 50


@dataclass(frozen=True)
class SweepConfig:
    alphas: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    lam_factors: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)


@dataclass
class RunConfig:
    domain: DomainSpec
    params: ModelParams
    newton: NewtonConfig = NewtonConfig()
    continuation: ContinuationConfig = ContinuationConfig()
    evolution: EvolutionConfig = EvolutionConfig()
    multistart: MultistartConfig = MultistartConfig()
    sweep: SweepConfig = SweepConfig()
    seed: int = 0
    output: str = "refugia_out"
    raw: dict = field(default_factory=dict, repr=False)
    _grid: Grid | None = field(default=None, repr=False)

    @property
    def grid(self) -> Grid:
        if self._grid is None:
            self._grid = build_grid(self.domain)
        return self._grid

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _line_of(text: str, key: str) -> str:
    pat = re.compile(rf'(^|[\s{{,"]){re.escape(key)}"?\s*[=:]')
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return f" (line {i}: {line.strip()})"
    return ""


def _float(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "-inf"):
        return float(v)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"expected a number, got {v!r}")
    return float(v)


def _build(cls, block: dict, name: str, text: str, convert: dict | None = None):
    if not isinstance(block, dict):
        raise ValidationError(f"[{name}] must be a table")
    names = {f.name for f in dataclasses.fields(cls) if not f.name.startswith("_")}
    unknown = sorted(set(block) - names)
    if unknown:
        raise ValidationError(f"unknown key {name}.{unknown[0]}" + _line_of(text, unknown[0]))
    kwargs = {}
    for k, v in block.items():
        try:
            kwargs[k] = (convert or {}).get(k, _default_convert(cls, k))(v)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{name}.{k}: {exc}" + _line_of(text, k)) from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, RefugiaError) as exc:
        raise ValidationError(f"[{name}] {exc}") from None


def _default_convert(cls, key):
    ftype = {f.name: f.type for f in dataclasses.fields(cls)}[key]
    ftype = str(ftype)
    if ftype.startswith("int"):
        return lambda v: int(v) if isinstance(v, int) and not isinstance(v, bool) else _bad_int(v)
    if ftype.startswith("float"):
        return lambda v: None if v is None else _float(v)
    if ftype == "bool":
        return lambda v: v if isinstance(v, bool) else _bad(v, "a boolean")
    if ftype == "str":
        return lambda v: v if isinstance(v, str) else _bad(v, "a string")
    return lambda v: v


def _bad_int(v):
    raise TypeError(f"expected an integer, got {v!r}")


def _bad(v, what):
    raise TypeError(f"expected {what}, got {v!r}")


def _window(v):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise TypeError("lam_window must be [low, high]")
    lo, hi = _float(v[0]), _float(v[1])
    if not lo < hi:
        raise ValueError("lam_window needs low < high")
    return (lo, hi)


def _float_tuple(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise TypeError("expected a nonempty list of numbers")
    return tuple(_float(x) for x in v)


def load_text(text: str, kind: str) -> dict:
    """Parse TOML or JSON text into a dict, reporting the error position."""
    if kind == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"JSON error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"TOML error: {exc}") from None
    if not isinstance(data, dict):
        raise ParseError("configuration must be a table at top level")
    return data


def config_from_dict(data: dict, text: str = "") -> RunConfig:
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ValidationError(f"unknown key {unknown[0]}" + _line_of(text, unknown[0]))
    if "domain" not in data:
        raise ValidationError("missing [domain] table")
    try:
        domain = DomainSpec.from_dict(data["domain"])
        grid = build_grid(domain)
    except (GeometryError, TypeError, ValueError) as exc:
        raise ValidationError(f"[domain] {exc}") from None
    params_block = {"lam": 1.0, "mu": 1.0} | dict(data.get("params", {}))
    cfg = RunConfig(
        domain=domain,
        params=_build(ModelParams, params_block, "params", text),
        newton=_build(NewtonConfig, data.get("newton", {}), "newton", text),
        continuation=_build(ContinuationConfig, data.get("continuation", {}), "continuation", text,
                            {"lam_window": _window}),
        evolution=_build(EvolutionConfig, data.get("evolution", {}), "evolution", text),
        multistart=_build(MultistartConfig, data.get("multistart", {}), "multistart", text),
        sweep=_build(SweepConfig, data.get("sweep", {}), "sweep", text,
                     {"alphas": _float_tuple, "lam_factors": _float_tuple}),
        raw=data,
    )
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValidationError("seed must be a nonnegative integer" + _line_of(text, "seed"))
    output = data.get("output", "refugia_out")
    if not isinstance(output, str) or not output:
        raise ValidationError("output must be a directory name")
    if cfg.evolution.scheme not in ("substituted", "flux"):
        raise ValidationError("evolution.scheme must be 'substituted' or 'flux'")
    if not math.isfinite(cfg.evolution.T) or cfg.evolution.T <= 0 or cfg.evolution.dt <= 0:
        raise ValidationError("evolution.T and evolution.dt must be positive")
    try:
        cfg.evolution.cutoff_width(cfg.params.alpha)
    except RefugiaError as exc:
        raise ValidationError(f"evolution.delta: {exc}") from None
    cfg.seed, cfg.output, cfg._grid = seed, output, grid
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a TOML or JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    kind = "json" if path.suffix.lower() == ".json" else "toml"
    return config_from_dict(load_text(text, kind), text)
