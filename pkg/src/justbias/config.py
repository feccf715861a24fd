"""Run configuration: a flat INI file with one section per component.

Unknown sections or keys are rejected.  ``dump_config`` writes every field, so
a dumped file (the run manifest) reproduces the run.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .biastests import WindowSpec, VerdictRule
from .estimation import DesignSpec
from .mcstudy import GridSpec
from .synthpanel import ConfigError, DgpConfig

# sections written by the pipeline that carry no settings
_IGNORED_SECTIONS = ("manifest", "files")
_ALIASES = {"dgp": {"lambda": "lam"}}


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    input: str = ""
    thin: bool = True
    mc: bool = False
    mc_test: str = "assumption1"
    trace_widths: str = "10:60"


@dataclass(frozen=True)
class RunConfig:
    dgp: DgpConfig = DgpConfig()
    windows: WindowSpec = WindowSpec()
    design: DesignSpec = DesignSpec()
    verdict: VerdictRule = VerdictRule()
    grid: GridSpec = GridSpec(reps=50)
    run: RunOptions = RunOptions()
    out: str = "justbias_out"

    @property
    def trace_windows(self) -> WindowSpec:
        return WindowSpec(parse_widths(self.run.trace_widths))

    def with_seed(self, seed: int) -> RunConfig:
        return dataclasses.replace(
            self,
            run=dataclasses.replace(self.run, seed=int(seed)),
            dgp=self.dgp.replace(seed=int(seed)),
            grid=dataclasses.replace(self.grid, master_seed=int(seed)),
        )


def parse_widths(text: str) -> tuple[int, ...]:
    """``"10,20,30"`` or ``"lo:hi"`` / ``"lo:hi:step"`` (inclusive)."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            lo, hi = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1
            return tuple(range(lo, hi + 1, step))
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as err:
        raise ConfigError(f"cannot parse widths {text!r}") from err


def _convert(value: str, default, name: str, optional: bool = False):
    v = value.strip()
    if optional and v.lower() == "none":
        return None
    try:
        if isinstance(default, bool):
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(v)
        if isinstance(default, float):
            return float(v)
        if isinstance(default, tuple):
            items = [p.strip() for p in v.split(",") if p.strip()]
            proto = default[0] if default else ""
            if isinstance(proto, str) or not default:
                return tuple(items)
            return tuple(type(proto)(p) if not isinstance(proto, int) else int(p) for p in items)
        if default is None or isinstance(default, str):
            return v
    except ValueError as err:
        raise ConfigError(f"{name}: cannot parse {value!r}") from err
    raise ConfigError(f"{name}: unsupported setting")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def _section_updates(obj, section: str, items: dict, skip=()) -> object:
    names = {f.name: f for f in dataclasses.fields(obj) if f.name not in skip}
    aliases = _ALIASES.get(section, {})
    changes = {}
    for key, raw in items.items():
        key = aliases.get(key, key)
        if key not in names:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        default = getattr(obj, key)
        optional = "None" in str(names[key].type)
        changes[key] = _convert(raw, default, f"[{section}] {key}", optional)
    try:
        return dataclasses.replace(obj, **changes)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"[{section}] {err}") from err


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse an INI file (or string) into a :class:`RunConfig`."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
    except (OSError, configparser.Error) as err:
        raise ConfigError(f"cannot read config: {err}") from err
    cfg = RunConfig()
    known = {"dgp", "windows", "design", "verdict", "grid", "run", *_IGNORED_SECTIONS}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")
    if parser.has_section("dgp"):
        cfg = dataclasses.replace(cfg, dgp=_section_updates(cfg.dgp, "dgp", dict(parser["dgp"])))
    if parser.has_section("windows"):
        items = dict(parser["windows"])
        unknown = set(items) - {"widths"}
        if unknown:
            raise ConfigError(f"[windows] unknown key {sorted(unknown)[0]!r}")
        if "widths" in items:
            try:
                cfg = dataclasses.replace(cfg, windows=WindowSpec(parse_widths(items["widths"])))
            except ValueError as err:
                raise ConfigError(f"[windows] {err}") from err
    if parser.has_section("design"):
        cfg = dataclasses.replace(cfg, design=_section_updates(cfg.design, "design", dict(parser["design"])))
    if parser.has_section("verdict"):
        cfg = dataclasses.replace(cfg, verdict=_section_updates(cfg.verdict, "verdict", dict(parser["verdict"])))
    grid_items = dict(parser["grid"]) if parser.has_section("grid") else {}
    if grid_items:
        cfg = dataclasses.replace(cfg, grid=_section_updates(cfg.grid, "grid", grid_items, skip=("base",)))
    if parser.has_section("run"):
        items = dict(parser["run"])
        out = items.pop("out", None)
        cfg = dataclasses.replace(cfg, run=_section_updates(cfg.run, "run", items))
        if out is not None:
            cfg = dataclasses.replace(cfg, out=out.strip())
    try:
        cfg.trace_windows
    except ValueError as err:
        raise ConfigError(f"[run] trace_widths: {err}") from err
    if "master_seed" not in grid_items:
        cfg = dataclasses.replace(cfg, grid=dataclasses.replace(cfg.grid, master_seed=cfg.run.seed))
    return dataclasses.replace(cfg, dgp=cfg.dgp.replace(seed=cfg.run.seed))


def dump_config(cfg: RunConfig) -> str:
    """Serialize every setting; ``load_config(text=dump_config(c))`` round-trips."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {f.name: _format(getattr(cfg.run, f.name)) for f in dataclasses.fields(cfg.run)}
    parser["dgp"] = {f.name: _format(getattr(cfg.dgp, f.name)) for f in dataclasses.fields(cfg.dgp) if f.name != "seed"}
    parser["windows"] = {"widths": _format(cfg.windows.widths_months)}
    parser["design"] = {f.name: _format(getattr(cfg.design, f.name)) for f in dataclasses.fields(cfg.design)}
    parser["verdict"] = {f.name: _format(getattr(cfg.verdict, f.name)) for f in dataclasses.fields(cfg.verdict)}
    parser["grid"] = {f.name: _format(getattr(cfg.grid, f.name)) for f in dataclasses.fields(cfg.grid) if f.name != "base"}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser[section].items()]
        lines.append("")
    return "\n".join(lines)


def write_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path
