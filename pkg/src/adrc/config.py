"""INI configuration: defaults, unit parsing and scenario scripts."""
from __future__ import annotations

import configparser
import re
from importlib import resources
from pathlib import Path

from .design import TuningConfig
from .errors import AdrcError, ConfigError
from .limiter import LimitSpec
from .sim import BuckConverterParams, Event, NoiseConfig, PIGains, Scenario, Variant

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_TIME_UNITS = {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6}
_RATE_UNITS = {"": 1.0, "a/s": 1.0, "a/ms": 1e3, "a/us": 1e6, "a/µs": 1e6}


def _quantity(text: str, units: dict[str, float], what: str) -> float:
    m = re.fullmatch(rf"\s*({_NUM})\s*([^\s\d].*?)?\s*", text)
    if not m:
        raise ConfigError(f"cannot parse {what} {text!r}")
    unit = (m.group(2) or "").lower()
    if unit not in units:
        raise ConfigError(f"unknown {what} unit {m.group(2)!r} in {text!r}")
    return float(m.group(1)) * units[unit]


def parse_time(text: str) -> float:
    """``"10ms"`` -> 0.01 (seconds)."""
    return _quantity(str(text), _TIME_UNITS, "time")


def parse_rate(text: str) -> float:
    """``"1A/ms"`` -> 1000.0 (A/s)."""
    return _quantity(str(text), _RATE_UNITS, "rate")


def parse_float(text: str, what: str = "value") -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse {what} {text!r}") from None


def _parse_int(text: str, what: str) -> int:
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be an integer, got {text!r}") from None


def parse_event(text: str) -> Event:
    parts = text.split()
    if len(parts) < 2:
        raise ConfigError(f"event line {text!r} needs '<time> <kind> [value]'")
    t = parse_time(parts[0])
    kind = parts[1]
    raw = " ".join(parts[2:]) or None
    try:
        return Event(t, kind, _event_value(kind, raw))
    except AdrcError as e:
        raise ConfigError(f"bad event {text!r}: {e}") from None


def _event_value(kind: str, raw: str | None):
    if raw is None:
        return None
    if kind in ("reference", "manual", "disturbance"):
        return parse_float(raw, kind)
    if kind.startswith("retune"):
        if raw.lower().startswith("x"):
            return ("x", parse_float(raw[1:], "factor"))
        return parse_float(raw, kind)
    if kind == "rate_limit":
        low = raw.lower()
        if low in ("on", "true"):
            return True
        if low in ("off", "false"):
            return False
        return parse_rate(raw)
    if kind == "magnitude_limit":
        lo, hi = (parse_float(v, "limit") for v in raw.split(","))
        return (lo, hi)
    raise ConfigError(f"event kind {kind!r} takes no value")


def load_config(path: str | Path | None = None) -> configparser.ConfigParser:
    """Packaged defaults, overlaid with ``path`` if given."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    cp.read_string(resources.files("adrc").joinpath("defaults.ini").read_text())
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            cp.read(p)
        except configparser.Error as e:
            raise ConfigError(str(e)) from None
    return cp


def tuning_from_config(cp, **overrides) -> TuningConfig:
    """``[tuning]`` section with keyword overrides on top. An override of
    ``t_settle`` drops configured explicit gains and vice versa."""
    sec = cp["tuning"]
    vals = {
        "order": _parse_int(sec.get("order", "1"), "order"),
        "b0": parse_float(sec["b0"], "b0") if sec.get("b0") else None,
        "t_sample": parse_time(sec.get("t_sample", "10us")),
        "t_settle": parse_time(sec["t_settle"]) if sec.get("t_settle") else None,
        "k_p": parse_float(sec["k_p"], "k_p") if sec.get("k_p") else None,
        "k_d": parse_float(sec["k_d"], "k_d") if sec.get("k_d") else None,
        "k_eso": parse_float(sec.get("k_eso", "5"), "k_eso"),
    }
    over = {k: v for k, v in overrides.items() if v is not None}
    if "t_settle" in over:
        vals.update(k_p=None, k_d=None)
    elif "k_p" in over or "k_d" in over:
        vals["t_settle"] = None
    vals.update(over)
    if vals["b0"] is None:
        raise ConfigError("tuning needs b0 (set [tuning] b0 or pass --b0)")
    return TuningConfig(**vals)


def limits_from_config(cp, t_sample: float) -> tuple[LimitSpec, float | None]:
    """Magnitude limits and the switchable rate bound (A/s)."""
    sec = cp["limits"]
    lo = parse_float(sec.get("u_min", "-inf"), "u_min")
    hi = parse_float(sec.get("u_max", "inf"), "u_max")
    rate = sec.get("rate")
    return LimitSpec(lo, hi), (parse_rate(rate) if rate else None)


def noise_from_config(cp) -> NoiseConfig:
    sec = cp["noise"]
    return NoiseConfig(parse_float(sec.get("sigma", "0"), "sigma"), int(sec.get("seed", "0")))


def pi_from_config(cp, t_sample: float) -> PIGains:
    sec = cp["pi"]
    return PIGains(parse_float(sec["k_p"], "pi k_p"), parse_float(sec["k_i"], "pi k_i"), t_sample)


def plant_from_config(cp) -> BuckConverterParams:
    sec = cp["plant"]
    kw = {k: (parse_time(v) if k == "t_switch" else parse_float(v, k)) for k, v in sec.items()}
    try:
        return BuckConverterParams(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [plant] section: {e}") from None


def scenario_names(cp) -> list[str]:
    return [s.split(".", 1)[1] for s in cp.sections() if s.startswith("scenario.")]


def scenario_from_section(sec, name: str, t_sample: float) -> Scenario:
    events = [parse_event(v) for k, v in sec.items() if re.fullmatch(r"e\d+", k)]
    events.sort(key=lambda e: e.t)
    try:
        return Scenario(
            name=name,
            horizon=parse_time(sec.get("horizon", "50ms")),
            events=tuple(events),
            y0=parse_float(sec.get("y0", "250"), "y0"),
            start=sec.get("start", "manual"),
            t_sample=t_sample,
            default_variant=Variant.parse(sec.get("variant", "nonincremental-standard")),
        )
    except AdrcError as e:
        raise ConfigError(f"scenario {name!r}: {e}") from None


def load_scenario(name_or_path: str, cp=None, t_sample: float | None = None) -> Scenario:
    """Builtin scenario by name (``a``..``d``) or a custom script file."""
    cp = cp or load_config()
    t_sample = t_sample or parse_time(cp["tuning"].get("t_sample", "10us"))
    key = f"scenario.{name_or_path.lower()}"
    if cp.has_section(key):
        return scenario_from_section(cp[key], name_or_path.lower(), t_sample)
    path = Path(name_or_path)
    if not path.is_file():
        raise ConfigError(f"unknown scenario {name_or_path!r} (builtins: {', '.join(scenario_names(cp))})")
    script = configparser.ConfigParser(inline_comment_prefixes=(";",))
    try:
        script.read(path)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    secs = [s for s in script.sections() if s == "scenario" or s.startswith("scenario.")]
    if not secs:
        raise ConfigError(f"{path} has no [scenario] section")
    return scenario_from_section(script[secs[0]], path.stem, t_sample)


def builtin_scenario(name: str) -> Scenario:
    return load_scenario(name)


__all__ = [
    "builtin_scenario",
    "limits_from_config",
    "load_config",
    "load_scenario",
    "noise_from_config",
    "parse_event",
    "parse_rate",
    "parse_time",
    "pi_from_config",
    "plant_from_config",
    "tuning_from_config",
]
