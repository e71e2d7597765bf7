"""Key-value configuration files for stacks, variation scenarios and runs.

Files hold one ``key = value`` pair per line; ``#`` starts a comment.
Precedence is command-line overrides, then file values, then defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .oracle import ChipStack, Layer
from .variation import BETA_L, BETA_TOX, DEFAULT_BETA, DEFAULT_ETA, K_SILICON, VariationParams


class ConfigError(ValueError):
    """A configuration file or override is malformed or names an unknown key."""


def parse_keyvalue(text: str, source: str = "<text>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        out[key] = value
    return out


def read_keyvalue(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"{p}: cannot read ({e.strerror})") from None
    return parse_keyvalue(text, str(p))


def write_keyvalue(path, values: dict) -> None:
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        out[k] = v
    return out


def _merge(defaults: dict, file_values: dict, overrides: dict, kind: str) -> dict:
    merged = dict(defaults)
    for src in (file_values, overrides):
        for k, v in src.items():
            if k not in defaults:
                raise ConfigError(f"unknown {kind} key '{k}'")
            merged[k] = v
    return merged


def _num(d: dict, key: str, typ=float):
    try:
        return typ(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"key '{key}' must be a {typ.__name__}, got {d[key]!r}") from None


# --------------------------------------------------------------------------
# stack

STACK_DEFAULTS = {
    "die_edge": 0.01,
    "n": 64,
    "ambient": 318.15,
    "sink_resistance": 0.3,
    "die_thickness": 0.15e-3,
    "die_conductivity": K_SILICON,
    "die_heat_capacity": 1.75e6,
    "tim_thickness": 0.02e-3,
    "tim_conductivity": 4.0,
    "tim_heat_capacity": 0.0,
    "spreader_thickness": 3.5e-3,
    "spreader_conductivity": 400.0,
    "spreader_heat_capacity": 0.0,
}


def stack_from(values: dict) -> ChipStack:
    d = _merge(STACK_DEFAULTS, {}, values, "stack")
    layers = tuple(
        Layer(name, _num(d, f"{name}_thickness"), _num(d, f"{name}_conductivity"),
              _num(d, f"{name}_heat_capacity"))
        for name in ("die", "tim", "spreader")
    )
    try:
        return ChipStack(
            die_edge=_num(d, "die_edge"), layers=layers, ambient=_num(d, "ambient"),
            sink_resistance=_num(d, "sink_resistance"), n=_num(d, "n", int),
        )
    except ValueError as e:
        raise ConfigError(f"invalid stack: {e}") from None


def load_stack(path=None, overrides: dict | None = None) -> ChipStack:
    file_values = read_keyvalue(path) if path else {}
    return stack_from(_merge(STACK_DEFAULTS, file_values, overrides or {}, "stack"))


# --------------------------------------------------------------------------
# variation

VARIATION_DEFAULTS = {
    "sigma_sys": 0.06,
    "sigma_rand": 0.03,
    "corr_range": 0.5,
    "seed": 0,
    "beta": DEFAULT_BETA,
    "beta_L": BETA_L,
    "beta_tox": BETA_TOX,
    "leak_total": 15.0,
    "dopant_spread": 0.0,
    "eta": DEFAULT_ETA,
    "conductivity_coeff": "auto",
    "probe": "spectral",
}


@dataclass(frozen=True)
class VariationConfig:
    params: VariationParams
    beta: float
    beta_L: float  # 1/m
    beta_tox: float  # 1/m
    leak_total: float
    dopant_spread: float
    eta: float
    conductivity_coeff: float | None  # None: fit from the power law
    probe: str


def variation_from(values: dict, die_edge: float = 0.01) -> VariationConfig:
    d = _merge(VARIATION_DEFAULTS, {}, values, "variation")
    cc = d["conductivity_coeff"]
    try:
        params = VariationParams(
            _num(d, "sigma_sys"), _num(d, "sigma_rand"), _num(d, "corr_range"),
            _num(d, "seed", int), die_edge,
        )
    except ValueError as e:
        raise ConfigError(f"invalid variation: {e}") from None
    if d["probe"] not in ("spectral", "center"):
        raise ConfigError("probe must be 'spectral' or 'center'")
    leak = _num(d, "leak_total")
    if leak < 0:
        raise ConfigError("leak_total must be non-negative")
    return VariationConfig(
        params, _num(d, "beta"), _num(d, "beta_L"), _num(d, "beta_tox"), leak,
        _num(d, "dopant_spread"), _num(d, "eta"),
        None if str(cc) == "auto" else _num(d, "conductivity_coeff"), d["probe"],
    )


def load_variation(path=None, overrides: dict | None = None, die_edge: float = 0.01):
    file_values = read_keyvalue(path) if path else {}
    return variation_from(_merge(VARIATION_DEFAULTS, file_values, overrides or {}, "variation"),
                          die_edge)


def split_overrides(overrides: dict) -> tuple[dict, dict]:
    """Route ``key=value`` overrides to the stack or variation section."""
    stack, var = {}, {}
    for k, v in overrides.items():
        if k in STACK_DEFAULTS:
            stack[k] = v
        elif k in VARIATION_DEFAULTS:
            var[k] = v
        else:
            raise ConfigError(f"unknown override key '{k}'")
    return stack, var


# --------------------------------------------------------------------------
# run scenarios

SCENARIO_DEFAULTS = {
    "name": "scenario",
    "stack": "",
    "variation": "",
    "power": "",
    "trace": "",
    "mode": "steady",
    "out": "",
    "seed": "",
}


def load_scenario(path) -> dict:
    """Scenario file; relative paths resolve against the file's directory."""
    p = Path(path)
    d = _merge(SCENARIO_DEFAULTS, read_keyvalue(p), {}, "scenario")
    if d["mode"] not in ("steady", "step", "trace", "montecarlo"):
        raise ConfigError(f"{p}: mode must be steady, step, trace or montecarlo")
    for key in ("stack", "variation", "power", "trace", "out"):
        if d[key]:
            d[key] = str((p.parent / d[key]).resolve())
    return d
