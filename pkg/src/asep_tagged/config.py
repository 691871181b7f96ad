"""Flat ``key = value`` experiment configuration files.

One assignment per line; blank lines and ``#`` comments are ignored.  Keys
are typed against a registry; unknown or missing required keys are reported
by name.  Example::

    kind = tail
    estimator = importance
    p = 0.75
    rho = 0.5
    A = 0.6
    eps = 0.05
    N = 64, 128, 256
    trajectories = 20000
    seed = 1
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .model import DomainError, ModelParams, StrategyRegime


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


_SCHEMA: dict[str, tuple] = {
    # key: (parser, default); default None with required=True handled below
    "kind": (str, None),
    "p": (float, None),
    "rho": (float, None),
    "A": (float, 0.0),
    "regime": (str, "auto"),
    "eps": (float, 0.05),
    "N": (_parse_int_list, (64,)),
    "trajectories": (int, 1000),
    "seed": (int, 0),
    "horizon": (float, 1.0),
    "window_radius": (float, -1.0),
    "window_left": (float, -1.0),
    "estimator": (str, "direct"),
    "side": (str, "auto"),
    "check": (str, "lln"),
    "start": (str, "equilibrium"),
    "t": (float, 1.0),
    "t_grid": (_parse_float_list, (0.5, 1.0)),
    "L_grid": (_parse_float_list, (-1.5, -0.75, 0.0, 0.75, 1.5)),
    "eps_test": (float, 0.05),
    "lambda_grid": (_parse_float_list, (-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0)),
    "A_min": (float, -1.0),
    "A_max": (float, 1.0),
    "A_count": (int, 81),
    "threshold": (float, 0.02),
    "problem": (int, 1),
    "lambda_reg": (float, 1e4),
    "delta": (float, 1e-3),
    "solver_eps": (float, 1e-3),
    "grid_step": (float, 1e-3),
    "times": (_parse_float_list, (1.0,)),
    "record_path": (_parse_bool, False),
    "label": (str, ""),
}

_REQUIRED = {"kind", "p", "rho"}

_KINDS = {
    "rates", "tail", "lln", "poisson-law", "cumulant", "flux",
    "simulate", "hydro", "variational",
}


@dataclass
class ExperimentConfig:
    """Parsed, validated experiment description."""

    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        vals = object.__getattribute__(self, "values")
        if key in vals:
            return vals[key]
        raise AttributeError(key)

    @property
    def params(self) -> ModelParams:
        return ModelParams(p=self.values["p"], rho=self.values["rho"])

    @property
    def regime_enum(self) -> StrategyRegime | None:
        name = self.values["regime"]
        if name == "auto":
            return None
        try:
            return StrategyRegime(name)
        except ValueError:
            raise ConfigError(
                f"unknown regime {name!r}; expected auto or one of "
                f"{[r.value for r in StrategyRegime]}"
            )

    def echo(self) -> dict:
        out = dict(sorted(self.values.items()))
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    values: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        parser, _default = _SCHEMA[key]
        try:
            values[key] = parser(val)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {ln}: bad value for {key!r}: {exc}")
    if overrides:
        values.update(overrides)
    missing = sorted(_REQUIRED - values.keys())
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    for key, (parser, default) in _SCHEMA.items():
        values.setdefault(key, default)
    if values["kind"] not in _KINDS:
        raise ConfigError(
            f"unknown kind {values['kind']!r}; expected one of {sorted(_KINDS)}"
        )
    cfg = ExperimentConfig(values=values)
    try:
        cfg.params
    except DomainError as exc:
        raise ConfigError(str(exc))
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), overrides)
