"""Experiment configuration: flat ``key = value`` files plus command-line overrides.

Every experiment has its own set of accepted keys and defaults. Resolution
fills defaults, converts types and checks cross-key consistency (``h`` against
``n_cells``, ``t_final`` against ``n_steps``, at most one of ``theta``/``lam``).
Problems raise :class:`ConfigError`, which the CLI maps to exit code 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

EXPERIMENTS = ("decay-table", "convergence", "cn-demo", "arate", "stationary", "simulate")
PROFILES = ("zero", "cos", "sin", "hat", "wide-hat", "random", "analytic")


class ConfigError(ValueError):
    pass


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _choice(*options: str) -> Callable[[str], str]:
    def conv(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return conv


def _optional_str(text: str) -> str | None:
    return text or None


CONVERTERS: dict[str, Callable[[str], Any]] = {
    "degree": int,
    "n_cells": int,
    "h": float,
    "tau": float,
    "theta": float,
    "lam": float,
    "a_const": float,
    "damping": _float_list,
    "t_final": float,
    "n_steps": int,
    "seed": int,
    "backend": _choice("auto", "cython", "python"),
    "transfer": _choice("projection", "interpolation"),
    "init": _choice("analytic", "zero"),
    "u0": _choice(*PROFILES),
    "p0": _choice(*PROFILES),
    "levels": _int_list,
    "h_values": _float_list,
    "tau_values": _float_list,
    "a_values": _float_list,
    "sweep": _choice("h", "tau", "both"),
    "window": _float_list,
    "stride": int,
    "tol": float,
    "method": _choice("direct", "schur"),
    "solver": _choice("schur", "monolithic"),
    "out": str,
    "svg": _optional_str,
}

_OUTPUT_KEYS = ("out", "svg")
_COMMON = {"degree": 0, "backend": "auto", "out": "-", "svg": None}

DEFAULTS: dict[str, dict[str, Any]] = {
    "decay-table": {
        "a_const": 10.0, "n_cells": 1000, "tau": 1e-3, "t_final": 10.0,
        "init": "analytic", "transfer": "projection", "theta": None, "lam": None,
    },
    "convergence": {
        "a_const": 10.0, "t_final": 1.0, "sweep": "both",
        "h_values": [0.5, 0.25, 0.125, 0.0625], "tau_values": [0.5, 0.25, 0.125, 0.0625],
        "h": 1e-4, "tau": 1e-5, "transfer": "interpolation", "theta": None, "lam": None,
    },
    "cn-demo": {
        "a_const": 10.0, "tau": 1e-2, "t_final": 10.0, "levels": [7, 8, 9], "p0": "hat",
        "window": [5.0, 10.0], "stride": 10, "theta": None, "lam": None,
    },
    "arate": {
        "a_values": [2.0**j for j in range(-5, 11)], "n_cells": 20, "tau": 0.05,
        "t_final": 10.0, "theta": None, "lam": 1.0, "tol": 1e-8, "seed": 0,
    },
    "stationary": {"a_const": 1.0, "damping": None, "n_cells": 16, "method": "direct"},
    "simulate": {
        "a_const": 10.0, "damping": None, "n_cells": 64, "tau": 1e-2, "t_final": 1.0,
        "theta": None, "lam": None, "u0": "cos", "p0": "zero", "seed": 0, "stride": None,
        "solver": "schur",
    },
}

# keys resolved from one another rather than read directly
_DERIVED = {"h": "n_cells", "n_steps": "t_final"}


def allowed_keys(experiment: str) -> set[str]:
    keys = set(_COMMON) | set(DEFAULTS[experiment])
    for alias, base in _DERIVED.items():
        if base in keys:
            keys.add(alias)
    if experiment == "convergence":
        keys.discard("n_steps")
    return keys


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, str(path))


@dataclass
class ExperimentConfig:
    """Resolved configuration for one experiment run."""

    experiment: str
    values: dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def header(self) -> str:
        """One-line rendering of the resolved config (sorted keys).

        Output destinations are left out so that a run's CSV does not depend
        on where it is written.
        """
        parts = [f"experiment={self.experiment}"]
        for key in sorted(self.values):
            if key in _OUTPUT_KEYS:
                continue
            parts.append(f"{key}={_render(self.values[key])}")
        return "; ".join(parts)


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ",".join(_render(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _exact_ratio(total: float, step: float, what: str) -> int:
    n = int(round(total / step))
    if n < 1 or abs(n * step - total) > 1e-9 * max(1.0, abs(total)):
        raise ConfigError(f"{what}: {total} is not an integer multiple of {step}")
    return n


def resolve(experiment: str, raw: dict[str, str]) -> ExperimentConfig:
    """Convert raw strings, apply defaults and check consistency."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    allowed = allowed_keys(experiment)
    given: dict[str, Any] = {}
    for key, text in raw.items():
        if key not in CONVERTERS:
            raise ConfigError(f"unknown key {key!r}")
        if key not in allowed:
            raise ConfigError(f"key {key!r} does not apply to experiment {experiment!r}")
        try:
            given[key] = CONVERTERS[key](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc

    vals: dict[str, Any] = {**_COMMON, **DEFAULTS[experiment]}
    if experiment in ("arate",) and ("theta" in given or "lam" in given):
        vals["lam"] = None
    vals.update(given)

    if vals.get("theta") is not None and vals.get("lam") is not None:
        raise ConfigError("set at most one of theta and lam")
    if vals["degree"] < 0:
        raise ConfigError("degree must be >= 0")
    for key in ("tau", "t_final", "h", "a_const", "tol"):
        v = vals.get(key)
        if v is not None and not v > 0:
            raise ConfigError(f"{key} must be positive")
    theta = vals.get("theta")
    if theta is not None and not 0.0 <= theta <= 1.0:
        raise ConfigError("theta must lie in [0, 1]")
    if vals.get("lam") is not None and vals["lam"] < 0:
        raise ConfigError("lam must be >= 0")

    if "n_cells" in vals:
        if "h" in given and "n_cells" in given:
            if abs(given["h"] * given["n_cells"] - 1.0) > 1e-9:
                raise ConfigError("h * n_cells must equal 1")
        elif "h" in given:
            vals["n_cells"] = _exact_ratio(1.0, given["h"], "h")
        if vals["n_cells"] < 1:
            raise ConfigError("n_cells must be >= 1")
        vals["h"] = 1.0 / vals["n_cells"]
    elif "h" in vals:
        _exact_ratio(1.0, vals["h"], "h")

    if "t_final" in vals and "tau" in vals:
        if "n_steps" in given and "t_final" in given:
            if abs(given["n_steps"] * vals["tau"] - given["t_final"]) > 1e-9 * given["t_final"]:
                raise ConfigError("n_steps * tau must equal t_final")
        elif "n_steps" in given:
            if given["n_steps"] < 1:
                raise ConfigError("n_steps must be >= 1")
            vals["t_final"] = given["n_steps"] * vals["tau"]
        if experiment != "convergence":
            vals["n_steps"] = _exact_ratio(vals["t_final"], vals["tau"], "t_final/tau")

    lam = vals.get("lam")
    if lam is not None and "tau" in vals and experiment != "convergence":
        if 0.5 + lam * vals["tau"] > 1.0:
            raise ConfigError("1/2 + lam * tau exceeds 1")
    if vals.get("stride") is not None and vals["stride"] < 1:
        raise ConfigError("stride must be >= 1")
    for key in ("h_values", "tau_values", "a_values", "levels"):
        v = vals.get(key)
        if v is not None and (len(v) == 0 or any(x <= 0 for x in v)):
            raise ConfigError(f"{key} must be a non-empty list of positive numbers")
    if vals.get("window") is not None and (len(vals["window"]) != 2 or
                                           vals["window"][0] >= vals["window"][1]):
        raise ConfigError("window must be 'start, end' with start < end")
    if vals.get("damping") is not None and "damping" in given and "a_const" in given:
        raise ConfigError("set either a_const or damping, not both")
    return ExperimentConfig(experiment, vals)
