"""Configuration helpers for fine-tuning and experiment runs."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

ENV_PREFIX = "TAILOR_"

DEFAULTS = {
    "model": "ising:h=0.5",
    "tau": "1e-4",
    "chi": "20",
    "beta": "logspace:0:10:11",
    "finetune": "on",
    "method": "newton",
    "eta": "1e-3",
    "max_steps": "200",
    "f_tol": "1e-14",
    "grad_tol": "1e-10",
    "krylov_dim": "30",
    "grad_mode": "analytic",
    "step_mode": "gradient_normalized",
    "direction": "ascend_lambda",
    "update": "joint",
    "backtrack": "off",
    "trace_out": "",
    "checkpoint_dir": "",
    "resume": "off",
    "boundary_tol": "1e-12",
    "boundary_max_iters": "5000",
    "boundary_cache": "",
    "out": "",
    "json_out": "",
    "deterministic": "on",
    "seed": "0",
    "jobs": "1",
}

METHODS = ("newton", "gradient")
GRAD_MODES = ("analytic", "finite_difference_debug")
STEP_MODES = ("raw", "gradient_normalized")
DIRECTIONS = ("ascend_lambda", "ascend_f")
UPDATE_MODES = ("joint", "alternate")
_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


class ConfigError(ValueError):
    """Raised when a configuration value is missing or invalid."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


def _parse_flag(key: str, value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ConfigError(key, f"expected on/off, got {value!r}")


def _parse_number(key: str, value: Any, kind=float):
    try:
        number = kind(str(value).strip()) if not isinstance(value, (int, float)) else kind(value)
    except ValueError as exc:
        raise ConfigError(key, f"not a valid {kind.__name__}: {value!r}") from exc
    return number


def _choice(key: str, value: Any, options: Tuple[str, ...]) -> str:
    text = str(value).strip()
    if text not in options:
        raise ConfigError(key, f"expected one of {options}, got {text!r}")
    return text


def parse_beta_grid(text: str | float | Tuple[float, ...]) -> Tuple[float, ...]:
    """Parse ``1,2,4`` or ``logspace:a:b:n`` (n points 2^a ... 2^b)."""
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (tuple, list)):
        return tuple(float(b) for b in text)
    text = str(text).strip()
    if text.startswith("logspace:"):
        parts = text.split(":")[1:]
        if len(parts) != 3:
            raise ConfigError("beta", f"logspace needs a:b:n, got {text!r}")
        start = _parse_number("beta", parts[0])
        stop = _parse_number("beta", parts[1])
        count = _parse_number("beta", parts[2], int)
        if count < 1:
            raise ConfigError("beta", "logspace needs at least one point")
        return tuple(float(b) for b in np.logspace(start, stop, count, base=2.0))
    return tuple(_parse_number("beta", item) for item in text.split(",") if item.strip())


def parse_int_list(key: str, text: str | int | Tuple[int, ...]) -> Tuple[int, ...]:
    if isinstance(text, int):
        return (text,)
    if isinstance(text, (tuple, list)):
        return tuple(int(item) for item in text)
    return tuple(_parse_number(key, item, int) for item in str(text).split(",") if item.strip())


@dataclass(frozen=True)
class FineTuneConfig:
    """Settings for boundary fine-tuning.

    ``newton`` drives the stationarity residual of the free energy to zero;
    ``gradient`` is plain gradient motion controlled by eta, step_mode and
    direction. grad_tol is compared against 2 tau |grad f|.
    """

    method: str = "newton"
    eta: float = 1e-3
    max_steps: int = 200
    f_tol: float = 1e-14
    grad_tol: float = 1e-10
    krylov_dim: int = 30
    grad_mode: str = "analytic"
    step_mode: str = "gradient_normalized"
    direction: str = "ascend_lambda"
    update: str = "joint"
    backtrack: bool = False
    window: int = 10
    divergence_factor: float = 10.0

    def __post_init__(self) -> None:
        if not self.eta >= 0:
            raise ConfigError("eta", f"must be nonnegative, got {self.eta}")
        if not self.f_tol > 0:
            raise ConfigError("f_tol", f"must be positive, got {self.f_tol}")
        if not self.grad_tol >= 0:
            raise ConfigError("grad_tol", f"must be nonnegative, got {self.grad_tol}")
        if self.krylov_dim < 1:
            raise ConfigError("krylov_dim", f"must be at least 1, got {self.krylov_dim}")
        if self.max_steps < 0:
            raise ConfigError("max_steps", f"must be nonnegative, got {self.max_steps}")
        if self.window < 1:
            raise ConfigError("window", f"must be at least 1, got {self.window}")
        _choice("method", self.method, METHODS)
        _choice("grad_mode", self.grad_mode, GRAD_MODES)
        _choice("step_mode", self.step_mode, STEP_MODES)
        _choice("direction", self.direction, DIRECTIONS)
        _choice("update", self.update, UPDATE_MODES)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "FineTuneConfig":
        merged = {**DEFAULTS, **values}
        return cls(
            method=_choice("method", merged["method"], METHODS),
            eta=_parse_number("eta", merged["eta"]),
            max_steps=_parse_number("max_steps", merged["max_steps"], int),
            f_tol=_parse_number("f_tol", merged["f_tol"]),
            grad_tol=_parse_number("grad_tol", merged["grad_tol"]),
            krylov_dim=_parse_number("krylov_dim", merged["krylov_dim"], int),
            grad_mode=_choice("grad_mode", merged["grad_mode"], GRAD_MODES),
            step_mode=_choice("step_mode", merged["step_mode"], STEP_MODES),
            direction=_choice("direction", merged["direction"], DIRECTIONS),
            update=_choice("update", merged["update"], UPDATE_MODES),
            backtrack=_parse_flag("backtrack", merged["backtrack"]),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one ``tailor`` or ``sweep`` run needs."""

    model: str
    tau: float
    chis: Tuple[int, ...]
    betas: Tuple[float, ...]
    finetune: bool
    finetune_config: FineTuneConfig
    boundary_tol: float = 1e-12
    boundary_max_iters: int = 5000
    boundary_cache: Path | None = None
    out: Path | None = None
    json_out: Path | None = None
    trace_out: Path | None = None
    checkpoint_dir: Path | None = None
    resume: bool = False
    deterministic: bool = True
    seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ConfigError("tau", f"must be positive, got {self.tau}")
        if not self.chis:
            raise ConfigError("chi", "grid is empty")
        if any(chi < 1 for chi in self.chis):
            raise ConfigError("chi", f"bond dimensions must be positive, got {self.chis}")
        if not self.betas:
            raise ConfigError("beta", "grid is empty")
        for beta in self.betas:
            if not beta > 0 or round(beta / self.tau) < 1:
                raise ConfigError("beta", f"{beta} gives no Trotter layer at tau={self.tau}")
        if not self.boundary_tol > 0:
            raise ConfigError("boundary_tol", f"must be positive, got {self.boundary_tol}")
        if self.boundary_max_iters < 1:
            raise ConfigError("boundary_max_iters", "must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs", f"must be at least 1, got {self.jobs}")
        if self.resume and self.checkpoint_dir is None:
            raise ConfigError("resume", "needs checkpoint_dir")

    @property
    def chi(self) -> int:
        return self.chis[0]

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "ExperimentConfig":
        """Build from string (or already typed) values layered over DEFAULTS."""
        unknown = set(values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        merged = {**DEFAULTS, **{k: v for k, v in values.items() if v is not None}}

        def optional_path(key: str) -> Path | None:
            text = str(merged[key] or "").strip()
            return Path(text) if text else None

        return cls(
            model=str(merged["model"]).strip(),
            tau=_parse_number("tau", merged["tau"]),
            chis=parse_int_list("chi", merged["chi"]),
            betas=parse_beta_grid(merged["beta"]),
            finetune=_parse_flag("finetune", merged["finetune"]),
            finetune_config=FineTuneConfig.from_mapping(merged),
            boundary_tol=_parse_number("boundary_tol", merged["boundary_tol"]),
            boundary_max_iters=_parse_number("boundary_max_iters", merged["boundary_max_iters"], int),
            boundary_cache=optional_path("boundary_cache"),
            out=optional_path("out"),
            json_out=optional_path("json_out"),
            trace_out=optional_path("trace_out"),
            checkpoint_dir=optional_path("checkpoint_dir"),
            resume=_parse_flag("resume", merged["resume"]),
            deterministic=_parse_flag("deterministic", merged["deterministic"]),
            seed=_parse_number("seed", merged["seed"], int),
            jobs=_parse_number("jobs", merged["jobs"], int),
        )

    @classmethod
    def from_env(cls, overrides: Mapping[str, Any] | None = None) -> "ExperimentConfig":
        """Load TAILOR_<KEY> environment variables with defaults."""
        values = {
            key: os.getenv(f"{ENV_PREFIX}{key.upper()}", default)
            for key, default in DEFAULTS.items()
        }
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_file(cls, path: str | Path, overrides: Mapping[str, Any] | None = None) -> "ExperimentConfig":
        values = read_config_file(path)
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def with_overrides(self, **changes: Any) -> "ExperimentConfig":
        return replace(self, **changes)

    def as_flat(self) -> Dict[str, str]:
        """Every effective key in the ``key = value`` form ``from_file`` reads back."""
        ft = self.finetune_config
        on_off = {True: "on", False: "off"}
        return {
            "model": self.model,
            "tau": repr(self.tau),
            "chi": ",".join(str(chi) for chi in self.chis),
            "beta": ",".join(repr(beta) for beta in self.betas),
            "finetune": on_off[self.finetune],
            "method": ft.method,
            "eta": repr(ft.eta),
            "max_steps": str(ft.max_steps),
            "f_tol": repr(ft.f_tol),
            "grad_tol": repr(ft.grad_tol),
            "krylov_dim": str(ft.krylov_dim),
            "grad_mode": ft.grad_mode,
            "step_mode": ft.step_mode,
            "direction": ft.direction,
            "update": ft.update,
            "backtrack": on_off[ft.backtrack],
            "trace_out": str(self.trace_out or ""),
            "checkpoint_dir": str(self.checkpoint_dir or ""),
            "resume": on_off[self.resume],
            "boundary_tol": repr(self.boundary_tol),
            "boundary_max_iters": str(self.boundary_max_iters),
            "boundary_cache": str(self.boundary_cache or ""),
            "out": str(self.out or ""),
            "json_out": str(self.json_out or ""),
            "deterministic": on_off[self.deterministic],
            "seed": str(self.seed),
            "jobs": str(self.jobs),
        }

    def dump(self) -> str:
        return "".join(f"{key} = {value}\n" for key, value in self.as_flat().items())


def read_config_file(path: str | Path) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values: Dict[str, str] = {}
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}", f"expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values
