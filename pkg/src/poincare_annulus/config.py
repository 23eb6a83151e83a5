"""Run configuration: JSON file plus command-line overrides, and output metadata."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .model import BASE_PARAMS, PARAM_KEYS, Params

__all__ = ["RunConfig", "ConfigError", "metadata", "metadata_lines"]

COMMANDS = ("audit", "planar", "annulus", "poincare", "sweep", "model-map")
FORMATS = ("csv", "svg", "json")
MODEL_MAP_KEYS = ("beta", "u", "k1", "k2")


class ConfigError(ValueError):
    """Bad or incomplete configuration; reported as a usage error."""


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=BASE_PARAMS.to_dict)
    rtol: float = 1e-10
    atol: float = 1e-12
    epsilon: float = 0.1
    rectangle: str = "outer"
    nu_min: float = 1.0
    nu_max: float = 5.0
    steps: int = 50
    burn_in: int = 500
    samples: int = 200
    seed: int = 0
    model_map: dict = field(default_factory=dict)
    beta_min: float | None = None
    beta_max: float | None = None
    out: str = "out"
    jobs: int = 1
    resume: bool = False
    formats: list = field(default_factory=lambda: list(FORMATS))

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        missing = [k for k in PARAM_KEYS if k not in self.params]
        if missing:
            raise ConfigError(f"missing parameter key(s): {', '.join(missing)}")
        unknown = set(self.params) - set(PARAM_KEYS)
        if unknown:
            raise ConfigError(f"unknown parameter key(s): {', '.join(sorted(unknown))}")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.burn_in < 0 or self.samples < 0:
            raise ConfigError("burn_in and samples must be nonnegative")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if not (0 < self.rtol <= 1e-2 and 0 < self.atol <= 1e-2):
            raise ConfigError("tolerances must lie in (0, 1e-2]")
        if self.rectangle not in ("inner", "outer"):
            raise ConfigError("rectangle must be 'inner' or 'outer'")
        bad = set(self.formats) - set(FORMATS)
        if bad:
            raise ConfigError(f"unknown output format(s): {', '.join(sorted(bad))}")
        if self.command == "model-map":
            missing = [k for k in MODEL_MAP_KEYS if k not in self.model_map]
            # beta may come from a range instead
            if self.beta_min is not None and self.beta_max is not None:
                missing = [k for k in missing if k != "beta"]
            if missing:
                raise ConfigError(f"model-map needs explicit constant(s): {', '.join(missing)}")

    def parameters(self) -> Params:
        try:
            return Params.from_mapping(self.params)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        if "command" not in d:
            raise ConfigError("config has no command")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path: str | Path, command: str | None = None, **overrides) -> "RunConfig":
        """Read a JSON file; ``command`` and non-None overrides win over its contents."""
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if command is not None:
            d["command"] = command
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def digest(self) -> str:
        """Hash of everything that affects results (output location and job count excluded)."""
        d = self.to_dict()
        for k in ("out", "jobs", "resume", "formats"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def metadata(cfg: RunConfig) -> dict:
    return {"tool": "poincare-annulus", "version": __version__, "command": cfg.command,
            "config_hash": cfg.digest(), "seed": cfg.seed}


def metadata_lines(cfg: RunConfig) -> list[str]:
    """Header lines for CSV outputs, without the comment marker."""
    meta = metadata(cfg)
    lines = [f"{k}={v}" for k, v in meta.items()]
    lines.append("config=" + json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":")))
    return lines
