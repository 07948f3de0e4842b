"""Workbench configuration: one JSON document wiring a whole session.

A config bundles the plant parameters, the noise model, the controller
gains, the tick period, the RNG seeds, the data directory for logs and
trajectories, and the wire-protocol port. Loading validates everything and
rejects unknown keys at every level, so a typo fails loudly instead of
silently falling back to a default. The port and data directory may be
overridden through the environment (GNCBENCH_PORT, GNCBENCH_DATA_DIR).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

from gncbench.control import PdGains
from gncbench.dynamics import MAX_TIMESTEP, ConfigError, DynamicParams, InvalidTimestep
from gncbench.simulator import NoiseModel

ENV_PORT = "GNCBENCH_PORT"
ENV_DATA_DIR = "GNCBENCH_DATA_DIR"

DEFAULT_DT = 0.01
DEFAULT_PORT = 8765
DEFAULT_DATA_DIR = "data"

_SEED_KEYS = frozenset({"simulate", "session"})
_CONFIG_KEYS = frozenset(
    {"params", "noise", "gains", "dt", "seeds", "data_dir", "port"}
)
_REQUIRED_KEYS = frozenset({"params", "noise", "gains"})


@dataclass(frozen=True)
class Seeds:
    """Default RNG seeds per pipeline; CLI flags override per run."""

    simulate: int = 0
    session: int = 0

    def __post_init__(self):
        for name in ("simulate", "session"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"seed '{name}' must be a non-negative integer, got {v!r}")

    def to_dict(self) -> dict:
        return {"simulate": self.simulate, "session": self.session}

    @classmethod
    def from_dict(cls, doc: dict) -> "Seeds":
        if not isinstance(doc, dict):
            raise ConfigError("seeds must be a mapping")
        unknown = set(doc) - _SEED_KEYS
        if unknown:
            raise ConfigError(f"unknown seed keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class WorkbenchConfig:
    params: DynamicParams
    noise: NoiseModel
    gains: PdGains
    dt: float = DEFAULT_DT
    seeds: Seeds = field(default_factory=Seeds)
    data_dir: str = DEFAULT_DATA_DIR
    port: int = DEFAULT_PORT

    def __post_init__(self):
        if not (isinstance(self.dt, (int, float)) and math.isfinite(self.dt)
                and 0.0 < self.dt <= MAX_TIMESTEP):
            raise InvalidTimestep(f"dt must lie in (0, {MAX_TIMESTEP}], got {self.dt!r}")
        object.__setattr__(self, "dt", float(self.dt))
        if not isinstance(self.port, int) or isinstance(self.port, bool) \
                or not 1 <= self.port <= 65535:
            raise ConfigError(f"port must be an integer in [1, 65535], got {self.port!r}")
        if not isinstance(self.data_dir, str) or not self.data_dir:
            raise ConfigError("data_dir must be a non-empty path string")

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "noise": self.noise.to_dict(),
            "gains": self.gains.to_dict(),
            "dt": self.dt,
            "seeds": self.seeds.to_dict(),
            "data_dir": self.data_dir,
            "port": self.port,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WorkbenchConfig":
        if not isinstance(doc, dict):
            raise ConfigError("workbench config must be a mapping")
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = _REQUIRED_KEYS - set(doc)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        kwargs = {
            "params": DynamicParams.from_dict(doc["params"]),
            "noise": NoiseModel.from_dict(doc["noise"]),
            "gains": PdGains.from_dict(doc["gains"]),
        }
        if "dt" in doc:
            kwargs["dt"] = doc["dt"]
        if "seeds" in doc:
            kwargs["seeds"] = Seeds.from_dict(doc["seeds"])
        if "data_dir" in doc:
            kwargs["data_dir"] = doc["data_dir"]
        if "port" in doc:
            port = doc["port"]
            if not isinstance(port, int) or isinstance(port, bool):
                raise ConfigError(f"port must be an integer, got {port!r}")
            kwargs["port"] = port
        return cls(**kwargs)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path, env: dict | None = None) -> "WorkbenchConfig":
        """Load and validate a config file, applying environment overrides."""
        env = os.environ if env is None else env
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"unparseable config {path}: {exc}") from exc
        cfg = cls.from_dict(doc)
        overrides = {}
        if env.get(ENV_PORT):
            try:
                overrides["port"] = int(env[ENV_PORT])
            except ValueError as exc:
                raise ConfigError(f"{ENV_PORT} must be an integer, got "
                                  f"{env[ENV_PORT]!r}") from exc
        if env.get(ENV_DATA_DIR):
            overrides["data_dir"] = env[ENV_DATA_DIR]
        if overrides:
            cfg = cls(params=cfg.params, noise=cfg.noise, gains=cfg.gains,
                      dt=cfg.dt, seeds=cfg.seeds,
                      data_dir=overrides.get("data_dir", cfg.data_dir),
                      port=overrides.get("port", cfg.port))
        return cfg
