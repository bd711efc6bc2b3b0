"""Scenario parameters and the exception types shared across the package."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from enum import Enum

# Window sizes are handled as Python ints, but the simulator keeps them in
# int64 arrays.
MAX_WINDOW = 2**62


class Mode(str, Enum):
    FULL_DUPLEX = "fd"
    CSMA_CA = "csma"


class ConfigError(ValueError):
    """Invalid scenario or run configuration."""


class ModelDomainError(ValueError):
    """A model quantity fell outside its admissible range."""

    def __init__(self, message: str, value: float | None = None):
        super().__init__(message)
        self.value = value


class UndefinedQuantityError(ValueError):
    """A requested average has no events to average over (e.g. no collisions)."""


class SolverError(RuntimeError):
    """Fixed-point solver failed to reach tolerance."""

    def __init__(self, message: str, last_iterate: float | None = None, residual: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class StallError(RuntimeError):
    """Simulation made no progress (no transmission attempts) for too long."""


@dataclass(frozen=True)
class ProtocolParams:
    """One network scenario. All durations are in slots.

    ``cw_min * 2**w_max`` is the largest contention window (CW_max).
    """

    m_users: int = 100
    packet_len: int = 1000
    cw_min: int = 16
    w_max: int = 11
    p_false_alarm: float = 1e-3
    p_miss: float = 1e-2
    difs: int = 2
    mode: Mode = Mode.FULL_DUPLEX

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("m_users", "packet_len", "cw_min", "difs"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if isinstance(self.w_max, bool) or not isinstance(self.w_max, int) or self.w_max < 0:
            raise ConfigError(f"w_max must be a non-negative integer, got {self.w_max!r}")
        for name in ("p_false_alarm", "p_miss"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {value!r}")
        if self.cw_min << self.w_max > MAX_WINDOW:
            raise ConfigError(f"cw_min * 2**w_max overflows the window range ({self.cw_min} * 2**{self.w_max})")

    @property
    def cw_max(self) -> int:
        return self.cw_min << self.w_max

    def with_(self, **changes) -> "ProtocolParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolParams":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**known)


def cw_of_stage(stage: int, params: ProtocolParams) -> int:
    """Contention window at backoff stage ``stage``: ``2**stage * cw_min``."""
    if stage < 0 or stage > params.w_max:
        raise ValueError(f"stage {stage} outside [0, {params.w_max}]")
    return params.cw_min << stage
