"""Full-duplex MAC (FD-MAC) saturation throughput: analytic model and slot-level simulator."""

from .params import (
    ConfigError,
    Mode,
    ModelDomainError,
    ProtocolParams,
    SolverError,
    StallError,
    UndefinedQuantityError,
)

__all__ = [
    "ConfigError",
    "Mode",
    "ModelDomainError",
    "ProtocolParams",
    "SolverError",
    "StallError",
    "UndefinedQuantityError",
]

__version__ = "0.1.0"
