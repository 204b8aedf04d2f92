"""Battery energy storage scheduling for load variance minimisation on radial feeders."""

from .model import (BessSchedule, BessSpec, FeederModel, Line, ProblemConfig, SolveReport, TimeSeries,
                    validate_config)

__version__ = "0.1.0"

__all__ = [
    "BessSchedule",
    "BessSpec",
    "FeederModel",
    "Line",
    "ProblemConfig",
    "SolveReport",
    "TimeSeries",
    "validate_config",
]
