"""Fleming-Viot particle genealogies: spine extraction and kernel checks."""

__version__ = "0.1.0"

from .errors import (ConfigError, DimensionMismatchError, DomainError, IncompleteSpineError,
                     InsufficientDataError, NumericFloorError, RefinementAbort)
from .geometry import DomainSpec, KernelEvaluator, eigen, pullback_path
from .engine import EngineConfig, InitialMeasure, Simulation, init, run, step
from .genealogy import GenealogyLog, LineagePath, PathStore, dhp, labels, spine

__all__ = [
    "ConfigError", "DimensionMismatchError", "DomainError", "IncompleteSpineError",
    "InsufficientDataError", "NumericFloorError", "RefinementAbort",
    "DomainSpec", "KernelEvaluator", "eigen", "pullback_path",
    "EngineConfig", "InitialMeasure", "Simulation", "init", "run", "step",
    "GenealogyLog", "LineagePath", "PathStore", "dhp", "labels", "spine",
]
