"""
Error Types
Exception hierarchy shared by the numerical services and the CLI.

Configuration failures map to exit code 2, numerical aborts to exit code 3.
"""
from typing import Any, Dict, List, Optional


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class HeisenbergError(ValueError):
    """Base class for every error raised by this package."""

    exit_code = EXIT_CONFIG

    def __init__(self, message: str, detail: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.detail = detail or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": str(self),
            "type": type(self).__name__,
            "detail": self.detail,
        }


# ============ Configuration / precondition errors ============

class DimensionMismatchError(HeisenbergError):
    pass


class RepresentationError(HeisenbergError):
    pass


class GridError(HeisenbergError):
    pass


class ConfigError(HeisenbergError):
    pass


class SupportViolationError(HeisenbergError):
    """Initial data is not decayed inside the box."""

    def __init__(self, message: str, margin: float, required: float):
        super().__init__(message, {"margin": margin, "required": required})
        self.margin = margin
        self.required = required


class ShearBoundError(HeisenbergError):
    pass


# ============ Numerical aborts ============

class BoundaryMassError(HeisenbergError):
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, mass: float, threshold: float, step: Optional[int] = None):
        super().__init__(message, {"mass": mass, "threshold": threshold, "step": step})
        self.mass = mass
        self.threshold = threshold
        self.step = step


class CausticError(HeisenbergError):
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, alphas: List[float], min_sin: float):
        super().__init__(message, {"alphas": alphas, "min_abs_sin": min_sin})
        self.alphas = alphas
        self.min_sin = min_sin


class ConvergenceDiagnosticError(HeisenbergError):
    exit_code = EXIT_NUMERICAL
