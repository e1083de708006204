"""
Subband SysID Error Hierarchy

Every failure raised by the library derives from SubbandIdError so the CLI
can map it to an exit code. Each class also subclasses the closest builtin
so callers that only know ValueError or RuntimeError still catch it.
"""

from typing import Any, Dict, Optional


class SubbandIdError(Exception):
    """Base class for all library errors"""


class ConfigurationError(SubbandIdError, ValueError):
    """Invalid or inconsistent configuration"""


class ShapeError(SubbandIdError, ValueError):
    """Array dimensions do not agree"""


class NonFiniteError(SubbandIdError, ValueError):
    """Input contains NaN or infinity"""


class EmptyOutputError(SubbandIdError, ValueError):
    """Input too short to produce any output"""


class InsufficientDataError(SubbandIdError, ValueError):
    """Not enough history accumulated yet; retry with more frames"""


class StabilityError(SubbandIdError, ArithmeticError):
    """Adaptive filter recursion lost positive definiteness"""


class UndefinedMetricError(SubbandIdError, ValueError):
    """Metric is undefined for the given reference signal"""


class RunLockedError(SubbandIdError, RuntimeError):
    """Another run holds the output directory"""


class TrainingError(SubbandIdError, RuntimeError):
    """Detector training diverged"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PipelineError(SubbandIdError, RuntimeError):
    """A module failed while the identification pipeline was running"""

    def __init__(self, module: str, frame_index: int, cause: BaseException):
        super().__init__(f"{module} failed at frame {frame_index}: {cause}")
        self.module = module
        self.frame_index = frame_index
        self.cause = cause
