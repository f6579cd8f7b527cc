from __future__ import annotations

import typing as tp


class GraspCaptureError(Exception):
    """Base class for all pipeline errors"""


class ConfigurationError(GraspCaptureError, ValueError):
    pass


class PointBehindCamera(GraspCaptureError, ValueError):
    """A point does not lie in front of the camera (cheirality violation)."""


class DegenerateConfiguration(GraspCaptureError, ValueError):
    pass


class InsufficientCorrespondences(GraspCaptureError, ValueError):
    pass


class DegenerateMotion(GraspCaptureError, ValueError):
    pass


class IllConditioned(GraspCaptureError, ValueError):
    pass


class NoSteadySegment(GraspCaptureError, ValueError):
    pass


class NonConvergence(GraspCaptureError, RuntimeError):
    """Raised by solvers whose caller must drop the result; carries the best-so-far."""

    def __init__(self, message: str, result: tp.Any = None):
        super().__init__(message)
        self.result = result


class StageError(GraspCaptureError, RuntimeError):
    def __init__(self, stage: str, error: Exception):
        super().__init__(f"Stage `{stage}` failed: {error}")
        self.stage = stage
        self.error = error
