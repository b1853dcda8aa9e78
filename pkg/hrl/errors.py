"""
HRL Errors
Exception hierarchy for environments, controllers and learners.
"""


class HRLError(Exception):
    """Base class for reinforcement-learning failures."""


class EnvironmentUsageError(HRLError):
    """Raised when an environment is stepped before reset or after it ended."""


class ControllerError(HRLError):
    """Raised when a controller is asked for an impossible (state, goal)."""


class NumericalError(HRLError):
    """Raised when a network or optimizer produces a non-finite value."""


class ShapeError(HRLError, ValueError):
    """Raised when an input does not match a layer's dimensions."""


class PolicyLoopError(HRLError):
    """Raised when a greedy meta policy spends the step budget without ending."""


class MemoryConflictError(HRLError):
    """Raised when a truncated history maps to two different goals."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class CheckpointError(HRLError):
    """Raised when a parameter dump cannot be read back."""
