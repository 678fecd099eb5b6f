"""
Error hierarchy for the Versor toolkit.
Value-style failures also derive from ValueError so callers may catch either.
"""

from typing import List, Optional


class VersorError(Exception):
    """Base class for every error raised by this package."""


class SignatureError(VersorError, ValueError):
    """Invalid metric signature, or an operation needing a specific one."""


class SignatureMismatchError(SignatureError):
    """Operands belong to different signatures."""


class GradeError(VersorError, ValueError):
    """Requested grade is outside 0..n."""


class NonFiniteError(VersorError, ValueError):
    """Input or intermediate value contains NaN or infinity."""


class NonInvertibleError(VersorError, ValueError):
    """Multivector has no inverse (singular matrix representation)."""


class CayleySingularityError(NonInvertibleError):
    """(2 + B) is singular: B has an eigenvalue of -2 in the matrix representation."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class DegenerateStateError(VersorError, ValueError):
    """State has null or negative scalar norm and cannot be normalized."""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class UnnormalizedRotorError(VersorError, ValueError):
    """Rotor norm deviates from one beyond tolerance."""


class NotARotorError(VersorError, ValueError):
    """Multivector carries odd-grade content and is not a rotor."""


class EmptyTapeError(VersorError, RuntimeError):
    """Backward requested on a tape with no recorded nodes."""


class TrainingDivergedError(VersorError, RuntimeError):
    """Training loss became non-finite or exceeded the divergence threshold."""

    def __init__(self, epoch: int, history: Optional[List[float]] = None, loss: float = float("nan")):
        self.epoch = epoch
        self.history = list(history or [])
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch} (loss {loss:.3g})")


class TrajectoryGenerationError(VersorError, RuntimeError):
    """No acceptable trajectory after the allowed number of resamples."""


class UndefinedDriftError(VersorError, ValueError):
    """Energy drift is undefined because the initial energy is zero."""


class SnakeGenerationError(VersorError, RuntimeError):
    """Self-avoiding walk could not be grown within the retry budget."""


class DatasetError(VersorError, ValueError):
    """Dataset file is missing, empty or malformed."""
