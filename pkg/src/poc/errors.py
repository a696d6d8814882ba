"""Exception types shared across the package."""


class PocError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(PocError):
    pass


class NumericalFailure(PocError):
    """Simplex pivoting stalled even after the anti-cycling fallback."""


class NodeLimitExceeded(PocError):
    """Branch-and-bound hit its node cap before proving optimality."""


class GenerationFailed(PocError):
    """Instance generator exhausted its rejection-sampling budget."""


class ParseError(PocError):
    """Malformed instance or stream file; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyHistory(PocError):
    """No observations available; caller must fall back to the default solution."""


class LayoutMismatch(PocError):
    """State vector does not match the feature layout the network was built for."""


class NonFiniteLoss(PocError):
    """PPO loss or gradients went non-finite; the update must be aborted."""


class HorizonTooLarge(PocError):
    pass


class DegenerateParams(PocError):
    pass
