"""Shared exception types."""


class ParameterError(ValueError):
    """An argument violates an operation's precondition."""


class ValidationError(ValueError):
    """An input document or constructed object violates an invariant."""


class UncertainStabilityError(RuntimeError):
    """A floating-point stability verdict fell inside the tolerance band.

    Raised instead of silently resolving: the caller must supply an exact
    rational direction or widen the question.
    """


class BarrierError(RuntimeError):
    """Base for structured failures in the barrier pipeline.

    Carries a ``report`` dict naming the violated hypothesis/assertion and
    the offending cube, pair, or inequality.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class HypothesisViolation(BarrierError):
    """A construction step was invoked outside its stated hypothesis."""


class PostAssertionFailure(BarrierError):
    """A constructed object failed its runtime-verified post-condition."""


class CoverAssertionFailure(BarrierError):
    """A cover failed a containment, clearance, or pairwise assertion."""
