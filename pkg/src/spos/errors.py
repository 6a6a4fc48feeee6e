"""Exception types raised by the sampling library."""


class SamplerError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(SamplerError, ValueError):
    """An argument violates a documented precondition."""


class StateError(SamplerError, RuntimeError):
    """Variance-reduction state used before initialization or found inconsistent."""


class UnsupportedTargetError(SamplerError):
    """The requested operation is not available for this target."""


class DivergenceError(SamplerError, FloatingPointError):
    """A particle left the finite reals during an update."""

    def __init__(self, particle: int, step: int | None = None):
        self.particle = particle
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"particle {particle} diverged (non-finite position){where}")
