"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A configuration, data file or argument violates its contract."""


class NumericsError(RuntimeError):
    """A numerical computation produced non-finite or degenerate values."""


class ExplosionError(NumericsError):
    """A simulated diffusion left the finite range.

    Carries the first time at which a non-finite state was produced.
    """

    def __init__(self, time: float):
        self.time = float(time)
        super().__init__(f"diffusion state became non-finite at t={self.time:.6g}")
