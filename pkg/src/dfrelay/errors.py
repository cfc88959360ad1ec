"""Exception types raised across the package."""


class InvalidLength(ValueError):
    """Block or sequence length does not satisfy an operation's contract."""


class CpTooShort(ValueError):
    """Cyclic prefix shorter than the channel memory."""


class InvalidSymbol(ValueError):
    """Sample is not a point of the QPSK constellation."""


class InvalidConfig(ValueError):
    """Inconsistent simulation or solver configuration."""


class SingularSystem(ArithmeticError):
    """Linear system is numerically singular."""


class MissingTruth(ValueError):
    """Genie feedback requested without the transmitted symbols."""


class NonConvergence(RuntimeError):
    """Fixed-point solver hit its iteration cap.

    The last iterate is kept on ``state`` so callers can still use it.
    """

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state
