"""Exception types."""


class FracminError(ValueError):
    """Invalid input or an operation whose preconditions fail."""


class DegenerateSetError(FracminError):
    pass


class HypothesisError(FracminError):
    """A hypothesis checked on the input does not hold.

    ``display`` names the hypothesis (e.g. ``"(Gt)"``).
    """

    def __init__(self, message: str, display: str = ""):
        super().__init__(message)
        self.display = display


class ResolutionError(FracminError):
    pass
