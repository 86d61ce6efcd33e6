class ParameterError(ValueError):
    """A parameter lies outside its admissible domain."""


class DataError(ValueError):
    """Input data is malformed or too small for the requested operation."""


class NumericalError(RuntimeError):
    """An algorithm failed numerically (non-monotone EM, no valid start, ...)."""


class InitializationError(NumericalError):
    pass
