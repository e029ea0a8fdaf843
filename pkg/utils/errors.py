class ValidationError(ValueError):
    """Bad input: precondition violations, malformed files, unknown config keys."""


class NumericError(ArithmeticError):
    """Numerical failure during estimation or clustering."""


class DegenerateInputError(NumericError):
    pass


class RankDeficientError(NumericError):
    def __init__(self, message, deficient):
        super(RankDeficientError, self).__init__(message)
        self.deficient = deficient
