"""Exception hierarchy. The CLI maps the three base classes to exit codes."""


class RadAnnotError(Exception):
    pass


class UsageError(RadAnnotError):
    """Bad configuration or arguments (exit code 1)."""


class DataError(RadAnnotError, ValueError):
    """Malformed or degenerate input data (exit code 2)."""


class NumericalError(RadAnnotError, ArithmeticError):
    """Non-finite values during training or inference (exit code 3)."""


class EmptyAnnotation(DataError):
    pass


class MalformedAnnotation(DataError):
    pass


class MalformedRecord(DataError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


class NoUsableText(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class EmptySentence(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class MissingGroundTruth(DataError):
    pass


class EmptySource(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class NoEligiblePairs(DataError):
    pass


class DimensionMismatch(UsageError, ValueError):
    pass


class BadRatios(UsageError, ValueError):
    pass


class BadConfig(UsageError, ValueError):
    pass
