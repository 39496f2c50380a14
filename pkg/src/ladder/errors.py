"""Exception types raised across the package."""


class LadderError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(LadderError):
    pass


class NotPSD(LadderError):
    pass


class ZeroPivot(LadderError):
    pass


class DimensionMismatch(LadderError, ValueError):
    pass


class WidthMismatch(LadderError, ValueError):
    pass


class DegenerateSelfSimilarity(LadderError, ValueError):
    pass


class OptimizationFailed(LadderError):
    pass


class DegenerateCovariance(LadderError):
    pass


class AllCandidatesDuplicate(LadderError):
    """Every candidate proposed by the acquisition optimizer decodes to a
    structure that is already in the dataset."""

    def __init__(self, msg, best_z=None):
        super().__init__(msg)
        self.best_z = best_z


class EmbeddingCollision(LadderError):
    pass


class ParseError(LadderError, ValueError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


class ExprSyntaxError(LadderError, SyntaxError):
    """Raised by the expression parser; ``position`` is the token index."""

    def __init__(self, msg, position):
        super().__init__(f"{msg} (at token {position})")
        self.position = position


class EmptyRecord(LadderError):
    pass


class ConfigError(LadderError, ValueError):
    def __init__(self, field, msg):
        super().__init__(f"{field}: {msg}")
        self.field = field
