"""Exception hierarchy shared by every mlcoda module."""


class CodaError(Exception):
    """Base class for all mlcoda errors."""


# -- simplex / transforms ---------------------------------------------------

class NonPositivePart(CodaError, ValueError):
    """A compositional part is zero, negative or not finite.

    ``rows`` holds the offending 1-based data row numbers when the error
    is raised while ingesting a table.
    """

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows) if rows is not None else []


#: Zero parts are never imputed; they are the same error as negative parts.
ZeroPart = NonPositivePart


class EmptyVector(CodaError, ValueError):
    """A composition needs at least two parts."""


class EmptyList(CodaError, ValueError):
    pass


class DimensionMismatch(CodaError, ValueError):
    pass


class TotalMismatch(CodaError, ValueError):
    pass


# -- sequential binary partitions --------------------------------------------

class BadEntry(CodaError, ValueError):
    pass


class BadShape(CodaError, ValueError):
    pass


class NotAPartition(CodaError, ValueError):
    pass


class IndexOutOfRange(CodaError, IndexError):
    pass


class BasisDimensionMismatch(DimensionMismatch):
    pass


class BasisMismatch(CodaError, ValueError):
    """Coefficients and coordinates were produced under different bases."""


# -- model -------------------------------------------------------------------

class FormulaError(CodaError, ValueError):
    pass


class UnknownTerm(CodaError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class MissingValues(CodaError, ValueError):
    pass


class DegenerateDesign(CodaError, ValueError):
    pass


class NonFiniteLikelihood(CodaError, ArithmeticError):
    pass


class TooFewDraws(CodaError, ValueError):
    pass


# -- substitution ------------------------------------------------------------

class InfeasibleReallocation(CodaError, ValueError):
    pass


class SamePart(CodaError, ValueError):
    pass


class UnknownPart(CodaError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


# -- io / cli ----------------------------------------------------------------

class ConfigError(CodaError, ValueError):
    pass


class SchemaError(CodaError, ValueError):
    pass


class UpstreamMissing(CodaError, FileNotFoundError):
    pass


class NonPDCovariance(CodaError, ValueError):
    pass
