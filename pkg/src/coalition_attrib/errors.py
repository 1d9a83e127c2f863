"""Exception hierarchy.

Every error raised by this package derives from :class:`CoalitionAttribError`
so callers can catch the package's failures with a single handler.  The
subclasses split along the pipeline stages: parsing model source, loading
data, building reference distributions, and running the attribution engine.
"""


class CoalitionAttribError(Exception):
    """Base class for all errors raised by coalition_attrib."""


# --- model DSL ---

class ParseError(CoalitionAttribError):
    """Model source text could not be parsed.

    Parameters
    ----------
    position : int
        0-based character offset into the source where parsing failed.
    message : str
        What was expected or what went wrong.
    """

    def __init__(self, position, message):
        self.position = position
        super().__init__(f"parse error at position {position}: {message}")


class UnknownFeatureError(ParseError):
    """A name in the model source is not declared in the feature schema."""

    def __init__(self, position, name):
        self.name = name
        ParseError.__init__(self, position, f"unknown feature '{name}'")


class CategoricalComparisonError(ParseError):
    """A comparison operator was applied to a categorical feature."""

    def __init__(self, position, names):
        self.names = tuple(names)
        joined = ", ".join(self.names)
        ParseError.__init__(
            self, position,
            f"comparison involves categorical feature(s): {joined}")


class EvalError(CoalitionAttribError):
    """Model evaluation failed."""


class MissingFeatureError(EvalError):
    """An instance does not provide a value for a schema feature."""

    def __init__(self, name):
        self.name = name
        super().__init__(f"missing value for feature '{name}'")


class DivisionByZeroError(EvalError):
    """A division in the model evaluated with a zero divisor."""

    def __init__(self, row=None):
        self.row = row
        where = "" if row is None else f" (row {row})"
        super().__init__(f"division by zero during model evaluation{where}")


# --- data sources ---

class DataError(CoalitionAttribError):
    """Problem with a reference data source."""


class DataIoError(DataError):
    """A data file could not be read."""


class CsvFormatError(DataError):
    """Malformed CSV content."""


class RaggedRowError(CsvFormatError):
    """A CSV row has a different number of cells than the header."""

    def __init__(self, line, expected, got):
        self.line = line
        self.expected = expected
        self.got = got
        super().__init__(
            f"line {line}: expected {expected} cells, got {got}")


class NonNumericCellError(CsvFormatError):
    """A CSV cell could not be parsed as a number."""

    def __init__(self, line, column):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: non-numeric cell")


class InvalidLawError(DataError):
    """Parametric law parameters violate their constraints."""


class UnsupportedLawError(DataError):
    """The requested operation is undefined for this law (e.g. a quadrature
    rule for a Bernoulli feature, which is enumerated instead)."""


# --- causal graphs ---

class GraphError(CoalitionAttribError):
    """Problem with a causal graph."""


class GraphFormatError(GraphError):
    """Graph file or mapping is malformed."""


class GraphCycleError(GraphError):
    """The edge set contains a directed cycle."""


class GraphSchemaMismatchError(GraphError):
    """Graph nodes do not coincide with the feature schema."""


# --- reference distributions ---

class RefDistError(CoalitionAttribError):
    """Problem constructing or sampling a reference distribution."""


class NoSupportError(RefDistError):
    """Conditioning left no reference rows with positive weight."""


class InvalidReferenceModeError(RefDistError):
    """The reference distribution mode is not valid for this operation."""


# --- attribution engine ---

class EngineError(CoalitionAttribError):
    """Attribution computation failed."""


class TooManyFeaturesError(EngineError):
    """Exact enumeration was requested above the feature-count cutoff."""

    def __init__(self, m, limit, what="exact enumeration"):
        self.m = m
        self.limit = limit
        super().__init__(
            f"{what} supports at most {limit} features, schema has {m}; "
            "use the sampled estimator or raise the cutoff explicitly")


class QuadratureUnavailableError(EngineError):
    """No exact backend exists for this source/reference combination."""


# --- configuration ---

class ConfigError(CoalitionAttribError):
    """Invalid run configuration.

    ``path`` is the dotted location of the offending field, e.g.
    ``"reference.graph"``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
