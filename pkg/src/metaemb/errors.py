"""Exception hierarchy shared by all metaemb modules.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
TrainingError -> 3, EvaluationError -> 4.
"""


class MetaEmbError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MetaEmbError):
    """Bad configuration, invalid flag combination, or a violated call contract."""


class DataError(MetaEmbError):
    """Problem with input data files or dataset protocol."""


class ParseError(DataError):
    """Malformed line in an input file; carries the 1-based line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class FormatError(DataError):
    """File violates its declared format (e.g. inconsistent vector dimension)."""


class AlignmentError(DataError):
    """Vocabulary alignment produced an unusable result (e.g. empty intersection)."""


class ProtocolError(DataError):
    """Train/test protocol violation, e.g. a held-out pair leaked into training."""


class UnknownTokenError(DataError):
    """A requested token is not present in the vocabulary."""

    def __init__(self, token):
        super().__init__(f"unknown token: {token!r}")
        self.token = token


class TrainingError(MetaEmbError):
    """Training diverged or produced non-finite values."""


class LossError(TrainingError):
    """A loss function was handed input it is undefined on (e.g. zero-norm row)."""


class EvaluationError(MetaEmbError):
    """Evaluation could not produce a score (e.g. every pair dropped)."""
