"""Exception hierarchy. Everything user-facing derives from CorrnerError so
the CLI can map data/format problems to exit code 2 and keep genuine bugs
on exit code 3.
"""


class CorrnerError(Exception):
    """Base class for data, format, and configuration errors."""


class ConllFormatError(CorrnerError):
    """Bad line in a CoNLL file (ragged columns, unknown tag, mixed schemes)."""


class MalformedTagsError(CorrnerError):
    """Strict decoding hit an ill-formed tag sequence."""

    def __init__(self, message, position):
        super().__init__(f"{message} (position {position})")
        self.position = position


class InvalidSpansError(CorrnerError):
    """Span set violates bounds or overlaps."""


class IndexLoadError(CorrnerError):
    """Index directory is missing files or corrupt."""


class AnalyzerVersionError(IndexLoadError):
    """Stored index was built with an incompatible analyzer."""


class ConfigError(CorrnerError):
    """Inconsistent or unknown configuration."""


class TrainingDivergedError(CorrnerError):
    """Loss became non-finite during optimization."""
