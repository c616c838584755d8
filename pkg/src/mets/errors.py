"""Exception hierarchy shared by every module."""


class MetsError(Exception):
    """Base class for all package errors."""


class DimensionError(MetsError, ValueError):
    pass


class DegenerateBatchError(MetsError, ValueError):
    pass


class ParseError(MetsError, ValueError):
    """Malformed header, signal or CSV text.

    ``line`` (1-based) or ``offset`` (bytes) point at the failure when known.
    """

    def __init__(self, message, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (offset {offset})"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class UnsupportedFormatError(ParseError):
    pass


class TruncatedSignalError(ParseError):
    pass


class ManifestError(MetsError, ValueError):
    pass


class DatasetLoadError(MetsError, OSError):
    pass


class DegenerateEmbeddingError(MetsError, ValueError):
    pass


class MissingEmbeddingError(MetsError, KeyError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("no embedding for: " + "; ".join(repr(m) for m in self.missing))

    def __str__(self):
        return self.args[0]


class EmbeddingFormatError(MetsError, ValueError):
    pass


class CheckpointError(MetsError, ValueError):
    pass


class NonFiniteGradientError(MetsError, FloatingPointError):
    pass


class TrainingError(MetsError, RuntimeError):
    pass


class FrozenProviderError(TrainingError):
    pass


class CatalogMismatchError(MetsError, ValueError):
    def __init__(self, labels):
        self.labels = sorted(set(labels))
        super().__init__("labels not in catalog: " + ", ".join(self.labels))
