"""Exception types shared across the package."""


class TsfoundryError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TsfoundryError):
    """An invalid configuration value (even kernel size, odd head_dim, ...)."""


class ShapeError(TsfoundryError):
    """Mismatched tensor/matrix shapes."""


class SizeError(TsfoundryError):
    """A length/size precondition was violated (e.g. L < P)."""


class NumericError(TsfoundryError):
    """A non-finite value appeared where the contract forbids it."""


class GenerationError(TsfoundryError):
    """Synthetic data generation failed (e.g. Cholesky after jitter retries)."""


class DatasetParseError(TsfoundryError):
    """A dataset file could not be parsed; message carries the line number."""


class FileFormatError(TsfoundryError):
    """A serialized artifact (checkpoint, corpus, embeddings) is corrupt
    or has an unsupported format version."""


class DegenerateLabelsError(TsfoundryError):
    """A classifier was given fewer than two classes."""


class UnknownPresetError(KeyError):
    """Preset name not in the registry; message lists valid names."""
