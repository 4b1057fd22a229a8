"""Exception taxonomy shared across the toolkit.

Every error raised by prunekit derives from PrunekitError so callers can
catch the whole family at once. File-system problems are left as the
builtin OSError family.
"""


class PrunekitError(Exception):
    """Base class for all prunekit errors."""


class ShapeError(PrunekitError):
    """Operands have incompatible shapes."""


class NumericError(PrunekitError):
    """A computation produced or received non-finite values."""


class ContractError(PrunekitError):
    """A call violated a documented precondition."""


class ConfigError(PrunekitError):
    """A configuration value or combination is invalid."""


class DataError(PrunekitError):
    """A dataset file is malformed."""


class VocabularyError(PrunekitError):
    """A token id or vocabulary file is invalid."""


class InvalidIndexError(PrunekitError):
    """A structural index (head, neuron, vocab row) is out of range or duplicated."""


class CorruptionError(PrunekitError):
    """A checkpoint on disk is inconsistent with its manifest."""
