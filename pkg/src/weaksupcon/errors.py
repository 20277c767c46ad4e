"""Exception hierarchy shared across the package."""


class WeakSupConError(Exception):
    """Base class for all package errors."""


class ZeroRow(WeakSupConError, ValueError):
    pass


class EmptyInput(WeakSupConError, ValueError):
    pass


class DegenerateData(WeakSupConError, ValueError):
    pass


class ShapeMismatch(WeakSupConError, ValueError):
    pass


class IndexOutOfRange(WeakSupConError, IndexError):
    pass


class SubsetNotPairClosed(WeakSupConError, ValueError):
    pass


class LonelyLabel(WeakSupConError, ValueError):
    pass


class ConfigInvalid(WeakSupConError, ValueError):
    pass


class PolicyInvalid(WeakSupConError, ValueError):
    pass


class EmptyDataset(WeakSupConError, ValueError):
    pass


class CacheMismatch(WeakSupConError, ValueError):
    pass


class NonFiniteLoss(WeakSupConError, FloatingPointError):
    pass


class EmptyBag(WeakSupConError, ValueError):
    pass


class SingleClass(WeakSupConError, ValueError):
    pass


class SingleClassTraining(SingleClass):
    pass


class ConfigParse(WeakSupConError, ValueError):
    """Raised for unreadable or schema-violating config files.

    ``where`` names the offending field path or ``line N`` for JSON syntax errors.
    """

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class MissingFeatures(WeakSupConError, FileNotFoundError):
    pass


class IncompleteExperiment(WeakSupConError, RuntimeError):
    pass
