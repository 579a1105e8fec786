"""Exception types raised across the package."""


class InvalidColorSpace(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class SingularSystem(ArithmeticError):
    pass


class MissingCache(RuntimeError):
    pass


class MissingClass(ValueError):
    """A score set lacks bona fide or attack samples."""


class ManifestError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class NumericalError(ArithmeticError):
    """Non-finite values showed up in gradients or weights."""
