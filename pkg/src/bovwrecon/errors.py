"""Exception types shared across the package."""


class BovwError(Exception):
    """Base class for all package errors."""


class InvalidInputError(BovwError, ValueError):
    """Raised when arguments violate an operation's preconditions."""


class NotFoundError(BovwError, KeyError):
    """Raised when a requested item (e.g. a caption word) does not exist."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class SizeError(InvalidInputError):
    """Raised when an exhaustive search would exceed its enumeration budget."""
