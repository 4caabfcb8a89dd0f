"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: validation problems exit 1,
numerical failures exit 2, and I/O or codec failures exit 3.
"""


class SvidError(Exception):
    """Base class for all package errors."""


class ValidationError(SvidError, ValueError):
    """Bad configuration, arguments, or preconditions.

    ``problems`` carries the full list of messages when several issues are
    reported at once (config files are validated all-at-once).
    """

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems is not None else [message]


class ShapeError(ValidationError):
    """Operand shapes are incompatible; the message names both shapes."""


class GraphError(SvidError, RuntimeError):
    """Misuse of the differentiation graph (non-scalar loss, reuse after
    backward, missing gradients)."""


class NumericalError(SvidError, ArithmeticError):
    """Non-finite values where finite ones are required (loss, gradients)."""


class CodecError(SvidError, IOError):
    """Malformed image or checkpoint bytes; ``offset`` locates the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
