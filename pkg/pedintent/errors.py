from __future__ import annotations


class PedintentError(Exception):
    """Base class of every error raised by pedintent."""


class ShapeError(PedintentError, ValueError):
    """Operands or parameters with inconsistent dimensions."""


class ParameterError(PedintentError, ValueError):
    """Invalid hyper-parameter or configuration value."""


class LabelError(PedintentError, ValueError):
    """Crossing label outside of {0, 1}."""


class ValidationError(PedintentError, ValueError):
    """Invalid scene, dataset or checkpoint content.

    ``path`` locates the offending field, e.g. ``frames[3].objects[1].bbox``.

    >>> e = ValidationError("x1 must be lower than x2", path="bbox")
    >>> str(e.within("frames[3].objects[1]"))
    'frames[3].objects[1].bbox: x1 must be lower than x2'
    """

    def __init__(self, message: str, path: str = "") -> None:
        super().__init__(message)
        self.path = path

    def within(self, prefix: str) -> ValidationError:
        if not self.path:
            path = prefix
        elif self.path.startswith("["):
            path = prefix + self.path
        else:
            path = f"{prefix}.{self.path}"
        return self.__class__(self.args[0], path=path)

    def __repr__(self) -> str:
        return "<%s at %s: %.32s>" % (
            self.__class__.__name__,
            self.path or "<root>",
            self.args[0],
        )

    def __str__(self) -> str:
        if self.path:
            return f"{self.path}: {self.args[0]}"
        return str(self.args[0])


class FormatError(ValidationError):
    """Unparseable file or unsupported format version."""


class NonFiniteError(PedintentError, ArithmeticError):
    """NaN or infinite loss or gradient."""

    def __init__(self, message: str, name: str | None = None) -> None:
        super().__init__(message)
        self.name = name

    def __str__(self) -> str:
        if self.name:
            return "{} (parameter {!r})".format(self.args[0], self.name)
        return str(self.args[0])
