"""Exception hierarchy shared by the emulator, the trace tools and the kernels."""

from __future__ import annotations


class MMAError(Exception):
    """Base class.  ``line`` is set when the error is tied to a trace source line."""

    line: int | None = None

    def at_line(self, line: int | None) -> "MMAError":
        self.line = line
        return self

    def __str__(self) -> str:
        msg = super().__str__()
        return f"line {self.line}: {msg}" if self.line is not None else msg


# lifecycle / register file
class LifecycleError(MMAError):
    """Raised only in strict mode, for violations of the priming rules."""


class AccNotPrimed(LifecycleError):
    pass


class AccAlreadyPrimed(LifecycleError):
    pass


class VsrLockedError(LifecycleError):
    pass


class AccIndexError(MMAError):
    pass


class VsrIndexError(MMAError):
    pass


# instruction form
class OperandOverlapsAccumulator(MMAError):
    pass


class InvalidVsrPair(MMAError):
    pass


class UnknownMnemonic(MMAError):
    pass


class IllegalSuffix(UnknownMnemonic):
    pass


class MaskWidthError(MMAError):
    pass


# trace text
class TraceSyntaxError(MMAError):
    pass


class OperandError(TraceSyntaxError):
    pass


# kernels
class ShapeError(MMAError, ValueError):
    pass


class EmptyMultiply(MMAError):
    pass
