"""Exception types shared across the toolkit."""


class FrontoError(Exception):
    """Base class for all toolkit errors."""


class SingularSystem(FrontoError):
    """A linear system or matrix required to be invertible is degenerate."""


class AtInfinity(FrontoError):
    """A projective point maps to (or too close to) the line at infinity."""


class ShapeMismatch(FrontoError):
    """Array dimensions do not match the declared contract."""


class OutOfRange(FrontoError):
    """A value lies outside its legal range."""


class EmptyMask(FrontoError):
    """A masked reduction was requested with no valid pixels."""


class EmptySplit(FrontoError):
    """An operation requires a nonempty dataset split."""


class EmptyPool(FrontoError):
    """An operation requires a nonempty displacement pool."""


class ParseError(FrontoError):
    """A text artifact (manifest, config, prediction file) failed to parse.

    Carries the offending line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvariantViolation(FrontoError):
    """A domain invariant (side consistency, displacement bound, ...) failed."""


class NonFiniteGradient(FrontoError):
    """A gradient contained NaN or infinity; the optimizer step was aborted."""


class MissingPrediction(FrontoError):
    """A prediction file does not cover every record of the evaluated split."""


class CheckpointMismatch(FrontoError):
    """A parameter checkpoint does not match the requested architecture."""
