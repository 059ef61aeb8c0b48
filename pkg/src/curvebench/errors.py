"""Exception types shared across the package."""


class CurveBenchError(Exception):
    """Base class for all package errors."""


class ParseError(CurveBenchError):
    """Malformed expression text; carries the character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownAtomError(CurveBenchError):
    """Atom id not present in the registry."""


class DomainError(CurveBenchError):
    """An argument range exits the atom's declared domain."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{message}" + (f" [at {path}]" if path else ""))
        self.path = path


class SynthesisExhaustedError(CurveBenchError):
    """The sampler ran out of resample/backtrack attempts."""


class InsufficientSamplesError(CurveBenchError):
    """A numeric scan produced fewer finite samples than required."""


class DanglingReferenceError(CurveBenchError):
    """A sub-function body references a name that was never defined."""


class MissingStateError(CurveBenchError):
    """A context construction lacks the state of a required sub-function."""


class MetricsError(CurveBenchError):
    """Metrics cannot be computed (e.g. a class has no records)."""


class TransportError(CurveBenchError):
    """A remote solver call failed after all retries."""
