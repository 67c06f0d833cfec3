"""Exception hierarchy shared by all modules."""


class LatticeSRError(Exception):
    """Base class for every error raised by the package."""


class NonRedDetuned(LatticeSRError, ValueError):
    pass


class NonPositiveIntensity(LatticeSRError, ValueError):
    pass


class InvalidLatticeConfig(LatticeSRError, ValueError):
    pass


class AmplitudeTooLarge(LatticeSRError, ValueError):
    pass


class InvalidConfig(LatticeSRError, ValueError):
    """A simulation configuration violates its invariants."""


class TooFewSamples(LatticeSRError, ValueError):
    pass


class InvalidGrid(LatticeSRError, ValueError):
    pass


class FitError(LatticeSRError):
    pass


class TooFewPoints(FitError, ValueError):
    pass


class NotConverged(FitError):
    pass


class SingularNormalMatrix(FitError):
    pass


class MalformedRow(LatticeSRError, ValueError):
    def __init__(self, line_number, text):
        self.line_number = line_number
        self.text = text
        super().__init__(f"line {line_number}: cannot parse {text!r}")


class EmptyFile(LatticeSRError, ValueError):
    pass


class ConfigParse(LatticeSRError, ValueError):
    """Configuration error carrying a JSON pointer to the offending field."""

    def __init__(self, pointer, message):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}")


class WeakExcitationViolated(UserWarning):
    """Saturation parameter above 0.1; the light-shift formulas lose validity."""


class InfeasibleTarget(UserWarning):
    """Requested (U0, Gamma_S) implies a saturation parameter above 0.1."""


class StrongProbeWarning(UserWarning):
    pass
