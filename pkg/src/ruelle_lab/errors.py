"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class RuelleLabError(Exception):
    exit_code = 7


class ConfigInvalid(RuelleLabError):
    exit_code = 2

    def __init__(self, pointer, message):
        self.pointer = pointer
        self.message = message
        super().__init__(f"{pointer}: {message}")


class NonConvergence(RuelleLabError):
    exit_code = 3


class ThresholdViolated(RuelleLabError):
    exit_code = 4


class FitDiverged(RuelleLabError):
    exit_code = 5


class MonotonicityViolation(RuelleLabError):
    exit_code = 6


class VerificationFailed(RuelleLabError):
    exit_code = 6


class NotDispersed(RuelleLabError):
    pass


class IntegratorStep(RuelleLabError):
    pass


class BracketInvalid(RuelleLabError):
    pass


class OutsideConvergence(RuelleLabError):
    pass


class UnsupportedObservable(RuelleLabError):
    pass


class IoFailure(RuelleLabError):
    exit_code = 8
