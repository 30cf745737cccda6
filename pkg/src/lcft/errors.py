"""Exception hierarchy shared by every engine.

Validation errors map to CLI exit code 1, numerical failures to exit code 2.
"""


class LcftError(Exception):
    exit_code = 2

    def to_json(self):
        return {"error": type(self).__name__, "message": str(self)}


class ValidationError(LcftError):
    exit_code = 1


class NumericalFailure(LcftError):
    exit_code = 2


# geometry
class NonSmoothPoint(ValidationError):
    pass


class NotASphere(ValidationError):
    pass


class QuadratureFailure(NumericalFailure):
    pass


# field
class UnsupportedMetric(ValidationError):
    pass


class EigensolverFailure(NumericalFailure):
    pass


class CoincidentPoints(ValidationError):
    pass


class SupercriticalGamma(ValidationError):
    pass


# correlator
class SeibergViolation(ValidationError):
    def __init__(self, which, slack):
        self.which = which
        self.slack = slack
        super().__init__(f"{which} Seiberg bound violated (slack {slack:.6g})")

    def to_json(self):
        out = super().to_json()
        out.update(bound=self.which, slack=self.slack)
        return out


class MCDegenerate(NumericalFailure):
    pass


# beltrami
class SupportOverflow(ValidationError):
    pass


class NotPositiveDefinite(ValidationError):
    pass


class SupercriticalCoefficient(ValidationError):
    pass


class NoConvergence(NumericalFailure):
    pass


# symbolic
class VariableCollision(ValidationError):
    pass


class PoleHit(NumericalFailure):
    pass


class MissingDerivative(ValidationError):
    pass


# virasoro
class ZInsideSupport(ValidationError):
    pass


class RadiusOrderViolation(ValidationError):
    pass


class SupportViolation(ValidationError):
    pass


class ConfigError(ValidationError):
    pass
