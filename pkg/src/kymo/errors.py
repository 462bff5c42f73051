"""Exception hierarchy shared by the solver, scheme and audit layers."""


class KymoError(Exception):
    """Base class for all errors raised by kymo."""


class NonConvergence(KymoError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"iterative solve did not converge after {iterations} iterations "
            f"(relative residual {residual:.3e})"
        )


class DomainViolation(KymoError, ValueError):
    """Motility evaluated outside its admissible range."""


class PositivityLoss(KymoError):
    """A density update produced values below the solver noise floor."""


class NegativeDensity(KymoError, ValueError):
    """Entropy requested for a field with negative values."""


class ConfigInvalid(KymoError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.violations))


class ParseError(KymoError, ValueError):
    pass


class WrongMotility(KymoError):
    """Energy functional requested for a motility without the energy structure."""


class InsufficientPoints(KymoError, ValueError):
    pass


class MMSInconsistent(KymoError):
    pass
