from typing import List, Optional


class DampwaveError(Exception):
    """Base class for every error raised by dampwave"""


class ConfigError(DampwaveError):
    """One or more configuration constraints are violated"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) if self.errors else "invalid configuration")


class ConfigParseError(ConfigError):
    """Config text is not well-formed; the message carries line and column"""


class CflViolationError(DampwaveError):
    pass


class NumericalBlowupError(DampwaveError):
    """Non-finite values or a threshold crossing during time stepping"""

    def __init__(self, t: float, message: Optional[str] = None):
        self.t = t
        super().__init__(message or f"numerical blow-up at t={t!r}")


class TableCoverageError(DampwaveError):
    pass


class GridMismatchError(DampwaveError):
    pass


class ThresholdError(DampwaveError):
    """Time is below the threshold (t0 or t1) past which the equivalence bounds hold"""


class NonlinearTrajectoryError(DampwaveError):
    pass


class InsufficientDataError(DampwaveError):
    pass


class SignConditionError(DampwaveError):
    """Data fail the positivity condition that guarantees blow-up"""


class BudgetExceededError(DampwaveError):
    pass
