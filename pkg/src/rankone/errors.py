"""Exception types shared across the library.

Every error carries a machine-readable ``exit_class`` used by the CLI to
report failures without parsing messages.
"""


class RankOneError(Exception):
    """Base class for all library errors."""

    exit_class = "INTERNAL_ERROR"


class InfeasiblePlan(RankOneError):
    """A spacer plan cannot be expanded to the stage's column count."""

    exit_class = "INFEASIBLE"


class StageOverflow(RankOneError):
    """A stage height exceeded the configured guard."""

    exit_class = "BUDGET_ERROR"


class InfeasiblePairing(RankOneError):
    """No nonnegative spacer split realizes the height-offset pairing."""

    exit_class = "INFEASIBLE"

    def __init__(self, stage, message=None):
        self.stage = stage
        super().__init__(message or f"no nonnegative spacer split at stage {stage}")


class BudgetExceeded(RankOneError):
    """Materialization was forced beyond the configured budget."""

    exit_class = "BUDGET_ERROR"


class ShiftTooLarge(RankOneError):
    """|n| is not below the working tower height."""

    exit_class = "DOMAIN_ERROR"


class WindowTooSmall(RankOneError):
    """|n| exceeds the boundary-window width kept by lazy names."""

    exit_class = "DOMAIN_ERROR"


class StageMismatch(RankOneError):
    """Operands live at different tower stages."""

    exit_class = "DOMAIN_ERROR"


class FitDiverged(RankOneError):
    """The nonnegative fitter exceeded its iteration cap."""

    exit_class = "FIT_ERROR"


class NotRelativeProduct(RankOneError):
    """The strip inequality is asserted only for relative squares."""

    exit_class = "DOMAIN_ERROR"


class DegenerateStrip(RankOneError):
    """The conditioning strip has measure zero."""

    exit_class = "DOMAIN_ERROR"


class EmptyRange(RankOneError):
    """An estimator was given an empty scan range or family."""

    exit_class = "DOMAIN_ERROR"


class NotPaired(RankOneError):
    """Product-tower analysis requires heights differing by exactly one."""

    exit_class = "DOMAIN_ERROR"


class ConfigError(RankOneError):
    """An experiment spec failed validation."""

    exit_class = "CONFIG_ERROR"
