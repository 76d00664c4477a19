"""Exception hierarchy shared across the package.

Every error that signals bad input derives from :class:`OdLabError`; the CLI
maps those to exit code 1 and anything else to exit code 2.
"""


class OdLabError(ValueError):
    """Base class for validation and precondition failures."""

    code = "invalid"


class InvalidConfiguration(OdLabError):
    code = "invalid_configuration"


class DegenerateSwitchMass(OdLabError):
    code = "degenerate_switch_mass"


class ConsensusTimeout(OdLabError):
    """Raised by :func:`odlab.dynamics.run` only when asked to."""

    code = "timeout"

    def __init__(self, result):
        super().__init__(f"no consensus after {result.rounds_executed} rounds")
        self.result = result


class OutOfOrderRound(OdLabError):
    code = "out_of_order_round"


class BudgetExceeded(OdLabError):
    code = "budget_exceeded"


class ShapeMismatch(OdLabError):
    code = "shape_mismatch"


class InadmissibleLambda(OdLabError):
    code = "inadmissible_lambda"


class InvalidSlack(OdLabError):
    code = "invalid_slack"


class DegenerateInput(OdLabError):
    code = "degenerate_input"


class SpecError(OdLabError):
    code = "spec_error"
