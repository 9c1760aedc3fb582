"""Exception hierarchy shared by all celsim modules."""


class CelsimError(Exception):
    """Base class for every error raised by celsim."""


class IngestionError(CelsimError, ValueError):
    """A profile file is malformed (bad header, gap, duplicate, unparsable row)."""


class ValidationError(CelsimError, ValueError):
    """A value violates a domain invariant (negative load, roof overfill, ...)."""


class AxisMismatchError(CelsimError, ValueError):
    """Two profiles that must share a time axis do not."""


class TariffError(CelsimError, ValueError):
    """A tariff is queried or defined inconsistently."""


class InfeasibleError(CelsimError, RuntimeError):
    """The dispatch problem admits no feasible solution."""


class SizingError(CelsimError, ValueError):
    """The sizing search space is empty or ill-defined."""


class AgingParameterError(CelsimError, ValueError):
    """Aging parameters produce a non-physical fade (e.g. zero fade under cycling)."""


class TopologyError(CelsimError, ValueError):
    """The network is not a tree rooted at the transformer."""


class ConvergenceError(CelsimError, RuntimeError):
    """The power-flow sweep did not converge."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class IrrUndefinedError(CelsimError, ValueError):
    """The cash-flow sequence has no sign change, so no IRR exists."""


class ScenarioError(CelsimError, RuntimeError):
    """Wraps a module error with the id of the scenario that raised it."""

    def __init__(self, scenario_id, cause):
        super().__init__(f"scenario {scenario_id!r}: {cause}")
        self.scenario_id = scenario_id
        self.cause = cause
