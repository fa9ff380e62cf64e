"""Exception types shared across the package."""


class PlanSimError(Exception):
    """Base class for all package errors."""


class ScenarioFormatError(PlanSimError):
    """Scenario file cannot be parsed or violates the schema."""


class ScenarioValidationError(PlanSimError):
    """Scenario content violates a domain invariant."""


class RouteGapError(PlanSimError):
    """Consecutive route lanes do not join geometrically."""


class ProjectionError(PlanSimError):
    """A point cannot be projected onto the reference line."""


class FrenetSingularityError(PlanSimError):
    """Lateral offset reaches the local center of curvature (1 - k*d <= 0)."""


class NoFeasibleTrajectoryError(PlanSimError):
    """Every candidate in a planning set was rejected."""


class PlanningFailureError(PlanSimError):
    """The planner could not produce any executable action."""
