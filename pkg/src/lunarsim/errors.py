"""Exception hierarchy for the simulator and autonomy stack."""


class SimError(Exception):
    """Base class for all lunarsim errors."""


class ConfigurationError(SimError):
    """Invalid configuration value or document."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics) if diagnostics else [message]


class DomainError(SimError):
    """Query outside the valid domain (out-of-bounds point, non-unit ray, ...)."""


class InfeasibleCommandError(SimError):
    """Drive command cannot be realized within actuator geometry."""


class UnreachableError(SimError):
    """Arm target outside the reachable workspace."""


class LimitInfeasibleError(SimError):
    """Kinematic solutions exist but all violate joint limits."""


class PlanningFailure(SimError):
    """No feasible plan under the stated constraints."""


class InvalidEndpointError(SimError):
    """Planner start or goal lies in a lethal cell."""


class BehindCameraError(DomainError):
    """Point at or behind the camera plane (z <= 0)."""


class DegenerateGeometryError(SimError):
    """Stereo disparity non-positive; triangulation undefined."""


class InsufficientFeaturesError(SimError):
    """Too few (or collinear) shared landmarks for motion estimation."""


class EstimationFailure(SimError):
    """Iterative estimator failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericalFailure(SimError):
    """Linear-algebra breakdown (singular innovation covariance, ...)."""


class StateMachineError(SimError):
    """Invalid state-machine construction."""
