"""Exception hierarchy shared across the package."""


class DynatollError(Exception):
    """Base class for all package errors."""


class NetworkValidationError(DynatollError):
    """A scenario or network description violates a structural invariant."""


class DanglingArcError(NetworkValidationError):
    """A path references an arc id that does not exist."""


class AdjacencyError(NetworkValidationError):
    """Consecutive arcs on a path are not head-to-tail adjacent."""


class DemandError(NetworkValidationError):
    """An OD pair carries negative demand."""


class EmptyPathSetError(NetworkValidationError):
    """An OD pair with positive demand has no usable paths."""


class UnitError(NetworkValidationError):
    """A config file declares units other than the ones the solver runs in."""


class ScenarioParseError(DynatollError):
    """A scenario file is missing sections or carries malformed fields."""


class DomainError(DynatollError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class InfeasibleFlowError(DomainError):
    """A requested flow exceeds the capacity of the fundamental diagram."""


class HorizonOverflowError(DynatollError):
    """A vehicle does not exit an arc within the (extended) loading horizon."""

    def __init__(self, arc_id, entry_time, message=None):
        self.arc_id = arc_id
        self.entry_time = entry_time
        super().__init__(
            message
            or f"vehicle entering arc {arc_id!r} at t={entry_time:.4f} h "
            "does not exit within the loading horizon"
        )


class DegenerateTrajectoryError(DynatollError):
    """A path trajectory contains a zero-duration arc traversal."""


class InfeasibleProjectionError(DynatollError):
    """Positive demand cannot be projected onto an empty path set."""


class StepSizeError(DynatollError):
    """The fixed-point iteration diverged even after step-size reduction."""


class ProbeFailureError(DynatollError):
    """A finite-difference probe produced a non-finite objective value."""

    def __init__(self, coordinate, message=None):
        self.coordinate = coordinate
        super().__init__(
            message or f"non-finite objective at finite-difference probe {coordinate!r}"
        )


class GridMismatchError(DynatollError):
    """Two time-series inputs disagree on the time grid."""


class NoDescentError(DynatollError):
    """The toll optimizer achieved no descent in its first penalty round."""
