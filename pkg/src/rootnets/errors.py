"""Exception hierarchy for the rootnets package."""


class RootnetsError(Exception):
    """Base class for all rootnets errors."""


class NetworkInvalidError(RootnetsError, ValueError):
    """Network violates a structural invariant (empty, disconnected, bad ids)."""


class InvariantViolationError(RootnetsError):
    """A vertex function returned different values on isomorphic rooted pairs."""


class ZeroMassError(RootnetsError):
    """Biasing or conditioning produced total mass zero."""


class NotUnimodularError(RootnetsError):
    """Operation requires a unimodular input distribution."""


class NotMarkovianError(RootnetsError):
    """Kernel rows do not sum to one on the support."""


class SupportMismatchError(RootnetsError):
    """Kernel composition over incompatible supports."""


class InvariantMismatchError(RootnetsError):
    """Shift-coupling requested between distributions with different unrooted laws."""


class MarginalDominationError(RootnetsError):
    """Requested marginal is not dominated by the coupling's marginal."""


class ZeroMassAtomError(RootnetsError):
    """A coupling fiber has zero mass and cannot be disintegrated."""


class MaxStagesExceededError(RootnetsError):
    """Iterative construction did not reach the residual target."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class IntensityMismatchError(RootnetsError):
    """Per-class conditional intensities of the two weight functions differ."""


class BalanceFailedError(RootnetsError):
    """Stable transport converged without balancing although intensities match."""


class MarkCountMismatchError(RootnetsError):
    """A supported atom does not carry the required exact count of 1-marks."""


class NonConstantIntensityError(RootnetsError):
    """Conditional intensity of the subset varies across unrooted classes."""


class RootOutsideSubnetworkError(RootnetsError):
    """An atom's root lies outside the covariant subnetwork."""


class SubnetworkDisconnectedError(RootnetsError):
    """The covariant subnetwork is empty or disconnected on some atom."""


class ImproperExtensionError(RootnetsError):
    """Extension fails the restricted mass-transport symmetry."""


class NotMarkovianIntoSubnetworkError(RootnetsError):
    """Kernel is not Markovian from all vertices into the subnetwork."""


class ZeroClassIntensityError(RootnetsError):
    """Conditional in-mass at the root vanishes on some unrooted class."""


class BracketInvalidError(RootnetsError):
    """Bisection bracket does not enclose the threshold."""


class EvenLengthError(RootnetsError, ValueError):
    """Path generator requires odd vertex counts."""


class CountOutOfRangeError(RootnetsError, ValueError):
    """Requested mark count exceeds the vertex count."""
