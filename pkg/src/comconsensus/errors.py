"""Exception hierarchy shared by all modules."""


class ConsensusError(Exception):
    """Base class for every error raised by this package."""


class DisconnectedGraph(ConsensusError):
    pass


class DimensionMismatch(ConsensusError, ValueError):
    pass


class UnstableMatrix(ConsensusError):
    pass


class NotDetectable(ConsensusError):
    pass


class NotStabilizable(ConsensusError):
    pass


class NoStabilizingSolution(ConsensusError):
    """An algebraic Riccati equation has no stabilizing solution."""


class NonzeroFeedthrough(ConsensusError, ValueError):
    pass


class IllFormed(ConsensusError, ValueError):
    pass


class NumericalFailure(ConsensusError):
    pass


class Infeasible(ConsensusError):
    """An LMI problem has no feasible point.

    ``certificate`` holds a short human-readable description of the evidence.
    """

    def __init__(self, message, certificate=""):
        super().__init__(message)
        self.certificate = certificate


class InfeasibleBudget(ConsensusError):
    """A requested H2 or H-infinity budget cannot be certified."""

    def __init__(self, message, inequality=""):
        super().__init__(message)
        self.inequality = inequality


class RankDeficient(ConsensusError, ValueError):
    pass


class UnstableSubsystem(ConsensusError):
    """A decomposed subsystem is not Hurwitz; ``lam`` is its Laplacian eigenvalue."""

    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class NonpositiveStep(ConsensusError, ValueError):
    pass


class UnknownSeries(ConsensusError, KeyError):
    pass
