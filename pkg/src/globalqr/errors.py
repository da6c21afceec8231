"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line layer can map it
without a lookup table: 3 for data problems, 4 for numerical failures.
"""

from __future__ import annotations


class GlobalQRError(Exception):
    exit_code = 1


class DataError(GlobalQRError):
    exit_code = 3


class NumericalError(GlobalQRError):
    exit_code = 4


class MissingValues(DataError):
    pass


class EmptyInteresting(DataError):
    pass


class RankDeficientNuisance(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class InvalidTau(DataError):
    pass


class WnNeedsCategorical(DataError):
    def __init__(self, msg: str = "WN requires categorical nuisance"):
        super().__init__(msg)


class InvalidParameters(DataError):
    pass


class RankDeficientDesign(NumericalError):
    pass


class DidNotConverge(NumericalError):
    pass


class IndexZeroReserved(GlobalQRError):
    exit_code = 2

    def __init__(self, msg: str = "replicate index 0 is the observed data"):
        super().__init__(msg)


class ReplicateFitError(NumericalError):
    """A replicate fit failed; names the replicate index and tau."""

    def __init__(self, index: int, tau: float, cause: Exception):
        self.index = index
        self.tau = tau
        self.cause = cause
        super().__init__(f"replicate {index} failed at tau={tau:g}: {cause}")
