"""Exception types shared across the package."""


class StepMIError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(StepMIError):
    """A record violates the file schema (bad field value, duplicate key)."""


class CompletenessError(StepMIError):
    """A participant-timepoint block is structurally incomplete."""


class CrossRefError(StepMIError):
    """Epoch data and participant records do not reference each other cleanly."""


class NoObservedSleep(StepMIError):
    """No fully observed day in any scope contains a sleep-class period."""


class EmptyDonorPool(StepMIError):
    """No donor candidate survives the matching constraints."""


class SingularCovariance(StepMIError):
    """Matching covariance matrix is singular even after ridge repair."""


class NonConvergence(StepMIError):
    """An iterative fit stopped without meeting its convergence criterion."""


class RankDeficientDesign(StepMIError):
    """Design matrix does not have full column rank."""


class ConstantInput(StepMIError):
    """A statistic is undefined because an input vector is constant."""


class InsufficientPool(StepMIError):
    """A sampling pool is smaller than the requested sample."""


class NoMissingness(StepMIError):
    """A series expected to carry missingness has no missing intervals."""
