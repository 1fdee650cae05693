"""Exception hierarchy shared by all gibbslab modules."""


class GibbsLabError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(GibbsLabError):
    """Two sites with different coordinate dimensions were combined."""


class NonDominantError(GibbsLabError):
    """Interaction matrix is not strictly diagonally dominant."""


class AsymmetricInteractionError(GibbsLabError):
    """Interaction matrix has M_ij != M_ji for some stored pair."""


class DecayViolatedError(GibbsLabError):
    """A stored interaction entry exceeds the claimed algebraic envelope."""


class IllTemperedBoundaryError(GibbsLabError):
    """Boundary values couple with non-finite total weight into the box."""


class OverflowError_(GibbsLabError):
    """Energies left the floating range before log-sum-exp normalization."""


class BudgetExceededError(GibbsLabError):
    """Requested product grid exceeds the configured state budget."""


class EigensolveFailureError(GibbsLabError):
    """The spectral-gap eigensolve did not converge."""


class SolverDivergedError(GibbsLabError):
    """The Poisson conjugate-gradient solve did not reach tolerance."""


class NotPositiveDefiniteError(GibbsLabError):
    """Closed-form Gaussian summaries need a positive definite matrix."""


class NonFiniteEnergyError(GibbsLabError):
    """A Markov chain reached a state with non-finite energy."""


class TooFewBatchesError(GibbsLabError):
    """Not enough retained samples to form the requested batches."""


class BadRadiusError(GibbsLabError):
    """Block radius must be a half-integer: 2R integer, R not integer."""


class NotDominantError(GibbsLabError):
    """Block matrix is not strictly diagonally dominant."""


class ConditionViolatedError(GibbsLabError):
    """Model violates the symmetry/ferromagnetism/zero-field requirements."""


class NoAdmissibleLError(GibbsLabError):
    """No half-integer ball radius keeps the propagation sums below threshold."""


class BadSplitError(GibbsLabError):
    """Separating set must contain the first site and exclude the second."""


class DegeneratePointsError(GibbsLabError):
    """Power-law fit needs at least two distinct distances."""


class ConfigError(GibbsLabError):
    """Experiment configuration failed to parse or validate."""
