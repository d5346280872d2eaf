"""Exception hierarchy for the rewardprop package.

Every failure mode raised by the library derives from :class:`RewardPropError`
so callers (and the CLI) can map error categories to exit codes without
string-matching messages.
"""


class RewardPropError(Exception):
    """Base class for all rewardprop errors."""


# --- dataset / format errors -------------------------------------------------

class MalformedHeader(RewardPropError):
    """Dataset file header (schema line or binary preamble) cannot be parsed."""


class SchemaMismatch(RewardPropError):
    """Record payload does not match the declared factor schema."""


class NonFiniteValue(RewardPropError):
    """A state, action, or reward value is NaN or infinite."""


class EmptyDataset(RewardPropError):
    """Dataset file contains a header but no records."""


class IoFailure(RewardPropError):
    """Underlying file I/O failed while reading or writing a dataset."""


class SliceWithoutLabels(RewardPropError):
    """A sequential slice contains zero labeled records."""


class DegenerateSlice(RewardPropError):
    """A slice is too small to build a propagation graph (fewer than 2 nodes)."""


# --- shaping / training errors -----------------------------------------------

class LengthMismatch(RewardPropError):
    """Vector lengths disagree (parameters vs. factors, inferred vs. truth, ...)."""


class TooFewLabels(RewardPropError):
    """Training requires at least 2 labeled nodes in the slice."""


class DivergenceDetected(RewardPropError):
    """Training loss became non-finite."""


# --- inference errors ----------------------------------------------------------

class NoLabeledNodes(RewardPropError):
    """Inference requires at least one labeled node."""


class NoUnlabeledNodes(RewardPropError):
    """Inference requires at least one unlabeled node."""


class NotContractive(RewardPropError):
    """Max row sum of the unlabeled-unlabeled block is >= 1; iteration may not converge."""


class MaxItersExceeded(RewardPropError):
    """Iterative propagation did not reach tolerance within the iteration cap."""


class SingularSystem(RewardPropError):
    """The direct solve hit a pivot below threshold; the system is numerically singular."""


# --- benchmark errors ----------------------------------------------------------

class InfeasibleSpec(RewardPropError):
    """Synthetic task specification cannot produce a trainable dataset."""


class InsufficientFactors(RewardPropError):
    """Factorization ablation requested distinct methods on a schema that cannot provide them."""


class EmptyInput(RewardPropError):
    """An evaluation metric was called on zero-length input."""
