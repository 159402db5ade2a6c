"""Exception hierarchy shared across the package.

ValidationError covers malformed user input (bad arguments, bad files,
infeasible targets); the CLI maps it to exit code 2. Everything else that
is a CtcspellError maps to exit code 3.
"""


class CtcspellError(Exception):
    """Base class for all package errors."""


class ValidationError(CtcspellError):
    """Caller-supplied input violates a documented precondition."""


class ShapeError(ValidationError):
    """Tensor or matrix shapes do not match an operation's contract."""


class FormatError(ValidationError):
    """A serialized artifact (checkpoint, FST, posterior file) is malformed."""


class FeasibilityError(ValidationError):
    """A CTC target needs more frames than the utterance provides."""


class NumericsError(CtcspellError):
    """Numeric invariant broken (non-finite value, loss off the tape)."""


class FstError(CtcspellError):
    """Structural problem in a finite-state machine."""


class DeterminizeError(FstError):
    """Determinization exceeded its expansion guard; input is likely
    not determinizable (e.g. unresolved homophones in a lexicon)."""


class DecodeError(CtcspellError):
    """Beam search pruned away every hypothesis; retry with a larger beam."""
