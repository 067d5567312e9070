"""Shared exception types."""


class XlauthError(Exception):
    """Base class for all package errors."""


class InputShapeError(XlauthError):
    """Input sequence has the wrong length or shape."""


class DegenerateInputError(XlauthError):
    """Input is valid in shape but carries no usable signal content."""


class ValidationError(XlauthError):
    """A domain object violates one of its invariants."""


class RosterError(XlauthError):
    """Device roster is unusable for the requested scenario."""


class StratificationError(XlauthError):
    """A dataset cannot be split as requested."""


class TrainingError(XlauthError):
    """Classifier training preconditions not met."""


class CryptoError(XlauthError):
    """Curve, signature, or cipher level failure."""


class ProtocolError(XlauthError):
    """Protocol state machine violation (wrong order, bad registration)."""


class ScenarioError(XlauthError):
    """A simulation scenario is malformed."""
