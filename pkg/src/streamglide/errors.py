"""Exception types shared across the package."""


class StreamglideError(Exception):
    """Base class for all package errors."""


class InvalidInputError(StreamglideError, ValueError):
    """A position, angle or parameter is non-finite or otherwise malformed."""


class DegeneratePairError(StreamglideError, ValueError):
    """Two positions (or depths) coincide where they must differ."""


class FieldLoadError(StreamglideError, ValueError):
    """A layered field document or builder call violates the field schema."""


class ModelConfigError(StreamglideError, ValueError):
    """A glider model is physically inconsistent over its glide-angle set."""


class GlideAngleError(StreamglideError, ValueError):
    """A glide angle lies outside the admissible set, or the ballast does not match it."""


class IntegrationError(StreamglideError, ArithmeticError):
    """Forward integration produced a non-finite state."""


class ScenarioError(StreamglideError, ValueError):
    """A scenario or sweep document is malformed."""
