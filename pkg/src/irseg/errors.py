"""Exception types shared across the package."""


class IrsegError(Exception):
    """Base class for all library-specific errors."""


class ConfigError(IrsegError):
    """Invalid configuration file, flag, or parameter combination."""


class UnsupportedFormatError(IrsegError):
    """File is not one of the formats this library reads."""


class CorruptDataError(IrsegError):
    """File payload is inconsistent with its header."""


class DimensionMismatchError(IrsegError):
    """Inputs disagree on raster dimensions or feature count."""


class NonFiniteError(IrsegError):
    """A NaN or infinity showed up where finite values are required."""


class TooFewFramesError(IrsegError):
    """A sequence has too few frames for the requested operation."""


class TooFewPointsError(IrsegError):
    """Fewer data points than the model order requires."""


class MissingChannelError(IrsegError):
    """A feature channel is enabled but its input was not supplied."""


class ChannelMismatchError(IrsegError):
    """Feature channel names do not match between model and data."""


class DegenerateComponentError(IrsegError):
    """A mixture component collapsed (vanishing responsibility mass)."""


class EmptyClusterError(IrsegError):
    """A cluster index occurs nowhere in a label map."""


class WrongKError(IrsegError):
    """Class count is incompatible with the requested operation."""


class ClassCountMismatchError(IrsegError):
    """Two label maps disagree on their number of classes."""


class FrameTooSmallError(IrsegError):
    """Frame is too small for the requested descriptor window."""


class InvalidSpecError(IrsegError):
    """A synthetic scene specification violates its invariants."""


class UnknownSceneError(IrsegError):
    """Requested benchmark scene name does not exist."""


class MissingTruthError(IrsegError):
    """No ground-truth file matches a prediction file."""
