"""Exception hierarchy shared by all mavsr modules."""


class MavsrError(Exception):
    """Base class for all library errors."""


class MissingInput(MavsrError):
    """An input path does not exist or is empty."""


class DimensionMismatch(MavsrError):
    """Frame dimensions or buffer sizes are inconsistent."""


class UnsupportedFormat(MavsrError):
    """Pixel format or container layout is not supported."""


class DegenerateMotion(MavsrError):
    """Motion parameters are invalid (non-positive or vanishing scale)."""


class TooFewCorners(MavsrError):
    """Corner detection yielded fewer points than required for tracking."""


class InsufficientMatches(MavsrError):
    """Fewer than two successfully tracked pairs are available."""


class DegenerateConfiguration(MavsrError):
    """All RANSAC minimal samples were coincident point pairs."""


class InvalidBreaks(MavsrError):
    """Break indices are unsorted, duplicated, or out of range."""


class ShapeMismatch(MavsrError):
    """Tensor shapes are incompatible with the requested operation."""


class EmptyClipList(MavsrError):
    """An operation over clips received an empty list."""


class IndexOverlap(MavsrError):
    """Anchor temporal indices collide with video temporal indices."""


class IndexOutOfRange(MavsrError):
    """An anchor frame index exceeds the latent temporal extent."""


class BadTemporalLength(MavsrError):
    """Clip temporal length is incompatible with the VAE stride."""


class SegMapMismatch(MavsrError):
    """A segment map does not sum to the latent temporal extent."""


class ConfigError(MavsrError):
    """Malformed configuration file or unknown key."""
