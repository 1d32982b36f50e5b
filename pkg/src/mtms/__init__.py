"""Two-stage multi-target speech enhancement (IRM + RI, a-priori SNR, MMSE-LSA fusion)."""

__version__ = "0.1.0"


class MtmsError(Exception):
    """Base class for all package errors."""


class DimensionError(MtmsError, ValueError):
    """Array shapes or channel counts do not agree."""


class LengthError(DimensionError):
    """Signal is too short for the requested operation."""


class DataError(MtmsError, ValueError):
    """Input data is empty, silent or otherwise unusable."""


class FormatError(MtmsError, ValueError):
    """File or waveform format does not match the expected layout."""


class ConfigError(MtmsError, ValueError):
    """Configuration is missing, malformed or inconsistent."""


class GraphStateError(MtmsError, RuntimeError):
    """Autograd graph used in an invalid order (e.g. backward twice)."""
