"""Exception types shared across the toolkit."""


class XaneError(Exception):
    """Base class for all toolkit errors."""


class AudioFormatError(XaneError):
    """Unreadable or unsupported audio data (bad encoding, wrong rate, ...)."""


class ConfigError(XaneError):
    """Invalid user configuration or domain-violating parameters."""


class NumericsError(XaneError):
    """Numerical failure: non-finite loss, degenerate decay range, ..."""
