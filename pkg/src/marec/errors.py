"""Exception types shared across the package, mapped to CLI exit codes."""


class MarecError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigurationError(MarecError):
    """Invalid shapes, settings, or experiment configuration."""

    exit_code = 2


class DataError(MarecError):
    """Problems with datasets, files, or run artifacts."""

    exit_code = 3


class NumericError(MarecError):
    """Non-finite values or other numeric failures during compute."""

    exit_code = 4
