"""Exception types shared across the package."""


class ConfigError(Exception):
    """A configuration file or value is malformed or inconsistent."""


class DataError(Exception):
    """An input file, corpus, or dataset is missing or corrupt."""


class NumericAbort(Exception):
    """Training hit a non-finite value and stopped."""
