"""Exception types shared across the package."""


class DataError(Exception):
    """Invalid input data: malformed files, broken invariants, bad references."""


class OntologyError(DataError):
    pass


class CorpusError(DataError):
    pass


class ConfigError(DataError):
    pass


class NumericError(Exception):
    """Non-finite values where finite ones are required (loss, gradients)."""
