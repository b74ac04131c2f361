"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes, so new error types should
subclass one of the four top-level categories below.
"""


class ProtodecError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ProtodecError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(ProtodecError):
    """Malformed, missing, or contract-violating data (exit code 3)."""


class NotFoundError(DataError):
    """A requested record does not exist in the backing store."""


class ContractError(DataError):
    """A response or payload violates a declared interface contract."""


class NumericError(ProtodecError):
    """Numerical failure: divergence, underflow, non-finite values (exit code 4)."""


class RemoteError(ProtodecError):
    """Transport failure talking to a remote encoder endpoint (exit code 5)."""
