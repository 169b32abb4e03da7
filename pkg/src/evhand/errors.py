"""Error taxonomy mapped to CLI exit codes."""


class UsageError(Exception):
    """Bad arguments or configuration (exit code 1)."""


class DataError(Exception):
    """Missing, corrupt, or schema-invalid data (exit code 2)."""


class NumericalError(Exception):
    """Numerical failure such as a non-finite loss (exit code 3)."""
