"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to the
documented process exit statuses without a lookup table.
"""


class DGFError(Exception):
    exit_code = 3


class PolicyError(DGFError, ValueError):
    """Malformed splitting policy or aggregate spec."""

    exit_code = 2


class BelowGridMinimum(DGFError, ValueError):
    def __init__(self, dim, value, minimum):
        super().__init__(f"value {value!r} on dimension {dim!r} is below grid minimum {minimum!r}")
        self.dim = dim
        self.value = value
        self.minimum = minimum


class DataError(DGFError):
    """Bad input data: unparseable records, stale appends, quarantine overflow."""

    exit_code = 3


class MalformedRecord(DataError, ValueError):
    def __init__(self, message, reason="PARSE_ERROR"):
        super().__init__(message)
        self.reason = reason


class StaleAppend(DataError):
    pass


class NotCovered(DGFError, LookupError):
    """Requested aggregate cannot be derived from the stored header specs."""


class HeaderMismatch(DGFError, ValueError):
    pass


class NotFound(DGFError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "not found"


class InconsistencyError(DGFError):
    """Index and segment data disagree (unknown file, misaligned slice, duplicate key)."""

    exit_code = 4


class CorruptIndexFile(InconsistencyError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no
