"""Error types shared across the package.

Exit-code mapping used by the CLI: 0 ok, 2 usage, 3 asset error,
4 numeric failure, 5 invariant violation.
"""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ASSET = 3
EXIT_NUMERIC = 4
EXIT_INVARIANT = 5


class GsanimError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class AssetError(GsanimError):
    """A parser or writer failure for an on-disk asset.

    ``kind`` is one of ``syntax``, ``bounds``, ``invariant``, ``io``.
    ``location`` is a byte offset or line number where the problem was
    detected, or None when it has no meaningful position.
    """

    exit_code = EXIT_ASSET
    KINDS = ("syntax", "bounds", "invariant", "io")

    def __init__(self, kind, message, location=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown AssetError kind {kind!r}")
        self.kind = kind
        self.location = location
        self.message = message
        where = "" if location is None else f" at {location}"
        super().__init__(f"[{kind}]{where} {message}")


class NumericError(GsanimError):
    """NaN or other numeric failure that aborts a run."""

    exit_code = EXIT_NUMERIC


class InvariantError(GsanimError):
    """A domain-type invariant was violated."""

    exit_code = EXIT_INVARIANT
