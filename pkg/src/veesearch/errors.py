"""Exception hierarchy shared across the package."""


class VeesearchError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(VeesearchError, ValueError):
    """Input data or parameters violate an operation's preconditions."""


class ContractViolationError(VeesearchError):
    """Caller broke an ordering or state contract (e.g. out-of-order matches)."""


class DuplicateVideoError(VeesearchError):
    """A video id or name is already registered in the index."""


class IndexStateError(VeesearchError):
    """Operation not allowed in the index's current build/frozen state."""


class FileFormatError(VeesearchError):
    """File does not parse as the expected binary format."""


class TruncatedFileError(FileFormatError):
    """File ends before the declared payload is complete."""


class VersionMismatchError(FileFormatError):
    """File carries an unsupported format version."""


class ChecksumMismatchError(FileFormatError):
    """Stored checksum does not match the file payload."""
