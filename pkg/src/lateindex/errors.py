"""Exception hierarchy for the lateindex package."""


class LateIndexError(Exception):
    """Base class for all lateindex errors."""


# --- vector math ---------------------------------------------------------


class ZeroVectorError(LateIndexError):
    """Vector has (near-)zero norm and cannot be normalized."""


class NonFiniteError(LateIndexError):
    """Vector or matrix contains NaN or infinite entries."""


class DimensionMismatchError(LateIndexError):
    """Operands have incompatible dimensions."""


class OverflowLimitError(LateIndexError):
    """Computed quantity exceeds the representable 64-bit range."""


# --- store / graph -------------------------------------------------------


class DuplicatePatchError(LateIndexError):
    """The same (page, patch_number) was ingested twice."""


class MissingPatchError(LateIndexError):
    """A page's patch numbers do not form a contiguous 0..m-1 range."""


class DuplicatePageError(LateIndexError):
    """The same (doc_id, page_number) appears twice in a manifest."""


class UnknownPageError(LateIndexError):
    """Requested page is not present in the store."""


class EmptyStoreError(LateIndexError):
    """Operation requires a non-empty store."""


class BadParamsError(LateIndexError):
    """Search parameters violate their preconditions (e.g. ef < k)."""


# --- pipeline ------------------------------------------------------------


class EmptyQueryError(LateIndexError):
    """Query embedding has zero token rows."""


class EmptyPageError(LateIndexError):
    """Page embedding has zero patch rows."""


class EmptyCandidatesError(LateIndexError):
    """Re-ranking was asked to rank an empty candidate list."""


class CandidateOverflowError(LateIndexError):
    """First-pass candidate set exceeded the configured cap."""


# --- file I/O ------------------------------------------------------------


class IoFailureError(LateIndexError):
    """Underlying OS-level read/write failure."""


class CorruptIndexError(LateIndexError):
    """Index file failed magic, structural, or checksum validation."""


class CorruptFileError(LateIndexError):
    """Embedding file failed magic or structural validation."""


class VersionMismatchError(LateIndexError):
    """File was written with an unsupported format version."""


class MalformedLineError(LateIndexError):
    """A line of a run file violates the format; carries the line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


# --- ingestion / remote services -----------------------------------------


class BadSpecError(LateIndexError):
    """Synthetic corpus spec is internally inconsistent."""


class EndpointUnconfiguredError(LateIndexError):
    """A remote endpoint is required but not configured."""


class TransportFailureError(LateIndexError):
    """Remote endpoint could not be reached or timed out."""


class BadResponseError(LateIndexError):
    """Remote endpoint returned a malformed or non-finite payload."""


# --- evaluation ----------------------------------------------------------


class MissingQrelsError(LateIndexError):
    """A run query has no relevance judgments."""


class EmptyRunError(LateIndexError):
    """Run file contains no queries."""


class EmptyInputError(LateIndexError):
    """Aggregation over an empty collection."""
