"""Exception types shared across the pipeline.

The CLI maps these onto exit codes, so downstream code should raise the
most specific class that applies rather than bare ValueError/RuntimeError.
"""


class ValidationError(ValueError):
    """Input failed a contract check (shapes, ranges, schemas)."""


class DegenerateReferenceError(ValidationError):
    """Threshold search got a reference set with no positive pixels."""


class MissingArtifactError(FileNotFoundError):
    """A required upstream artifact (checkpoint, labels, raster) is absent."""


class SegmenterBackendError(RuntimeError):
    """The segmentation backend failed.

    ``retriable`` distinguishes transport-level failures (timeouts,
    connection refused, 5xx) from permanent ones (malformed response).
    """

    def __init__(self, message: str, retriable: bool = False):
        super().__init__(message)
        self.retriable = retriable


class AdaptationDivergedError(RuntimeError):
    """Adaptation loss became non-finite; the run was aborted."""
