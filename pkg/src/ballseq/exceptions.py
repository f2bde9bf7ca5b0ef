"""Exception types shared across the package."""


class DataError(Exception):
    """Bad or missing input data (annotation files, images, checkpoints)."""


class AnnotationError(DataError):
    pass


class CheckpointError(DataError):
    pass


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""

