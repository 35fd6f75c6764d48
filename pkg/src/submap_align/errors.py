"""Exception hierarchy shared by all modules."""


class SubmapAlignError(Exception):
    """Base class for every error raised by this package."""


class InvalidDepthError(SubmapAlignError, ValueError):
    pass


class InsufficientDataError(SubmapAlignError, ValueError):
    """Too few points, poses or frames for the requested estimate."""


class DegenerateConfigurationError(SubmapAlignError, ValueError):
    """Input geometry does not determine a unique solution."""


class BundleFormatError(SubmapAlignError):
    """A prediction bundle on disk violates the manifest/tensor contract."""

    def __init__(self, message, *, path=None, frame=None):
        where = []
        if path is not None:
            where.append(f"file {path}")
        if frame is not None:
            where.append(f"frame {frame}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.path = path
        self.frame = frame


class ConfigError(SubmapAlignError, ValueError):
    pass


class StageError(SubmapAlignError):
    """A pipeline stage failed; carries the submap index and stage name."""

    def __init__(self, submap, stage, cause):
        super().__init__(f"submap {submap}, stage '{stage}': {cause}")
        self.submap = submap
        self.stage = stage
        self.cause = cause


class MissingTensorError(BundleFormatError):
    pass


class TensorLengthError(BundleFormatError):
    """Tensor file byte length is not a whole number of elements (truncated)."""


class TensorShapeError(BundleFormatError):
    """Tensor element count disagrees with the manifest image size."""


class PoseFormatError(BundleFormatError):
    pass


class SceneGenerationError(SubmapAlignError):
    """The synthetic scene cannot satisfy its visibility requirement."""
