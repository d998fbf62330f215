"""Exception hierarchy. Every domain error carries the module that raised it."""


class MemctxError(Exception):
    module = "memctx"


class InvalidArgument(MemctxError, ValueError):
    pass


class InvalidPose(InvalidArgument):
    module = "camera_geometry"


class GridMismatch(MemctxError):
    module = "fov_retrieval"


class DegenerateTarget(MemctxError):
    module = "fov_retrieval"


class DegenerateDescriptor(MemctxError):
    module = "feature_retrieval"


class InvalidSlab(InvalidArgument):
    module = "responsiveness"


class CacheError(MemctxError):
    module = "memory_cache"


class CacheLoadError(CacheError):
    def __init__(self, path, offset, reason):
        super().__init__(f"{path}: byte {offset}: {reason}")
        self.path = path
        self.offset = offset


class FormatError(MemctxError):
    """Malformed trajectory, embedding or slab file."""

    module = "io"


class ConfigError(MemctxError):
    module = "config"
