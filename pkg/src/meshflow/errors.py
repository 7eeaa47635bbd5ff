"""Exception types shared across the package."""


class MeshParseError(ValueError):
    """Malformed mesh file. Message carries the offending line number."""


class UnsupportedTopologyError(ValueError):
    """Mesh uses features outside the triangle-only scope (quads, polygons)."""


class DegenerateGeometryError(ValueError):
    """Geometry without usable extent (zero-area surface, zero bounding box)."""


class ShapeError(ValueError):
    """Tensor arguments do not conform."""


class NumericError(ArithmeticError):
    """A numeric result left the finite regime (NaN/Inf, exp overflow)."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class CheckpointError(ValueError):
    """Unreadable checkpoint: bad magic, truncation, or version mismatch."""
