"""Exception hierarchy shared across the library.

Two broad families matter for callers: configuration problems (bad user
input, missing files, out-of-range parameters) and data problems (inputs
that are structurally valid but degenerate, e.g. a template that projects
nowhere). The CLI maps these onto distinct exit codes.
"""


class EdgeposeError(Exception):
    """Base class for all library errors."""


class ConfigError(EdgeposeError):
    """Invalid configuration: missing file, out-of-range parameter."""


class DataError(EdgeposeError):
    """Structurally valid input that cannot be processed."""


class PointBehindCameraError(DataError):
    """A 3D point has non-positive depth in the camera frame."""


class MeshParseError(DataError):
    """Malformed STL stream; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyMeshError(DataError):
    """Mesh contains no usable triangles."""


class EmptyTemplateError(DataError):
    """No model edge sample is visible from the requested viewpoint."""


class EmptyProjectionError(DataError):
    """No template point projects inside the image."""


class OutOfBoundsError(DataError):
    """Tensor lookup outside the image domain."""


class BorderError(DataError):
    """Tensor gradient queried closer than one pixel to the border."""


class NoVisiblePointsError(DataError):
    """A cost or likelihood evaluation found no usable residual."""


class PlacementError(DataError):
    """Scene generation failed to place objects without intersection."""
