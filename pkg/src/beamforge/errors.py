"""Exception hierarchy.

Every failure mode callers are expected to handle maps to a dedicated
subclass of BeamforgeError so the CLI can translate them into stable exit
codes (data errors exit 2, I/O errors exit 3).
"""


class BeamforgeError(Exception):
    """Base class for all library errors."""


class DegenerateAxisError(BeamforgeError):
    """Point lies on the vertical sensor axis (x == y == 0); zenith undefined."""


class ScanFormatError(BeamforgeError):
    """Base class for scan file parsing/writing errors."""


class TruncatedFileError(ScanFormatError):
    """File ends mid-record or is shorter than its declared payload."""


class BadMagicError(ScanFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedLayoutError(ScanFormatError):
    """File is recognized but uses a field layout outside the supported subset."""


class MissingBeamLabelsError(ScanFormatError):
    """Target format requires per-point beam labels and the cloud has none."""


class InsufficientPointsError(BeamforgeError):
    """Too few (distinct) zenith samples to form the requested number of beams."""


class InvalidVfovError(BeamforgeError):
    """Vertical field of view is empty or inverted."""


class UpsampleRequestedError(BeamforgeError):
    """Resample or schedule would need to synthesize beams (target exceeds source)."""


class ModelCloudMismatchError(BeamforgeError):
    """Beam model does not cover the point cloud it is applied to."""


class ShapeMismatchError(BeamforgeError):
    """Tensor operands have incompatible shapes."""


class EmptyIntersectionError(BeamforgeError):
    """ROI does not intersect the feature grid."""


class NonFiniteInputError(BeamforgeError):
    """Scalar input is NaN or infinite."""


class ProfileError(BeamforgeError):
    """Sensor profile or simulator config file is malformed or missing."""


class HookFailureError(BeamforgeError):
    """External trainer hook exited with a nonzero status."""


class StaleManifestError(BeamforgeError):
    """Stage manifest no longer matches the data it was generated from."""
