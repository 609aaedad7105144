"""Exception types raised across the library."""


class PoseInitError(Exception):
    """Base class for all library errors."""


# geometry
class PointBehindCamera(PoseInitError):
    """Raised when a point has non-positive depth in the camera frame."""


class NoConvergence(PoseInitError):
    """Iterative undistortion failed to reach tolerance."""


# image processing
class ImageTooSmall(PoseInitError):
    """Image smaller than the operator's minimum footprint."""


class EmptyImage(PoseInitError):
    """No pixel survived gradient thresholding."""


class NoSilhouette(PoseInitError):
    """No foreground component of sufficient area in the ROI."""


class EmptyShape(PoseInitError):
    """Moments requested for a shape with no foreground pixel."""


# PnP solving
class DegenerateConfiguration(PoseInitError):
    """Minimal-solver input points are (near-)collinear."""


class NoRealSolution(PoseInitError):
    """The minimal solver polynomial has no admissible real root."""


class TooFewCorrespondences(PoseInitError):
    """Fewer correspondences than the solver requires."""


class NoConsensus(PoseInitError):
    """No RANSAC hypothesis reached the inlier quorum."""


class DivergedBehindCamera(PoseInitError):
    """Refinement could not take any step keeping points in front of the camera."""


# pipelines
class NoHypotheses(PoseInitError):
    """Feature grouping produced no usable model pairing."""


class InitializationFailed(PoseInitError):
    """A pose-initialization pipeline failed before producing a result."""


class DegenerateContour(PoseInitError):
    """All contour points coincide; descriptors are undefined."""


class EmptyDatabase(PoseInitError):
    """Silhouette matching called with an empty database."""


# synthetic scene
class RenderFailure(PoseInitError):
    """A synthetic view could not be rendered."""


class OutOfFrame(PoseInitError):
    """The projected model does not intersect the sensor."""


# harness
class DatasetNotFound(PoseInitError):
    """Dataset directory is missing or incomplete."""


class DatabaseMismatch(PoseInitError):
    """Database header hashes do not match the supplied model/intrinsics."""
