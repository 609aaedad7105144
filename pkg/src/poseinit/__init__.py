"""Monocular pose initialization for a known-geometry target.

Two pipelines over a shared P3P/RANSAC/Levenberg-Marquardt back-end: an
edge-feature method (Sharma-Ventura-D'Amico style perceptual grouping) and a
silhouette-matching method with a sphere-sampled synthetic view database. A
built-in synthetic rotary-stage scene closes the loop for benchmarking.
"""

from .geometry import (
    CameraModel,
    PixelPoint,
    PoseError,
    RigidTransform,
    pose_error,
    project,
    rotation_error,
    translation_error,
    undistort_pixel,
)

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "PixelPoint",
    "PoseError",
    "RigidTransform",
    "pose_error",
    "project",
    "rotation_error",
    "translation_error",
    "undistort_pixel",
    "__version__",
]
