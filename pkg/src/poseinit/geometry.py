"""Rigid transforms, the pinhole + Brown-Conrady camera model, and pose error metrics.

Conventions: quaternions are scalar-first [w, x, y, z] and kept unit-norm,
lengths are millimetres, angles are degrees at the API boundary (radians
internally). A pose maps target/world-frame points into the camera frame,
x_cam = R x + t, with the camera looking down +z, x right, y down.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import NoConvergence, PointBehindCamera

_UNDISTORT_MAX_ITER = 50
_UNDISTORT_TOL = 1e-8  # normalized coordinates


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(np.dot(q, q)))
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two scalar-first quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; always returns a unit quaternion."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    return _quat_normalize(q)


def quat_from_axis_angle(axis: np.ndarray, angle_deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = math.radians(angle_deg) / 2.0
    return np.concatenate([[math.cos(half)], math.sin(half) * axis / n])


def rotation_from_axis_angle(axis: np.ndarray, angle_deg: float) -> np.ndarray:
    return quat_to_matrix(quat_from_axis_angle(axis, angle_deg))


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose: unit quaternion (scalar-first) + translation in mm."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = _quat_normalize(np.asarray(self.quaternion, dtype=float).reshape(4))
        t = np.array(self.translation, dtype=float).reshape(3)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(R: np.ndarray, t: np.ndarray) -> "RigidTransform":
        return RigidTransform(quat_from_matrix(R), np.asarray(t, dtype=float))

    @staticmethod
    def from_axis_angle(axis, angle_deg: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(quat_from_axis_angle(np.asarray(axis, float), angle_deg), np.asarray(translation, float))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other: result(x) = self(other(x))."""
        q = quat_multiply(self.quaternion, other.quaternion)
        t = self.rotation_matrix() @ other.translation + self.translation
        return RigidTransform(q, t)

    def inverse(self) -> "RigidTransform":
        qc = self.quaternion * np.array([1.0, -1.0, -1.0, -1.0])
        Rt = self.rotation_matrix().T
        return RigidTransform(qc, -(Rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (..., 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix().T + self.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


@dataclass(frozen=True)
class PixelPoint:
    """Continuous image coordinates in pixels."""

    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("pixel coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics with Brown-Conrady distortion (k1, k2, p1, p2)."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    width: int = 1920
    height: int = 1080

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")

    @property
    def has_distortion(self) -> bool:
        return any(c != 0.0 for c in (self.k1, self.k2, self.p1, self.p2))

    def distort_normalized(self, xn: np.ndarray) -> np.ndarray:
        """Apply the distortion model to (..., 2) normalized coordinates."""
        xn = np.asarray(xn, dtype=float)
        x, y = xn[..., 0], xn[..., 1]
        r2 = x * x + y * y
        radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x)
        yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y
        return np.stack([xd, yd], axis=-1)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "CameraModel":
        d = json.loads(text)
        return CameraModel(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            k1=float(d.get("k1", 0.0)), k2=float(d.get("k2", 0.0)),
            p1=float(d.get("p1", 0.0)), p2=float(d.get("p2", 0.0)),
            width=int(d["width"]), height=int(d["height"]),
        )


def project(point: np.ndarray, pose: RigidTransform, cam: CameraModel) -> PixelPoint:
    """Project a world-frame point (mm) through pose and camera, with distortion."""
    pc = pose.apply(np.asarray(point, dtype=float).reshape(3))
    z = pc[2]
    if z <= 1e-6:
        raise PointBehindCamera(f"camera-frame depth {z:.3g} mm")
    xn = pc[:2] / z
    xd = cam.distort_normalized(xn)
    return PixelPoint(cam.fx * xd[0] + cam.cx, cam.fy * xd[1] + cam.cy)


def project_points(points: np.ndarray, pose: RigidTransform, cam: CameraModel,
                   distort: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) points.

    Returns (uv, z): (N, 2) pixel coordinates and (N,) camera-frame depths.
    Points behind the camera are not rejected here; callers check z.
    """
    pc = pose.apply(points)
    z = pc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xn = pc[..., :2] / z[..., None]
    xd = cam.distort_normalized(xn) if distort else xn
    uv = np.stack([cam.fx * xd[..., 0] + cam.cx, cam.fy * xd[..., 1] + cam.cy], axis=-1)
    return uv, z


def undistort_pixel(p: PixelPoint, cam: CameraModel) -> PixelPoint:
    """Invert the distortion model by fixed-point iteration."""
    xd = np.array([(p.u - cam.cx) / cam.fx, (p.v - cam.cy) / cam.fy])
    x = xd.copy()
    for _ in range(_UNDISTORT_MAX_ITER):
        xx, yy = x
        r2 = xx * xx + yy * yy
        radial = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2
        dx = 2.0 * cam.p1 * xx * yy + cam.p2 * (r2 + 2.0 * xx * xx)
        dy = cam.p1 * (r2 + 2.0 * yy * yy) + 2.0 * cam.p2 * xx * yy
        x_new = np.array([(xd[0] - dx) / radial, (xd[1] - dy) / radial])
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        if step < _UNDISTORT_TOL:
            break
    else:
        raise NoConvergence("undistortion did not converge in 50 iterations")
    # verify: re-distorting must land back on the input within 1e-6 px
    back = cam.distort_normalized(x)
    err = max(abs(cam.fx * back[0] + cam.cx - p.u), abs(cam.fy * back[1] + cam.cy - p.v))
    if err >= 1e-6:
        raise NoConvergence(f"undistortion residual {err:.3g} px")
    return PixelPoint(cam.fx * x[0] + cam.cx, cam.fy * x[1] + cam.cy)


def undistort_points(uv: np.ndarray, cam: CameraModel) -> np.ndarray:
    """undistort_pixel applied to an (N, 2) array; identity when undistorted."""
    if not cam.has_distortion:
        return np.asarray(uv, dtype=float).copy()
    out = np.empty_like(np.asarray(uv, dtype=float))
    for i, (u, v) in enumerate(np.asarray(uv, dtype=float)):
        q = undistort_pixel(PixelPoint(u, v), cam)
        out[i] = (q.u, q.v)
    return out


def translation_error(p: np.ndarray, p_star: np.ndarray) -> float:
    """L2 norm of the position difference, mm."""
    d = np.asarray(p, dtype=float) - np.asarray(p_star, dtype=float)
    return float(np.linalg.norm(d))


def rotation_error(R: np.ndarray, R_star: np.ndarray) -> float:
    """Geodesic rotation distance in degrees, arccos((Tr(R^T R*) - 1) / 2)."""
    if isinstance(R, RigidTransform):
        R = R.rotation_matrix()
    if isinstance(R_star, RigidTransform):
        R_star = R_star.rotation_matrix()
    arg = (np.trace(np.asarray(R).T @ np.asarray(R_star)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, float(arg)))))


@dataclass(frozen=True)
class PoseError:
    """Translation error (mm) and rotation error (deg) of a pose estimate."""

    e_t: float
    e_theta: float

    def __post_init__(self):
        if self.e_t < 0 or not (0.0 <= self.e_theta <= 180.0 + 1e-12):
            raise ValueError("invalid pose error")


def pose_error(estimate: RigidTransform, truth: RigidTransform) -> PoseError:
    return PoseError(
        e_t=translation_error(estimate.translation, truth.translation),
        e_theta=rotation_error(estimate.rotation_matrix(), truth.rotation_matrix()),
    )
