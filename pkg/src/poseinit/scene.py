"""Synthetic ground-truth generator: 2U CubeSat model, rasterizers, rotary trajectory.

The edge render stands in for the camera image: flat shading (background
0.35, body 0.75) with dark anti-aliased wireframe lines (0.05), levels chosen
for strong gradient responses. The silhouette render is a binary mask plus
per-boundary-pixel 3D anchors recorded during rasterization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import ndimage

from .errors import OutOfFrame
from .geometry import CameraModel, RigidTransform, rotation_from_axis_angle, quat_from_matrix
from .imageops import GrayImage
from .wireframe import (
    KIND_ANTENNA,
    KIND_PARALLEL_PAIR,
    KIND_PARALLEL_TRIAD,
    KIND_PROXIMITY_PAIR,
    KIND_TETRAD,
    KIND_TRIAD,
    WireframeModel,
)

BACKGROUND_LEVEL = 0.35
BODY_LEVEL = 0.75
EDGE_INK = 0.05

# 2U CubeSat envelope; the antenna bars are synthetic additions that break the
# cuboid's rotational symmetry (they also exercise the Antenna feature class)
BODY_X = 100.0
BODY_Y = 100.0
BODY_Z = 227.0
ANTENNA_LENGTH = 150.0
ANTENNA_HALF_WIDTH = 5.0


@dataclass(frozen=True)
class TrajectorySpec:
    range_mm: float = 1630.0
    step_deg: float = 0.84
    frame_count: int = 475
    axis_tilt_deg: float = 30.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.range_mm <= 0 or self.step_deg <= 0 or self.frame_count < 1:
            raise ValueError("invalid trajectory spec")


@dataclass(frozen=True)
class DatasetFrame:
    image: GrayImage
    ground_truth: RigidTransform  # target frame -> camera frame
    frame_index: int


@dataclass(frozen=True)
class BoundaryAnchors:
    """Per-boundary-pixel 3D surface points recorded during rasterization."""

    pixels: np.ndarray  # (M, 2) int, (x, y)
    points: np.ndarray  # (M, 3) mm, target frame


def _quad(verts, a, b, c, d):
    """Split a quad into two triangles wound so the normal points outward."""
    tris = [(a, b, c), (a, c, d)]
    out = []
    centroid = verts.mean(axis=0)
    for t in tris:
        p = verts[list(t)]
        n = np.cross(p[1] - p[0], p[2] - p[0])
        if np.dot(n, p.mean(axis=0) - centroid) < 0:
            t = (t[0], t[2], t[1])
        out.append(t)
    return out


def build_cubesat_2u(with_antennas: bool = True) -> WireframeModel:
    """1:1 2U CubeSat: 100 x 100 x 227 mm cuboid, optionally with two antenna bars.

    The antennas root on the +z face at (25, 0) and (0, 25) mm, extend 150 mm
    along +z as thin quads in perpendicular planes, and carry one annotated
    wireframe edge each.
    """
    hx, hy, hz = BODY_X / 2, BODY_Y / 2, BODY_Z / 2
    verts = [
        (-hx, -hy, -hz), (hx, -hy, -hz), (hx, hy, -hz), (-hx, hy, -hz),
        (-hx, -hy, hz), (hx, -hy, hz), (hx, hy, hz), (-hx, hy, hz),
    ]
    edges = [
        (0, 1), (1, 2), (2, 3), (3, 0),          # bottom ring
        (4, 5), (5, 6), (6, 7), (7, 4),          # top ring
        (0, 4), (1, 5), (2, 6), (3, 7),          # verticals
    ]
    quads = [
        (0, 3, 2, 1),  # -z
        (4, 5, 6, 7),  # +z
        (0, 1, 5, 4),  # -y
        (2, 3, 7, 6),  # +y
        (1, 2, 6, 5),  # +x
        (0, 4, 7, 3),  # -x
    ]
    body_verts = np.array(verts, dtype=float)
    faces = []
    for q in quads:
        faces.extend(_quad(body_verts, *q))

    annotations = {
        KIND_TETRAD: [(0, 1, 2, 3), (4, 5, 6, 7), (0, 9, 4, 8), (2, 11, 6, 10), (1, 10, 5, 9), (3, 8, 7, 11)],
        KIND_TRIAD: [],
        KIND_PARALLEL_TRIAD: [],
        KIND_PARALLEL_PAIR: [],
        KIND_PROXIMITY_PAIR: [],
        KIND_ANTENNA: [],
    }
    # open 3-chains: each face cycle with one edge dropped
    for cyc in annotations[KIND_TETRAD]:
        for k in range(4):
            annotations[KIND_TRIAD].append(tuple(cyc[(k + 1 + m) % 4] for m in range(3)))
    # roots chosen so no body symmetry (z rotations, 180-degree flips) maps
    # one antenna onto the other: the pair pins the azimuth uniquely
    antenna_edge_ids = []
    if with_antennas:
        for root, plane_axis in (((25.0, 0.0), 0), ((-20.0, 25.0), 1)):
            base = len(verts)
            rx, ry = root
            off = np.zeros(3)
            off[plane_axis] = ANTENNA_HALF_WIDTH
            r = np.array([rx, ry, hz])
            tip = r + (0.0, 0.0, ANTENNA_LENGTH)
            quad_pts = [r - off, r + off, tip + off, tip - off]
            verts.extend([tuple(p) for p in quad_pts])
            faces.append((base, base + 1, base + 2))
            faces.append((base, base + 2, base + 3))
            line_base = len(verts)
            verts.extend([tuple(r), tuple(tip)])
            edges.append((line_base, line_base + 1))
            antenna_edge_ids.append(len(edges) - 1)
            annotations[KIND_ANTENNA].append((len(edges) - 1,))

    # parallel groups per axis direction; the antennas join the z group, which
    # is what lets parallel-feature hypotheses pin the azimuth unambiguously
    all_verts_tmp = np.array(verts, dtype=float)
    for axis in range(3):
        same = [
            e for e, (i, j) in enumerate(edges)
            if abs((all_verts_tmp[j] - all_verts_tmp[i])[axis]) > 1.0
        ]
        for trio in combinations(same, 3):
            annotations[KIND_PARALLEL_TRIAD].append(trio)
        for pair in combinations(same, 2):
            annotations[KIND_PARALLEL_PAIR].append(pair)
    # edge pairs sharing a body vertex
    for v in range(8):
        inc = [e for e, (i, j) in enumerate(edges) if v in (i, j)]
        for pair in combinations(inc, 2):
            annotations[KIND_PROXIMITY_PAIR].append(pair)

    # center on the vertex mean so the trajectory spin axis and the view
    # sphere are both anchored at centroid() exactly
    all_verts = np.array(verts, dtype=float)
    all_verts -= all_verts.mean(axis=0)
    return WireframeModel(
        vertices=all_verts,
        edges=tuple(edges),
        faces=tuple(faces),
        feature_annotations={k: tuple(v) for k, v in annotations.items()},
    )


def _rasterize(model: WireframeModel, pose: RigidTransform, cam: CameraModel):
    """Z-buffer rasterization of all faces at pixel centers.

    Buffers cover only the projected bounding box. Returns (mask, face_id,
    bary, verts_cam, origin) with mask/face_id/bary of box shape, bary holding
    affine screen-space barycentric coordinates of the winning face, and
    origin the (x, y) pixel offset of the box.
    """
    verts_cam = pose.apply(model.vertices)
    uv = np.full((len(verts_cam), 2), np.nan)
    z = verts_cam[:, 2]
    front = z > 1e-6
    uv[front, 0] = cam.fx * verts_cam[front, 0] / z[front] + cam.cx
    uv[front, 1] = cam.fy * verts_cam[front, 1] / z[front] + cam.cy
    if not front.any():
        empty = np.zeros((0, 0))
        return empty.astype(bool), empty.astype(np.int32), np.zeros((0, 0, 3)), verts_cam, (0, 0)
    ox = max(0, int(math.floor(np.nanmin(uv[:, 0]))) - 1)
    oy = max(0, int(math.floor(np.nanmin(uv[:, 1]))) - 1)
    ex = min(cam.width, int(math.ceil(np.nanmax(uv[:, 0]))) + 2)
    ey = min(cam.height, int(math.ceil(np.nanmax(uv[:, 1]))) + 2)
    bw, bh = max(0, ex - ox), max(0, ey - oy)
    zbuf = np.full((bh, bw), np.inf)
    fid = np.full((bh, bw), -1, dtype=np.int32)
    bary = np.zeros((bh, bw, 3))
    for k, f in enumerate(model.faces):
        idx = list(f)
        if not front[idx].all():
            continue
        p = uv[idx]
        x0 = max(ox, int(math.floor(p[:, 0].min())))
        x1 = min(ex - 1, int(math.ceil(p[:, 0].max())))
        y0 = max(oy, int(math.floor(p[:, 1].min())))
        y1 = min(ey - 1, int(math.ceil(p[:, 1].max())))
        if x1 < x0 or y1 < y0:
            continue
        det = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
        if abs(det) < 1e-12:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        dx = gx - p[0, 0]
        dy = gy - p[0, 1]
        l1 = ((p[2, 1] - p[0, 1]) * dx - (p[2, 0] - p[0, 0]) * dy) / det
        l2 = (-(p[1, 1] - p[0, 1]) * dx + (p[1, 0] - p[0, 0]) * dy) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
        if not inside.any():
            continue
        invz = l0 / verts_cam[idx[0], 2] + l1 / verts_cam[idx[1], 2] + l2 / verts_cam[idx[2], 2]
        with np.errstate(divide="ignore"):
            zpix = 1.0 / invz
        sub = (slice(y0 - oy, y1 + 1 - oy), slice(x0 - ox, x1 + 1 - ox))
        win = inside & (zpix < zbuf[sub])
        zbuf[sub] = np.where(win, zpix, zbuf[sub])
        fid[sub] = np.where(win, k, fid[sub])
        for c, l in enumerate((l0, l1, l2)):
            bary[sub + (c,)] = np.where(win, l, bary[sub + (c,)])
    return fid >= 0, fid, bary, verts_cam, (ox, oy)


def render_silhouette(model: WireframeModel, pose: RigidTransform, cam: CameraModel):
    """Binary silhouette of all faces plus occluding-contour anchors.

    Anchors are the perspective-correct 3D surface points (target frame) whose
    projections realize each boundary pixel of the mask.

    Returns (GrayImage, BoundaryAnchors).
    """
    if pose.apply(model.centroid())[2] <= 1e-6:
        raise OutOfFrame("model centroid behind the camera")
    mask, fid, bary, verts_cam, (ox, oy) = _rasterize(model, pose, cam)
    if not mask.any():
        raise OutOfFrame("projected model misses the sensor")
    interior = ndimage.binary_erosion(mask, structure=np.ones((3, 3), dtype=bool), border_value=0)
    by, bx = np.nonzero(mask & ~interior)
    faces = np.array(model.faces, dtype=int)[fid[by, bx]]
    lam = bary[by, bx, :]  # (M, 3) screen barycentric
    vz = verts_cam[:, 2][faces]  # (M, 3)
    wgt = lam / vz
    wgt /= wgt.sum(axis=1, keepdims=True)
    pts = np.einsum("mk,mkj->mj", wgt, model.vertices[faces])
    anchors = BoundaryAnchors(pixels=np.column_stack([bx + ox, by + oy]), points=pts)
    full = np.zeros((cam.height, cam.width), dtype=bool)
    full[oy : oy + mask.shape[0], ox : ox + mask.shape[1]] = mask
    return GrayImage(full.astype(float)), anchors


def visible_edges(model: WireframeModel, pose: RigidTransform):
    """Indices of edges to draw: any adjacent face front-facing, or no faces at all."""
    return model.visible_edge_indices(pose.apply(model.vertices))


def _draw_line_aa(img: np.ndarray, p0, p1, width: float, ink: float):
    h, w = img.shape
    lo = np.floor(np.minimum(p0, p1) - width / 2 - 1.5).astype(int)
    hi = np.ceil(np.maximum(p0, p1) + width / 2 + 1.5).astype(int)
    x0, y0 = np.clip(lo, 0, [w - 1, h - 1])
    x1, y1 = np.clip(hi, 0, [w - 1, h - 1])
    if x1 < x0 or y1 < y0:
        return
    gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    d = np.asarray(p1, float) - np.asarray(p0, float)
    L2 = float(d @ d)
    if L2 < 1e-12:
        t = np.zeros_like(gx, dtype=float)
    else:
        t = ((gx - p0[0]) * d[0] + (gy - p0[1]) * d[1]) / L2
        t = np.clip(t, 0.0, 1.0)
    px = p0[0] + t * d[0]
    py = p0[1] + t * d[1]
    dist = np.hypot(gx - px, gy - py)
    cov = np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)
    sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
    img[sub] = img[sub] * (1.0 - cov) + ink * cov


def render_edges(model: WireframeModel, pose: RigidTransform, cam: CameraModel,
                 line_width: float = 1.0) -> GrayImage:
    """Visible-edge rendering used as the camera-image stand-in.

    Mid-gray background, silhouette interior shaded light-gray, dark
    anti-aliased lines along visible wireframe edges.
    """
    if pose.apply(model.centroid())[2] <= 1e-6:
        raise OutOfFrame("model centroid behind the camera")
    mask, _, _, verts_cam, (ox, oy) = _rasterize(model, pose, cam)
    if not mask.any():
        raise OutOfFrame("projected model misses the sensor")
    img = np.full((cam.height, cam.width), BACKGROUND_LEVEL)
    img[oy : oy + mask.shape[0], ox : ox + mask.shape[1]][mask] = BODY_LEVEL
    z = verts_cam[:, 2]
    uv = np.column_stack([
        cam.fx * verts_cam[:, 0] / np.where(z > 1e-6, z, np.nan) + cam.cx,
        cam.fy * verts_cam[:, 1] / np.where(z > 1e-6, z, np.nan) + cam.cy,
    ])
    for e in visible_edges(model, pose):
        i, j = model.edges[e]
        if z[i] <= 1e-6 or z[j] <= 1e-6:
            continue
        _draw_line_aa(img, uv[i], uv[j], line_width, EDGE_INK)
    return GrayImage(np.clip(img, 0.0, 1.0))


def rotary_pose(spec: TrajectorySpec, frame_index: int) -> RigidTransform:
    """Ground-truth pose (target frame -> camera frame) for one rotary frame.

    World frame: z up, camera on the -x axis at the working range looking at
    the origin with world-z up. The model centroid sits on the vertical stage
    axis, its long side tilted by axis_tilt_deg, spun by step_deg per frame.
    """
    R_w2c = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    t_w2c = np.array([0.0, 0.0, spec.range_mm])
    tilt = rotation_from_axis_angle(np.array([0.0, 1.0, 0.0]), spec.axis_tilt_deg)
    spin = rotation_from_axis_angle(np.array([0.0, 0.0, 1.0]), spec.step_deg * frame_index)
    R_m2w = spin @ tilt
    cam_from_world = RigidTransform(quat_from_matrix(R_w2c), t_w2c)
    world_from_model = RigidTransform(quat_from_matrix(R_m2w), np.zeros(3))
    return cam_from_world.compose(world_from_model)


def generate_sequence(spec: TrajectorySpec, model: WireframeModel, cam: CameraModel,
                      seed: int = 0, line_width: float = 1.0):
    """Render the rotary-stage sequence with exact ground truth.

    Per-frame RNG is seeded by (seed, frame_index) so noisy renders are
    reproducible frame by frame; noise_sigma = 0 renders are bit-identical
    across runs.
    """
    frames = []
    for i in range(spec.frame_count):
        pose = rotary_pose(spec, i)
        img = render_edges(model, pose, cam, line_width=line_width)
        if spec.noise_sigma > 0:
            rng = np.random.default_rng((seed, i))
            noisy = img.pixels + rng.normal(0.0, spec.noise_sigma, size=img.pixels.shape)
            img = GrayImage(np.clip(noisy, 0.0, 1.0))
        frames.append(DatasetFrame(image=img, ground_truth=pose, frame_index=i))
    return frames


def spherical_camera_pose(alpha_deg: float, beta_deg: float, rho_mm: float,
                          center: np.ndarray = None) -> RigidTransform:
    """Camera pose on the view sphere, looking at the model centroid.

    alpha is azimuth about the model z axis, beta the inclination from the
    model equator, rho the distance. The up direction is the model vertical
    projected perpendicular to the boresight; at the poles the azimuth
    tangent substitutes.
    """
    if center is None:
        center = np.zeros(3)
    a = math.radians(alpha_deg)
    b = math.radians(beta_deg)
    pos = center + rho_mm * np.array([math.cos(b) * math.cos(a), math.cos(b) * math.sin(a), math.sin(b)])
    boresight = (center - pos) / rho_mm
    up = np.array([0.0, 0.0, 1.0])
    u_perp = up - np.dot(up, boresight) * boresight
    n = np.linalg.norm(u_perp)
    if n < 1e-9:
        u_perp = np.array([-math.sin(a), math.cos(a), 0.0])
        n = 1.0
    y_c = -u_perp / n
    z_c = boresight
    x_c = np.cross(y_c, z_c)
    R = np.vstack([x_c, y_c, z_c])
    return RigidTransform(quat_from_matrix(R), -(R @ pos))


def default_camera() -> CameraModel:
    """1920x1080 sensor with the focal length of a 110 deg horizontal FOV."""
    fx = 960.0 / math.tan(math.radians(55.0))
    return CameraModel(fx=fx, fy=fx, cx=960.0, cy=540.0, width=1920, height=1080)
