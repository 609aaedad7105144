"""Silhouette-matching pose initialization.

An offline database of sphere-sampled synthetic views stores, per view, the
silhouette contour resampled to a fixed point count, shape-context
descriptors, and the 3D surface anchor generating each contour point. A query
silhouette is matched by a moment-ranked shortlist followed by greedy
shape-context point assignment; the matched anchors feed the PnP back-end.

Descriptors are computed on principal-axis-aligned contours so that camera
roll between query and database views does not disturb the chi-square costs;
the remaining 180-degree axis ambiguity is resolved by scoring both
orientations (a half-turn is an exact theta-bin roll of the histograms).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateContour,
    EmptyDatabase,
    InitializationFailed,
    NoConsensus,
    OutOfFrame,
    PoseInitError,
    RenderFailure,
)
from .geometry import CameraModel, RigidTransform, project_points, undistort_points
from .imageops import (
    BinaryImage,
    Contour,
    GrayImage,
    ImageMoments,
    _dedup_consecutive,
    estimate_range_from_roi,
    extract_silhouette,
    fill_contour,
    gaussian_blur3,
    image_moments,
    moore_trace,
    resample_contour,
    sobel,
    weak_gradient_elimination,
)
from .pnp import Correspondence2D3D, LmOptions, PnPResult, RansacParams, ransac_pnp, refine_lm
from .scene import render_silhouette, spherical_camera_pose
from .wireframe import WireframeModel

log = logging.getLogger(__name__)

DEFAULT_BINS = (5, 12)  # (radial, angular)
_RADIAL_SPAN = (0.125, 2.0)  # times the mean pairwise distance


@dataclass(frozen=True)
class ViewGrid:
    radii: tuple = (1500.0, 1600.0, 1700.0)
    inclinations_deg: tuple = (-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0)
    azimuth_step_deg: float = 10.0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        incl = tuple(float(b) for b in self.inclinations_deg)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "inclinations_deg", incl)
        if not radii or list(radii) != sorted(radii):
            raise ValueError("radii must be nonempty ascending")
        n = 360.0 / self.azimuth_step_deg
        if abs(n - round(n)) > 1e-9:
            raise ValueError("azimuth_step_deg must divide 360")

    @property
    def azimuths_deg(self) -> tuple:
        n = int(round(360.0 / self.azimuth_step_deg))
        return tuple(k * self.azimuth_step_deg for k in range(n))

    def cells(self):
        """(rho, beta, alpha) in deterministic order."""
        for rho in self.radii:
            for beta in self.inclinations_deg:
                for alpha in self.azimuths_deg:
                    yield rho, beta, alpha

    def cell_count(self) -> int:
        return len(self.radii) * len(self.inclinations_deg) * len(self.azimuths_deg)


@dataclass(frozen=True)
class SilhouetteEntry:
    alpha: float
    beta: float
    rho: float
    pose: RigidTransform  # target frame -> rendering camera frame
    contour: Contour
    moments: ImageMoments
    sampled_points: np.ndarray  # (N, 2)
    descriptors: np.ndarray  # (N, r_bins * theta_bins), principal-axis aligned
    anchors_3d: np.ndarray  # (N, 3) mm


@dataclass(frozen=True)
class SilhouetteMatch:
    entry_index: int
    similarity_cost: float
    point_correspondences: tuple  # of (query point (2,), entry sample index)


@dataclass(frozen=True)
class MatchConfig:
    n_samples: int = 100
    bins: tuple = DEFAULT_BINS
    shortlist: int = 40
    range_margin: float = 150.0
    range_estimate: float | None = None


@dataclass(frozen=True)
class SilhouetteConfig:
    match: MatchConfig = MatchConfig()
    wge_percentile: float = 0.5
    silhouette_threshold: float = 0.5
    ransac: RansacParams = RansacParams(max_iterations=500, inlier_threshold=8.0, min_inliers=10)
    lm: LmOptions = LmOptions()
    # nearest-contour realignment rounds after the descriptor-paired solve;
    # the wide gate keeps the azimuth-discriminating antenna anchors in play
    realign_rounds: int = 3
    realign_gate_px: float = 15.0


def shape_context(contour_points: np.ndarray, bins: tuple = DEFAULT_BINS) -> np.ndarray:
    """Log-polar histograms of each point's relative position to all others.

    Radial bins are log-spaced over [0.125, 2] x mean pairwise distance
    (scale normalized, out-of-range distances clamped into the end bins);
    angles are binned absolutely, so the descriptor is NOT rotation
    invariant. Each histogram is L1-normalized.
    """
    pts = np.asarray(contour_points, dtype=float)
    n = len(pts)
    if n < 2:
        raise ValueError("need at least 2 contour points")
    dx = pts[None, :, 0] - pts[:, None, 0]
    dy = pts[None, :, 1] - pts[:, None, 1]
    dist = np.hypot(dx, dy)
    off = ~np.eye(n, dtype=bool)
    mean_dist = float(dist[off].mean())
    if mean_dist < 1e-9:
        raise DegenerateContour("all contour points coincide")
    r_bins, t_bins = bins
    edges = mean_dist * np.geomspace(_RADIAL_SPAN[0], _RADIAL_SPAN[1], r_bins + 1)
    r_idx = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, r_bins - 1)
    t_idx = np.floor((np.arctan2(dy, dx) % (2.0 * math.pi)) / (2.0 * math.pi / t_bins)).astype(int)
    t_idx = np.clip(t_idx, 0, t_bins - 1)
    flat = r_idx * t_bins + t_idx
    desc = np.zeros((n, r_bins * t_bins))
    for i in range(n):
        counts = np.bincount(flat[i][off[i]], minlength=r_bins * t_bins)
        desc[i] = counts / float(n - 1)
    return desc


def principal_axis_angle(points: np.ndarray) -> float:
    """Orientation (radians) of the point set's principal second-moment axis."""
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    d = pts - c
    mu20 = float(np.sum(d[:, 0] ** 2))
    mu02 = float(np.sum(d[:, 1] ** 2))
    mu11 = float(np.sum(d[:, 0] * d[:, 1]))
    return 0.5 * math.atan2(2.0 * mu11, mu20 - mu02)


def _canonicalize(points: np.ndarray) -> np.ndarray:
    """Rotate the points about their centroid so the principal axis is horizontal."""
    theta = principal_axis_angle(points)
    c = points.mean(axis=0)
    ct, st = math.cos(-theta), math.sin(-theta)
    R = np.array([[ct, -st], [st, ct]])
    return (points - c) @ R.T + c


def _roll_theta(desc: np.ndarray, bins: tuple, half_turn: int) -> np.ndarray:
    """Descriptors of the same shape rotated by half_turn * 180 degrees."""
    r_bins, t_bins = bins
    d = desc.reshape(len(desc), r_bins, t_bins)
    return np.roll(d, (t_bins // 2) * half_turn, axis=2).reshape(desc.shape)


def moment_signature(m: ImageMoments) -> np.ndarray:
    """Rotation/scale-invariant signature: principal normalized central moments."""
    n20 = m.mu20 / m.m00**2
    n02 = m.mu02 / m.m00**2
    n11 = m.mu11 / m.m00**2
    mean = 0.5 * (n20 + n02)
    s = math.sqrt(max(0.25 * (n20 - n02) ** 2 + n11 * n11, 0.0))
    return np.array([mean + s, mean - s])


def chi2_cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise chi-square histogram distance, (len(a), len(b))."""
    num = (a[:, None, :] - b[None, :, :]) ** 2
    den = a[:, None, :] + b[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(den > 0, num / den, 0.0)
    return 0.5 * terms.sum(axis=2)


def greedy_assignment(cost: np.ndarray):
    """Globally greedy one-to-one pairing; returns (pairs, mean matched cost)."""
    c = cost.copy()
    n = min(c.shape)
    pairs = []
    total = 0.0
    for _ in range(n):
        k = int(np.argmin(c))
        i, j = divmod(k, c.shape[1])
        total += float(c[i, j])
        pairs.append((i, j))
        c[i, :] = np.inf
        c[:, j] = np.inf
    return pairs, total / n


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n <= 1:
        return mask
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == int(np.argmax(counts))


def generate_database(model: WireframeModel, grid: ViewGrid, cam: CameraModel,
                      n_samples: int = 100, bins: tuple = DEFAULT_BINS):
    """Render every grid cell and build its silhouette entry.

    Cameras sit on the view sphere aiming at the model centroid; each entry
    records the contour, moments, equal-arc-length sample points, aligned
    shape-context descriptors, and the 3D anchor behind each sample point.
    Cells that fail to render are skipped with a warning.
    """
    if n_samples < 20:
        raise ValueError("n_samples must be >= 20")
    center = model.centroid()
    entries = []
    for rho, beta, alpha in grid.cells():
        try:
            pose = spherical_camera_pose(alpha, beta, rho, center=center)
            img, anchors = render_silhouette(model, pose, cam)
            mask = _largest_component(img.pixels > 0.5)
            pts = _dedup_consecutive(moore_trace(mask))
            if len(pts) < 3:
                raise RenderFailure("degenerate silhouette boundary")
            contour = Contour(pts)
            moments = image_moments(BinaryImage(mask))
            sampled = resample_contour(contour, n_samples)
            desc = shape_context(_canonicalize(sampled), bins)
            d2 = (
                (sampled[:, None, 0] - anchors.pixels[None, :, 0]) ** 2
                + (sampled[:, None, 1] - anchors.pixels[None, :, 1]) ** 2
            )
            anchor_pts = anchors.points[np.argmin(d2, axis=1)]
        except (PoseInitError, OutOfFrame) as exc:
            log.warning("skipping view (rho=%s, beta=%s, alpha=%s): %s", rho, beta, alpha, exc)
            continue
        entries.append(
            SilhouetteEntry(
                alpha=alpha, beta=beta, rho=rho, pose=pose, contour=contour,
                moments=moments, sampled_points=sampled, descriptors=desc,
                anchors_3d=anchor_pts,
            )
        )
    return entries


def match_silhouette(query: Contour, db, cfg: MatchConfig = MatchConfig()) -> SilhouetteMatch:
    """Two-stage greedy search over the database.

    Stage 1 ranks entries by moment-signature distance, restricted to radius
    shells compatible with cfg.range_estimate (when given), and keeps the
    shortlist. Stage 2 runs greedy minimum-cost shape-context assignment per
    shortlisted entry in both principal-axis orientations and returns the
    lowest mean-cost entry, ties broken by entry index.
    """
    if not db:
        raise EmptyDatabase("no silhouette entries")
    n_samples = len(db[0].sampled_points)
    sampled = resample_contour(query, n_samples)
    width = int(np.ceil(query.points[:, 0].max())) + 2
    height = int(np.ceil(query.points[:, 1].max())) + 2
    q_moments = image_moments(fill_contour(query, width, height))
    q_sig = moment_signature(q_moments)

    allowed = list(range(len(db)))
    if cfg.range_estimate is not None:
        within = [k for k in allowed if abs(db[k].rho - cfg.range_estimate) <= cfg.range_margin]
        if not within:
            shells = sorted({e.rho for e in db}, key=lambda r: abs(r - cfg.range_estimate))
            within = [k for k in allowed if db[k].rho == shells[0]]
        allowed = within

    sig_dist = np.array([np.linalg.norm(moment_signature(db[k].moments) - q_sig) for k in allowed])
    order = np.argsort(sig_dist, kind="stable")
    shortlist = [allowed[i] for i in order[: cfg.shortlist]]

    q_desc = shape_context(_canonicalize(sampled), cfg.bins)
    q_desc_flipped = _roll_theta(q_desc, cfg.bins, 1)
    best = None
    for k in shortlist:
        entry = db[k]
        for desc in (q_desc, q_desc_flipped):
            pairs, cost = greedy_assignment(chi2_cost_matrix(desc, entry.descriptors))
            if best is None or (cost, k) < (best[0], best[1]):
                best = (cost, k, pairs)
    cost, k, pairs = best
    corr = tuple((sampled[i], j) for i, j in sorted(pairs))
    return SilhouetteMatch(entry_index=k, similarity_cost=cost, point_correspondences=corr)


def solve_silhouette(img: GrayImage, db, model: WireframeModel, cam: CameraModel,
                     cfg: SilhouetteConfig = SilhouetteConfig()) -> PnPResult:
    """Full silhouette pipeline: ROI, contour, database match, PnP.

    The descriptor-paired solve is followed by nearest-contour realignment
    rounds (anchor -> closest extracted boundary point) that remove the
    tangential slide a histogram pairing allows along straight outline
    stretches. The returned inliers index the matched entry's anchors.

    Upstream failures (no gradients, no silhouette, empty database) raise
    InitializationFailed; a matched frame whose correspondences reach no
    RANSAC consensus returns converged=False.
    """
    try:
        blurred = GrayImage(np.clip(gaussian_blur3(img.pixels), 0.0, 1.0))
        _, roi = weak_gradient_elimination(sobel(blurred), cfg.wge_percentile)
        _, contour = extract_silhouette(img, roi, cfg.silhouette_threshold)
        est = estimate_range_from_roi(roi, cam, model.extent())
        match_cfg = MatchConfig(
            n_samples=cfg.match.n_samples, bins=cfg.match.bins, shortlist=cfg.match.shortlist,
            range_margin=cfg.match.range_margin, range_estimate=est,
        )
        match = match_silhouette(contour, db, match_cfg)
    except PoseInitError as exc:
        raise InitializationFailed(str(exc)) from exc
    entry = db[match.entry_index]
    pixels = np.array([qp for qp, _ in match.point_correspondences])
    pixels = undistort_points(pixels, cam)
    corr = [
        Correspondence2D3D(pixels[i], entry.anchors_3d[j])
        for i, (_, j) in enumerate(match.point_correspondences)
    ]
    failed = PnPResult(
        pose=RigidTransform.identity(),
        inlier_indices=np.zeros(0, dtype=int),
        rms_reprojection=float("inf"),
        converged=False,
    )
    try:
        res = ransac_pnp(corr, cam, cfg.ransac)
        inliers = [corr[k] for k in res.inlier_indices]
        pose, rms = refine_lm(res.pose, inliers, cam, cfg.lm)
    except (NoConsensus, ValueError, PoseInitError):
        return failed
    dense = undistort_points(contour.points, cam)
    anchor_ids = np.arange(len(entry.anchors_3d))
    inlier_ids = res.inlier_indices
    for _ in range(cfg.realign_rounds):
        uv, z = project_points(entry.anchors_3d, pose, cam, distort=False)
        if np.any(z <= 0):
            break
        d = np.linalg.norm(uv[:, None, :] - dense[None, :, :], axis=2)
        nearest = np.argmin(d, axis=1)
        gate = d[anchor_ids, nearest] < cfg.realign_gate_px
        if gate.sum() < cfg.ransac.min_inliers:
            break
        corr2 = [
            Correspondence2D3D(dense[nearest[k]], entry.anchors_3d[k])
            for k in np.nonzero(gate)[0]
        ]
        try:
            pose, _ = refine_lm(pose, corr2, cam, cfg.lm)
        except (ValueError, PoseInitError):
            break
        # inlier accounting under the realigned pose
        uv2, z2 = project_points(entry.anchors_3d, pose, cam, distort=False)
        err = np.linalg.norm(uv2 - dense[np.argmin(
            np.linalg.norm(uv2[:, None, :] - dense[None, :, :], axis=2), axis=1)], axis=1)
        inlier_ids = np.nonzero((z2 > 0) & (err < cfg.ransac.inlier_threshold))[0]
        if len(inlier_ids) < cfg.ransac.min_inliers:
            return failed
        rms = float(np.sqrt(np.mean(err[inlier_ids] ** 2)))
    return PnPResult(
        pose=pose,
        inlier_indices=inlier_ids,
        rms_reprojection=rms,
        converged=True,
    )


def save_database(path, entries, grid: ViewGrid, cam: CameraModel,
                  model: WireframeModel, n_samples: int, bins: tuple = DEFAULT_BINS) -> None:
    """Write the database as an .npz container with a JSON header.

    The header records the grid, sampling parameters, and content hashes of
    the model and intrinsics; loaders refuse mismatched databases.
    """
    import hashlib

    header = {
        "format": "silhouette-db-v1",
        "n_samples": int(n_samples),
        "bins": list(bins),
        "grid": {
            "radii": list(grid.radii),
            "inclinations_deg": list(grid.inclinations_deg),
            "azimuth_step_deg": grid.azimuth_step_deg,
        },
        "model_hash": model.content_hash(),
        "intrinsics_hash": hashlib.sha256(cam.to_json().encode()).hexdigest(),
        "entry_count": len(entries),
    }
    offsets = np.zeros(len(entries) + 1, dtype=np.int64)
    for i, e in enumerate(entries):
        offsets[i + 1] = offsets[i] + len(e.contour.points)
    np.savez_compressed(
        path,
        header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
        alpha=np.array([e.alpha for e in entries]),
        beta=np.array([e.beta for e in entries]),
        rho=np.array([e.rho for e in entries]),
        pose_q=np.array([e.pose.quaternion for e in entries]),
        pose_t=np.array([e.pose.translation for e in entries]),
        contour_offsets=offsets,
        contour_points=np.vstack([e.contour.points for e in entries]),
        moments=np.array(
            [
                [e.moments.m00, e.moments.centroid[0], e.moments.centroid[1],
                 e.moments.mu20, e.moments.mu02, e.moments.mu11]
                for e in entries
            ]
        ),
        sampled=np.array([e.sampled_points for e in entries]),
        descriptors=np.array([e.descriptors for e in entries]),
        anchors=np.array([e.anchors_3d for e in entries]),
    )


def load_database(path, expect_model_hash: str | None = None,
                  expect_intrinsics_hash: str | None = None):
    """Load a database written by save_database.

    Returns (entries, header). Raises DatabaseMismatch when expected hashes
    are provided and differ from the header's.
    """
    from .errors import DatabaseMismatch

    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        if expect_model_hash is not None and header["model_hash"] != expect_model_hash:
            raise DatabaseMismatch("database was built against a different model")
        if expect_intrinsics_hash is not None and header["intrinsics_hash"] != expect_intrinsics_hash:
            raise DatabaseMismatch("database was built against different intrinsics")
        offsets = z["contour_offsets"]
        entries = []
        for i in range(header["entry_count"]):
            m = z["moments"][i]
            entries.append(
                SilhouetteEntry(
                    alpha=float(z["alpha"][i]),
                    beta=float(z["beta"][i]),
                    rho=float(z["rho"][i]),
                    pose=RigidTransform(z["pose_q"][i], z["pose_t"][i]),
                    contour=Contour(z["contour_points"][offsets[i] : offsets[i + 1]]),
                    moments=ImageMoments(
                        m00=float(m[0]), centroid=(float(m[1]), float(m[2])),
                        mu20=float(m[3]), mu02=float(m[4]), mu11=float(m[5]),
                    ),
                    sampled_points=z["sampled"][i],
                    descriptors=z["descriptors"][i],
                    anchors_3d=z["anchors"][i],
                )
            )
    return entries, header
