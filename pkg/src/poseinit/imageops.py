"""Grayscale image container and shared low-level processing blocks.

Arrays are indexed [row, col] = [y, x]; point-like values (contours, segment
endpoints, centroids) are (x, y) in pixels with pixel centers at integer
coordinates. Intensities live in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import EmptyImage, EmptyShape, ImageTooSmall, NoSilhouette
from .geometry import CameraModel

_EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GrayImage:
    pixels: np.ndarray  # (H, W) float in [0, 1]

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=float)
        if arr.ndim != 2:
            raise ValueError("grayscale image must be 2-D")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def save_png(self, path) -> None:
        Image.fromarray(np.round(self.pixels * 255.0).astype(np.uint8), mode="L").save(path)

    @staticmethod
    def load_png(path) -> "GrayImage":
        arr = np.asarray(Image.open(path).convert("L"), dtype=float) / 255.0
        return GrayImage(arr)


@dataclass(frozen=True)
class BinaryImage:
    bits: np.ndarray  # (H, W) bool

    def __post_init__(self):
        arr = np.asarray(self.bits).astype(bool)
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray
    magnitude: np.ndarray


@dataclass(frozen=True)
class RegionOfInterest:
    """Inclusive-exclusive pixel bounds [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1) or self.x0 < 0 or self.y0 < 0:
            raise ValueError("degenerate region of interest")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True)
class LineSegment:
    p0: np.ndarray  # (x, y)
    p1: np.ndarray
    support: int

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(2))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float).reshape(2))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))

    @property
    def angle_deg(self) -> float:
        """Undirected line angle in [0, 180)."""
        d = self.p1 - self.p0
        return math.degrees(math.atan2(d[1], d[0])) % 180.0


@dataclass(frozen=True)
class Contour:
    """Ordered closed boundary, 8-connected, points as (x, y)."""

    points: np.ndarray  # (N, 2)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
            raise ValueError("contour needs at least 3 (x, y) points")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def perimeter(self) -> float:
        closed = np.vstack([self.points, self.points[:1]])
        return float(np.sum(np.linalg.norm(np.diff(closed, axis=0), axis=1)))


@dataclass(frozen=True)
class ImageMoments:
    m00: float
    centroid: tuple
    mu20: float
    mu02: float
    mu11: float


@dataclass(frozen=True)
class HoughParams:
    rho_res: float = 1.0
    theta_res_deg: float = 1.0
    threshold: int = 30
    min_length: float = 20.0
    max_gap: float = 5.0

    def __post_init__(self):
        if self.rho_res <= 0 or self.theta_res_deg <= 0 or self.threshold < 2:
            raise ValueError("invalid Hough parameters")


def gaussian_blur3(pixels: np.ndarray, sigma: float = 0.8) -> np.ndarray:
    """3x3 Gaussian smoothing with replicated-edge padding."""
    k = np.exp(-0.5 * (np.array([-1.0, 0.0, 1.0]) / sigma) ** 2)
    k /= k.sum()
    p = np.pad(pixels, 1, mode="edge")
    rows = k[0] * p[:-2, :] + k[1] * p[1:-1, :] + k[2] * p[2:, :]
    return k[0] * rows[:, :-2] + k[1] * rows[:, 1:-1] + k[2] * rows[:, 2:]


def sobel(img: GrayImage) -> GradientField:
    """3x3 Sobel gradients with replicated-edge padding."""
    if img.height < 3 or img.width < 3:
        raise ImageTooSmall(f"{img.width}x{img.height} < 3x3")
    p = np.pad(img.pixels, 1, mode="edge")
    # horizontal derivative: [-1 0 1; -2 0 2; -1 0 1]
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    )
    # vertical derivative: [-1 -2 -1; 0 0 0; 1 2 1]
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    )
    return GradientField(gx=gx, gy=gy, magnitude=np.hypot(gx, gy))


def weak_gradient_elimination(grad: GradientField, percentile: float = 0.85):
    """Keep the strongest gradients and box the largest surviving component.

    The threshold is the given quantile of the nonzero magnitudes; pixels at or
    above it survive. The ROI is the bounding box of the largest 8-connected
    surviving component, grown by a 10% margin (5% per side) and clipped.

    Returns (BinaryImage, RegionOfInterest).
    """
    if not 0.0 < percentile < 1.0:
        raise ValueError("percentile must lie in (0, 1)")
    mag = grad.magnitude
    nonzero = mag[mag > 0.0]
    if nonzero.size == 0:
        raise EmptyImage("all gradient magnitudes are zero")
    thr = float(np.quantile(nonzero, percentile))
    keep = (mag >= thr) & (mag > 0.0)
    if not keep.any():
        raise EmptyImage("no pixel above the gradient threshold")
    labels, n = ndimage.label(keep, structure=_EIGHT_CONN)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    best = int(np.argmax(counts))
    ys, xs = np.nonzero(labels == best)
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    mx = int(round(0.05 * (x1 - x0)))
    my = int(round(0.05 * (y1 - y0)))
    h, w = mag.shape
    roi = RegionOfInterest(
        x0=max(0, x0 - mx), y0=max(0, y0 - my),
        x1=min(w, x1 + mx), y1=min(h, y1 + my),
    )
    return BinaryImage(keep), roi


def _hough_accumulate(xs, ys, cos_t, sin_t, n_rho, rho_max, rho_res):
    acc = np.zeros((n_rho, len(cos_t)), dtype=np.int32)
    chunk = 200000 // max(1, len(cos_t)) + 1
    for i in range(0, len(xs), chunk):
        rho = np.outer(xs[i : i + chunk], cos_t) + np.outer(ys[i : i + chunk], sin_t)
        bins = np.floor((rho + rho_max) / rho_res + 0.5).astype(np.int64)
        np.clip(bins, 0, n_rho - 1, out=bins)
        flat = bins * len(cos_t) + np.arange(len(cos_t))[None, :]
        acc_flat = np.bincount(flat.ravel(), minlength=acc.size)
        acc += acc_flat.reshape(acc.shape).astype(np.int32)
    return acc


def _nms_peaks(acc: np.ndarray, threshold: int, rho_mirror: np.ndarray):
    """3x3 non-maximum suppression with a deterministic plateau rule.

    The accumulator is a Mobius band: (rho, theta + 180 deg) = (-rho, theta),
    so the theta axis is padded with rho-mirrored wrap columns before
    suppression. A cell survives if no neighbor is strictly greater and no
    earlier (row-major) neighbor is equal.
    """
    h, w = acc.shape
    ext = np.empty((h, w + 2), dtype=acc.dtype)
    ext[:, 1:-1] = acc
    ext[:, 0] = acc[rho_mirror, w - 1]
    ext[:, -1] = acc[rho_mirror, 0]
    strong = acc >= threshold
    keep = strong.copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            shifted = np.full_like(acc, -1)
            rs0, rs1 = max(0, dr), min(h, h + dr)
            src_r0 = rs0 - dr
            shifted[rs0:rs1, :] = ext[src_r0 : src_r0 + (rs1 - rs0), 1 + dc : 1 + dc + w]
            earlier = (dr < 0) or (dr == 0 and dc < 0)
            if earlier:
                keep &= shifted < acc
            else:
                keep &= shifted <= acc
    return np.argwhere(keep & strong)


def hough_lines(edges: BinaryImage, params: HoughParams = HoughParams()) -> list:
    """Standard (rho, theta) Hough transform emitting maximal line segments.

    Accumulator peaks above threshold are non-maximum suppressed in a 3x3
    neighborhood; supporting pixels of each peak are traced along the line and
    split at gaps larger than max_gap. Output is sorted by support descending
    and fully deterministic.
    """
    ys, xs = np.nonzero(edges.bits)
    if len(xs) == 0:
        return []
    thetas = np.arange(0.0, 180.0, params.theta_res_deg)
    cos_t = np.cos(np.radians(thetas))
    sin_t = np.sin(np.radians(thetas))
    rho_max = math.hypot(edges.width, edges.height)
    n_rho = int(2 * rho_max / params.rho_res) + 3
    acc = _hough_accumulate(xs, ys, cos_t, sin_t, n_rho, rho_max, params.rho_res)
    # bin index of -rho for each rho bin, used for the theta wraparound
    mirror = np.clip(
        np.round(2.0 * rho_max / params.rho_res - np.arange(n_rho)).astype(int), 0, n_rho - 1
    )
    peaks = _nms_peaks(acc, params.threshold, mirror)

    xf = xs.astype(float)
    yf = ys.astype(float)
    tol = 0.5 * params.rho_res + 0.5
    segments = []
    for rho_idx, t_idx in peaks:
        rho = rho_idx * params.rho_res - rho_max
        c, s = cos_t[t_idx], sin_t[t_idx]
        d = np.abs(xf * c + yf * s - rho)
        on = d <= tol
        if not on.any():
            continue
        t = -xf[on] * s + yf[on] * c  # position along the line direction
        order = np.argsort(t, kind="stable")
        px, py, tt = xf[on][order], yf[on][order], t[order]
        gaps = np.nonzero(np.diff(tt) > params.max_gap)[0]
        starts = np.concatenate([[0], gaps + 1])
        ends = np.concatenate([gaps, [len(tt) - 1]])
        for a, b in zip(starts, ends):
            length = tt[b] - tt[a]
            support = b - a + 1
            if length >= params.min_length and support >= params.threshold:
                segments.append(
                    (
                        -support,
                        int(rho_idx),
                        int(t_idx),
                        float(tt[a]),
                        LineSegment(p0=(px[a], py[a]), p1=(px[b], py[b]), support=int(support)),
                    )
                )
    segments.sort(key=lambda item: item[:4])
    return [item[4] for item in segments]


def dilate(img: BinaryImage, radius: int) -> BinaryImage:
    if radius < 1:
        raise ValueError("radius must be >= 1")
    se = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return BinaryImage(ndimage.binary_dilation(img.bits, structure=se))


def erode(img: BinaryImage, radius: int) -> BinaryImage:
    # border_value=1 treats out-of-image as foreground so that closing is
    # extensive (erode(dilate(X)) contains X) up to the border
    if radius < 1:
        raise ValueError("radius must be >= 1")
    se = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return BinaryImage(ndimage.binary_erosion(img.bits, structure=se, border_value=1))


def flood_fill_holes(img: BinaryImage) -> BinaryImage:
    """Fill background regions not 4-connected to the image border."""
    return BinaryImage(ndimage.binary_fill_holes(img.bits))


def clear_border_structures(img: BinaryImage) -> BinaryImage:
    """Remove 8-connected foreground components that touch the image border."""
    labels, n = ndimage.label(img.bits, structure=_EIGHT_CONN)
    if n == 0:
        return BinaryImage(img.bits.copy())
    border = np.unique(
        np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    )
    border = border[border > 0]
    keep = img.bits.copy()
    if border.size:
        keep &= ~np.isin(labels, border)
    return BinaryImage(keep)


_MOORE_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]  # clockwise from N, (dy, dx)


_DIR_INDEX = {off: i for i, off in enumerate(_MOORE_OFFSETS)}


def moore_trace(mask: np.ndarray) -> np.ndarray:
    """Moore-neighbor boundary trace with Jacob's stopping criterion.

    Returns ordered boundary pixel coordinates as (N, 2) (x, y). The start is
    the topmost-leftmost foreground pixel, entered from its west neighbor;
    tracing stops when that entry state recurs.
    """
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise EmptyShape("cannot trace an empty mask")
    order = np.lexsort((xs, ys))
    start = (int(ys[order[0]]), int(xs[order[0]]))
    start_back = (start[0], start[1] - 1)  # background by scan order
    h, w = mask.shape

    def at(p):
        y, x = p
        return 0 <= y < h and 0 <= x < w and mask[y, x]

    boundary = [start]
    cur, back = start, start_back
    seen_states = set()
    while True:
        # the transition is a function of (cur, back): a repeated state means
        # the loop is complete even when the start entry state never recurs
        # (happens on 1-px-thin appendages)
        if (cur, back) in seen_states:
            break
        seen_states.add((cur, back))
        d_back = _DIR_INDEX[(back[0] - cur[0], back[1] - cur[1])]
        nxt = None
        for k in range(1, 9):
            d = (d_back + k) % 8
            dy, dx = _MOORE_OFFSETS[d]
            cand = (cur[0] + dy, cur[1] + dx)
            if at(cand):
                prev = (d - 1) % 8
                dy, dx = _MOORE_OFFSETS[prev]
                nxt = (cand, (cur[0] + dy, cur[1] + dx))
                break
        if nxt is None:
            return np.array([(start[1], start[0])], dtype=float)  # isolated pixel
        cand, new_back = nxt
        if cand == start and new_back == start_back:
            break
        boundary.append(cand)
        cur, back = cand, new_back
    return np.array([(x, y) for y, x in boundary], dtype=float)


def _dedup_consecutive(points: np.ndarray) -> np.ndarray:
    if len(points) < 2:
        return points
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    pts = points[keep]
    while len(pts) > 1 and np.all(pts[0] == pts[-1]):
        pts = pts[:-1]
    return pts


def extract_silhouette(img: GrayImage, roi: RegionOfInterest, threshold: float = 0.5):
    """Threshold + morphology chain + largest component + boundary trace.

    Within the ROI the intensities are min-max normalized and thresholded,
    then cleaned by dilate(1), hole filling, border-structure suppression and
    erode(1). The largest 8-connected component (area >= 25 px) is traced into
    a closed contour in full-image coordinates.

    Returns (BinaryImage, Contour); the mask is full-image sized.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    if roi.x1 > img.width or roi.y1 > img.height:
        raise ValueError("ROI exceeds image bounds")
    sub = img.pixels[roi.y0 : roi.y1, roi.x0 : roi.x1]
    mn, mx = float(sub.min()), float(sub.max())
    if mx - mn < 1e-12:
        raise NoSilhouette("ROI has no contrast")
    fg = BinaryImage((sub - mn) / (mx - mn) >= threshold)
    fg = erode(clear_border_structures(flood_fill_holes(dilate(fg, 1))), 1)
    labels, n = ndimage.label(fg.bits, structure=_EIGHT_CONN)
    if n == 0:
        raise NoSilhouette("no foreground after morphology")
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    best = int(np.argmax(counts))
    if counts[best] < 25:
        raise NoSilhouette(f"largest component area {counts[best]} px < 25 px")
    comp = labels == best
    pts = moore_trace(comp)
    pts = _dedup_consecutive(pts)
    if len(pts) < 3:
        raise NoSilhouette("component too thin to form a contour")
    pts = pts + (roi.x0, roi.y0)
    full = np.zeros((img.height, img.width), dtype=bool)
    full[roi.y0 : roi.y1, roi.x0 : roi.x1] = comp
    return BinaryImage(full), Contour(pts)


def image_moments(shape: BinaryImage) -> ImageMoments:
    """Raw and central moments by direct summation over foreground pixels."""
    ys, xs = np.nonzero(shape.bits)
    if len(xs) == 0:
        raise EmptyShape("no foreground pixel")
    m00 = float(len(xs))
    cx = float(xs.mean())
    cy = float(ys.mean())
    dx = xs - cx
    dy = ys - cy
    return ImageMoments(
        m00=m00,
        centroid=(cx, cy),
        mu20=float(np.sum(dx * dx)),
        mu02=float(np.sum(dy * dy)),
        mu11=float(np.sum(dx * dy)),
    )


def estimate_range_from_roi(roi: RegionOfInterest, cam: CameraModel, model_extent: float) -> float:
    """Similar-triangles range prior: extent * fx / max(roi width, roi height)."""
    return model_extent * cam.fx / float(max(roi.width, roi.height))


def resample_contour(contour: Contour, n: int) -> np.ndarray:
    """Resample the closed contour polyline to n equal-arc-length points."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    closed = np.vstack([contour.points, contour.points[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        raise ValueError("contour has zero length")
    targets = np.arange(n) * total / n
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
    return closed[idx] + frac[:, None] * (closed[idx + 1] - closed[idx])


def fill_contour(contour: Contour, width: int, height: int) -> BinaryImage:
    """Rasterize the closed contour polygon (even-odd) plus its boundary pixels."""
    pts = contour.points
    mask = np.zeros((height, width), dtype=bool)
    x, y = pts[:, 0], pts[:, 1]
    xj, yj = np.roll(x, 1), np.roll(y, 1)
    for row in range(int(np.floor(y.min())), int(np.ceil(y.max())) + 1):
        if not 0 <= row < height:
            continue
        cond = (y <= row) != (yj <= row)
        if not cond.any():
            continue
        xi = x[cond] + (row - y[cond]) * (xj[cond] - x[cond]) / (yj[cond] - y[cond])
        xi.sort()
        for a, b in zip(xi[0::2], xi[1::2]):
            c0, c1 = int(math.ceil(a)), int(math.floor(b))
            if c1 >= c0:
                mask[row, max(0, c0) : min(width, c1 + 1)] = True
    # rasterize the boundary densely so sparse polygonal contours close up
    closed = np.vstack([pts, pts[:1]])
    for a, b in zip(closed[:-1], closed[1:]):
        n = int(np.ceil(np.abs(b - a).max())) + 1
        bx = np.round(np.linspace(a[0], b[0], n)).astype(int)
        by = np.round(np.linspace(a[1], b[1], n)).astype(int)
        ok = (bx >= 0) & (bx < width) & (by >= 0) & (by < height)
        mask[by[ok], bx[ok]] = True
    return BinaryImage(mask)
