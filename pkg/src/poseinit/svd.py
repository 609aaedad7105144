"""Sharma-Ventura-D'Amico edge-feature pose initialization.

Detected line segments are organized into six high-level feature classes
(polygonal tetrads and triads, parallel triads and pairs, proximity pairs,
antennas); pairs of grouped features are matched against the wireframe's
annotated features to produce 2D-3D correspondence hypotheses, each scored by
RANSAC-P3P and Levenberg-Marquardt refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import InitializationFailed, NoConsensus, NoHypotheses, PoseInitError, TooFewCorrespondences
from .geometry import CameraModel, RigidTransform, undistort_points
from .imageops import (
    GrayImage,
    HoughParams,
    LineSegment,
    gaussian_blur3,
    hough_lines,
    sobel,
    weak_gradient_elimination,
)
from .imageops import BinaryImage
from .pnp import Correspondence2D3D, LmOptions, PnPResult, RansacParams, ransac_pnp, refine_lm
from .wireframe import (
    KIND_ANTENNA,
    KIND_PARALLEL_PAIR,
    KIND_PARALLEL_TRIAD,
    KIND_PROXIMITY_PAIR,
    KIND_TETRAD,
    KIND_TRIAD,
    WireframeModel,
)

# decreasing complexity, the fixed emission and pairing order
KIND_ORDER = (
    KIND_TETRAD,
    KIND_TRIAD,
    KIND_PARALLEL_TRIAD,
    KIND_PARALLEL_PAIR,
    KIND_PROXIMITY_PAIR,
    KIND_ANTENNA,
)
_KIND_RANK = {k: i for i, k in enumerate(KIND_ORDER)}
_KIND_SIZE = {
    KIND_TETRAD: 4,
    KIND_TRIAD: 3,
    KIND_PARALLEL_TRIAD: 3,
    KIND_PARALLEL_PAIR: 2,
    KIND_PROXIMITY_PAIR: 2,
    KIND_ANTENNA: 1,
}


@dataclass(frozen=True)
class SvdConfig:
    # 0.5 keeps the fainter ink-on-background gradients (antenna lines) that
    # an exposure-level percentile would drop
    wge_percentile: float = 0.5
    hough_stream1: HoughParams = HoughParams(threshold=25, min_length=15.0)
    hough_stream2: HoughParams = HoughParams(threshold=25, min_length=15.0)
    dup_angle_tol_deg: float = 5.0
    dup_endpoint_tol_px: float = 5.0
    dup_band_px: float = 2.5
    max_segments: int = 20
    parallel_tol_deg: float = 5.0
    junction_tol_px: float = 8.0
    junction_min_angle_deg: float = 10.0
    antenna_min_len_px: float = 30.0
    isolation_dist_px: float = 6.0
    max_hypotheses: int = 2000
    pair_work_cap: int = 30000
    ransac_iterations: int = 20
    inlier_threshold_px: float = 3.0
    evidence_tol_px: float = 4.5
    min_inliers: int = 4
    rng_seed: int = 0
    lm: LmOptions = LmOptions(max_iterations=30)


@dataclass(frozen=True)
class GroupedFeature:
    """A set of segments satisfying one feature class's geometric constraints.

    nodes are the correspondence-bearing points: ordered chain nodes for the
    polygonal kinds (junctions plus free ends, junction-only when closed),
    per-segment endpoint pairs for the parallel kinds, and the two endpoints
    for an antenna.
    """

    kind: str
    segment_indices: tuple
    segments: tuple
    nodes: np.ndarray  # (K, 2)
    closed: bool = False

    def __post_init__(self):
        if len(self.segments) != _KIND_SIZE[self.kind]:
            raise ValueError(f"{self.kind} needs {_KIND_SIZE[self.kind]} segments")
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))


@dataclass(frozen=True)
class PoseHypothesis:
    feature_pair: tuple  # two GroupedFeature
    model_assignment: tuple  # of (model vertex index, pixel (2,)) pairs
    result: PnPResult | None = None


def _angle_diff(a: float, b: float) -> float:
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def _point_segment_distance(p: np.ndarray, seg: LineSegment) -> float:
    d = seg.p1 - seg.p0
    L2 = float(d @ d)
    if L2 < 1e-12:
        return float(np.linalg.norm(p - seg.p0))
    t = float(np.clip((p - seg.p0) @ d / L2, 0.0, 1.0))
    return float(np.linalg.norm(p - (seg.p0 + t * d)))


def _line_intersection(a: LineSegment, b: LineSegment):
    da = a.p1 - a.p0
    db = b.p1 - b.p0
    M = np.array([[da[0], -db[0]], [da[1], -db[1]]])
    det = float(np.linalg.det(M))
    if abs(det) < 1e-6 * (np.linalg.norm(da) * np.linalg.norm(db) + 1e-12):
        return None
    ts = np.linalg.solve(M, b.p0 - a.p0)
    return a.p0 + ts[0] * da


def _duplicate(kept: LineSegment, cand: LineSegment, angle_tol: float,
               dist_tol: float, band: float) -> bool:
    """True when cand re-detects kept: same direction and either matching
    endpoints or containment in a narrow band around kept (sub-segments from
    the other stream). The band is tighter than the endpoint tolerance so
    genuinely distinct parallel structures a few pixels apart survive."""
    if _angle_diff(kept.angle_deg, cand.angle_deg) >= angle_tol:
        return False
    e_same = max(np.linalg.norm(kept.p0 - cand.p0), np.linalg.norm(kept.p1 - cand.p1))
    e_swap = max(np.linalg.norm(kept.p0 - cand.p1), np.linalg.norm(kept.p1 - cand.p0))
    if min(e_same, e_swap) < dist_tol:
        return True
    d = kept.p1 - kept.p0
    L = float(np.linalg.norm(d))
    if L < 1e-9:
        return False
    d = d / L
    n = np.array([-d[1], d[0]])
    for p in (cand.p0, cand.p1):
        if abs(float((p - kept.p0) @ n)) >= band:
            return False
        t = float((p - kept.p0) @ d)
        if not (-dist_tol <= t <= L + dist_tol):
            return False
    return True


def merge_streams(stream1, stream2, cfg: SvdConfig):
    """Union with duplicate suppression, keeping the higher-support segment."""
    tagged = [(s, 0, i) for i, s in enumerate(stream1)] + [(s, 1, i) for i, s in enumerate(stream2)]
    tagged.sort(key=lambda t: (-t[0].support, t[1], t[2]))
    kept = []
    for s, _, _ in tagged:
        if not any(
            _duplicate(k, s, cfg.dup_angle_tol_deg, cfg.dup_endpoint_tol_px, cfg.dup_band_px)
            for k in kept
        ):
            kept.append(s)
    return kept


def detect_lines(img: GrayImage, cam: CameraModel, cfg: SvdConfig = SvdConfig()):
    """Dual-stream line detection.

    Stream 1: Hough on the WGE-thresholded gradient of the noise-filtered
    image. Stream 2: Hough on the thresholded Sobel magnitude of the raw
    image restricted to the WGE ROI. Streams are merged with duplicate
    suppression; endpoints are undistorted when the camera has distortion.
    """
    blurred = GrayImage(np.clip(gaussian_blur3(img.pixels), 0.0, 1.0))
    grad1 = sobel(blurred)
    wge_mask, roi = weak_gradient_elimination(grad1, cfg.wge_percentile)
    stream1 = hough_lines(wge_mask, cfg.hough_stream1)

    grad2 = sobel(img)
    sub = grad2.magnitude[roi.y0 : roi.y1, roi.x0 : roi.x1]
    nonzero = sub[sub > 0]
    edges2 = np.zeros_like(grad2.magnitude, dtype=bool)
    if nonzero.size:
        thr = float(np.quantile(nonzero, cfg.wge_percentile))
        edges2[roi.y0 : roi.y1, roi.x0 : roi.x1] = (sub >= thr) & (sub > 0)
    stream2 = hough_lines(BinaryImage(edges2), cfg.hough_stream2)

    merged = merge_streams(stream1, stream2, cfg)
    merged = merged[: cfg.max_segments]  # merge order is support-descending
    if cam.has_distortion:
        out = []
        for s in merged:
            ends = undistort_points(np.vstack([s.p0, s.p1]), cam)
            out.append(LineSegment(p0=ends[0], p1=ends[1], support=s.support))
        merged = out
    return merged


def _junctions(segments, tol: float, min_angle: float):
    """Pairwise endpoint proximity records: (i, ei, j, ej, junction point).

    Near-parallel segments never form a junction (min_angle guards against
    duplicate detections of the same physical edge posing as corners). The
    junction point is the line intersection when well conditioned, else the
    endpoint midpoint.
    """
    out = []
    for i, j in combinations(range(len(segments)), 2):
        if _angle_diff(segments[i].angle_deg, segments[j].angle_deg) < min_angle:
            continue
        best = None
        for ei, pa in enumerate((segments[i].p0, segments[i].p1)):
            for ej, pb in enumerate((segments[j].p0, segments[j].p1)):
                d = float(np.linalg.norm(pa - pb))
                if d < tol and (best is None or d < best[0]):
                    best = (d, ei, ej, pa, pb)
        if best is None:
            continue
        d, ei, ej, pa, pb = best
        pt = _line_intersection(segments[i], segments[j])
        if pt is None or np.linalg.norm(pt - pa) > 3 * tol or np.linalg.norm(pt - pb) > 3 * tol:
            pt = 0.5 * (pa + pb)
        out.append((i, ei, j, ej, pt))
    return out


def _chain_nodes(segments, chain, links, closed):
    """Ordered node points of a polygonal chain.

    chain: segment indices in order; links: dict (a, b) -> (ea, point) giving
    the junction between consecutive segments and which endpoint of a it uses.
    """
    nodes = []
    if closed:
        for k in range(len(chain)):
            a, b = chain[k], chain[(k + 1) % len(chain)]
            nodes.append(links[(a, b)][1])
        return np.array(nodes)
    first = chain[0]
    e_used = links[(first, chain[1])][0]
    ends = (segments[first].p0, segments[first].p1)
    nodes.append(ends[1 - e_used])
    for k in range(len(chain) - 1):
        nodes.append(links[(chain[k], chain[k + 1])][1])
    last = chain[-1]
    e_used_last = links[(chain[-1], chain[-2])][0]
    ends = (segments[last].p0, segments[last].p1)
    nodes.append(ends[1 - e_used_last])
    return np.array(nodes)


def perceptual_grouping(segments, cfg: SvdConfig = SvdConfig()):
    """Organize segments into the six feature classes, most complex first.

    Polygonal chains are built on endpoint-proximity junctions (each chain
    enters a segment at one endpoint and leaves by the other); parallel
    groups use pairwise angular tolerance; antennas are long segments whose
    endpoints stay clear of every other segment.
    """
    segments = list(segments)
    juncs = _junctions(segments, cfg.junction_tol_px, cfg.junction_min_angle_deg)
    # adjacency[(i, ei)] = list of (j, ej, point)
    adjacency = {}
    links = {}
    for i, ei, j, ej, pt in juncs:
        adjacency.setdefault((i, ei), []).append((j, ej, pt))
        adjacency.setdefault((j, ej), []).append((i, ei, pt))
        links[(i, j)] = (ei, pt)
        links[(j, i)] = (ej, pt)

    chains = {3: [], 4: []}
    seen = {3: set(), 4: set()}

    def record(path, used_end):
        key = frozenset(path)
        if key in seen[len(path)]:
            return
        first, last = path[0], path[-1]
        closed = False
        if (last, first) in links:
            # closure must consume the free endpoints of both chain ends
            e_last = links[(last, first)][0]
            e_first = links[(first, last)][0]
            if e_last == 1 - used_end and e_first == 1 - links[(first, path[1])][0]:
                closed = True
        seen[len(path)].add(key)
        chains[len(path)].append((list(path), closed))

    def extend(path, used_end):
        # used_end: endpoint of path[-1] consumed by the junction into it;
        # the walk leaves via the other endpoint
        if len(path) in chains:
            record(path, used_end)
        if len(path) >= max(chains):
            return
        cur = path[-1]
        for (j, ej, _pt) in adjacency.get((cur, 1 - used_end), []):
            if j in path:
                continue
            extend(path + [j], ej)

    for start in range(len(segments)):
        for e_start in (0, 1):
            for (j, ej, _pt) in adjacency.get((start, e_start), []):
                extend([start, j], ej)

    groups = []
    for size, kind in ((4, KIND_TETRAD), (3, KIND_TRIAD)):
        emitted = set()
        for chain, closed in sorted(chains[size], key=lambda c: c[0]):
            key = frozenset(chain)
            if key in emitted:
                continue
            emitted.add(key)
            nodes = _chain_nodes(segments, chain, links, closed)
            groups.append(
                GroupedFeature(
                    kind=kind,
                    segment_indices=tuple(chain),
                    segments=tuple(segments[k] for k in chain),
                    nodes=nodes,
                    closed=closed,
                )
            )

    angles = [s.angle_deg for s in segments]
    for trio in combinations(range(len(segments)), 3):
        if all(
            _angle_diff(angles[a], angles[b]) < cfg.parallel_tol_deg
            for a, b in combinations(trio, 2)
        ):
            nodes = np.vstack([[segments[k].p0, segments[k].p1] for k in trio])
            groups.append(
                GroupedFeature(
                    kind=KIND_PARALLEL_TRIAD,
                    segment_indices=trio,
                    segments=tuple(segments[k] for k in trio),
                    nodes=nodes,
                )
            )
    for a, b in combinations(range(len(segments)), 2):
        if _angle_diff(angles[a], angles[b]) < cfg.parallel_tol_deg:
            nodes = np.vstack([[segments[k].p0, segments[k].p1] for k in (a, b)])
            groups.append(
                GroupedFeature(
                    kind=KIND_PARALLEL_PAIR,
                    segment_indices=(a, b),
                    segments=(segments[a], segments[b]),
                    nodes=nodes,
                )
            )
    for i, ei, j, ej, pt in juncs:
        ends_i = (segments[i].p0, segments[i].p1)
        ends_j = (segments[j].p0, segments[j].p1)
        nodes = np.array([ends_i[1 - ei], pt, ends_j[1 - ej]])
        groups.append(
            GroupedFeature(
                kind=KIND_PROXIMITY_PAIR,
                segment_indices=(i, j),
                segments=(segments[i], segments[j]),
                nodes=nodes,
            )
        )
    for k, s in enumerate(segments):
        if s.length <= cfg.antenna_min_len_px:
            continue
        isolated = True
        for m, other in enumerate(segments):
            if m == k:
                continue
            if (
                _point_segment_distance(s.p0, other) <= cfg.isolation_dist_px
                or _point_segment_distance(s.p1, other) <= cfg.isolation_dist_px
            ):
                isolated = False
                break
        if isolated:
            groups.append(
                GroupedFeature(
                    kind=KIND_ANTENNA,
                    segment_indices=(k,),
                    segments=(s,),
                    nodes=np.array([s.p0, s.p1]),
                )
            )
    groups.sort(key=lambda g: (_KIND_RANK[g.kind], g.segment_indices))
    return groups


def _model_alignments(model: WireframeModel, kind: str, edge_group, image_group: GroupedFeature):
    """All vertex sequences of a model annotation compatible with an image group.

    Yields lists of model vertex indices ordered to pair elementwise with the
    image group's nodes.
    """
    n_nodes = len(image_group.nodes)
    if kind in (KIND_TETRAD, KIND_TRIAD, KIND_PROXIMITY_PAIR):
        try:
            path, closed = model.annotation_vertex_chain(edge_group)
        except ValueError:
            return
        if kind == KIND_TETRAD:
            if not (image_group.closed and closed and len(path) == 4):
                return
            for shift in range(4):
                for direction in (1, -1):
                    yield [path[(shift + direction * k) % 4] for k in range(4)]
        else:
            if closed or len(path) != n_nodes:
                return
            yield list(path)
            yield list(reversed(path))
    elif kind in (KIND_PARALLEL_TRIAD, KIND_PARALLEL_PAIR):
        from itertools import permutations

        k = len(edge_group)
        if n_nodes != 2 * k:
            return
        for perm in permutations(edge_group):
            for flips in range(1 << k):
                seq = []
                for m, e in enumerate(perm):
                    a, b = model.edges[e]
                    seq.extend((b, a) if (flips >> m) & 1 else (a, b))
                yield seq
    elif kind == KIND_ANTENNA:
        a, b = model.edges[edge_group[0]]
        yield [a, b]
        yield [b, a]


def generate_hypotheses(groups, model: WireframeModel, cfg: SvdConfig = SvdConfig()):
    """Enumerate correspondence sets from pairs of image groups.

    Pairs are visited in complexity order; for each pair every compatible
    model annotation assignment and chain alignment is emitted until
    cfg.max_hypotheses candidates exist. Each candidate maps >= 4 distinct
    model vertices injectively to pixel points.
    """
    if len(groups) < 2:
        raise NoHypotheses(f"{len(groups)} feature group(s), need at least 2")
    candidates = []
    annotations = model.feature_annotations

    cache = []
    for g in groups:
        seqs = []
        for edge_group in annotations.get(g.kind, ()):
            seqs.extend(_model_alignments(model, g.kind, edge_group, g))
        cache.append(seqs)
    emitted = set()

    for gi, gj in combinations(range(len(groups)), 2):
        if len(candidates) >= cfg.max_hypotheses:
            break
        A, B = groups[gi], groups[gj]
        seqs_a, seqs_b = cache[gi], cache[gj]
        if not seqs_a or not seqs_b:
            continue
        if len(seqs_a) * len(seqs_b) > cfg.pair_work_cap:
            continue  # combinatorially heavy low-complexity pairings are skipped
        nodes = np.vstack([A.nodes, B.nodes])
        keys = [(round(float(px[0]), 6), round(float(px[1]), 6)) for px in nodes]
        for seq_a in seqs_a:
            if len(candidates) >= cfg.max_hypotheses:
                break
            for seq_b in seqs_b:
                if len(candidates) >= cfg.max_hypotheses:
                    break
                mapping = {}
                pixel_of = {}
                ok = True
                for vid, key in zip(seq_a + seq_b, keys):
                    if vid in mapping:
                        if mapping[vid] != key:
                            ok = False
                            break
                    elif key in pixel_of and pixel_of[key] != vid:
                        ok = False
                        break
                    else:
                        mapping[vid] = key
                        pixel_of[key] = vid
                if not ok or len(mapping) < 4:
                    continue
                signature = tuple(sorted(mapping.items()))
                if signature in emitted:
                    continue  # the same correspondence set via another pairing
                emitted.add(signature)
                pairs = tuple((vid, np.array(k)) for vid, k in signature)
                candidates.append(PoseHypothesis(feature_pair=(A, B), model_assignment=pairs))
    if not candidates:
        raise NoHypotheses("no kind-compatible model pairing produced >= 4 correspondences")
    return candidates


def _vertex_evidence_count(pose: RigidTransform, model: WireframeModel,
                           nodes: np.ndarray, cam: CameraModel, tol: float) -> int:
    """Wireframe vertices whose reprojection explains a distinct detected node.

    Greedy one-to-one matching between projected edge-endpoint vertices and
    the detected node cloud, counting pairs closer than tol. This is the
    pose's support against the whole detection, the quantity the pipeline
    maximizes: assignments that merely fit their own small point set (the
    symmetric-twin failure mode) cannot explain vertices their pairing never
    mentioned, antennas above all.
    """
    if len(nodes) == 0:
        return 0
    vids = sorted({i for e in model.edges for i in e})
    pts = model.vertices[vids]
    Y = pts @ pose.rotation_matrix().T + pose.translation
    z = Y[:, 2]
    ok = z > 1e-9
    if not ok.any():
        return 0
    u = cam.fx * Y[ok, 0] / z[ok] + cam.cx
    v = cam.fy * Y[ok, 1] / z[ok] + cam.cy
    d = np.sqrt((u[:, None] - nodes[None, :, 0]) ** 2 + (v[:, None] - nodes[None, :, 1]) ** 2)
    count = 0
    d = d.copy()
    while d.size:
        k = int(np.argmin(d))
        r, c = divmod(k, d.shape[1])
        if d[r, c] >= tol:
            break
        count += 1
        d = np.delete(np.delete(d, r, axis=0), c, axis=1)
    return count


def _edge_support_count(pose: RigidTransform, model: WireframeModel, seg_arrays,
                        cam: CameraModel, angle_tol: float, lateral_tol: float) -> int:
    """Visible model edges explained by some detected segment.

    A segment supports a projected edge when their directions agree, both
    segment endpoints lie within lateral_tol of the edge's image line, and
    the segment overlaps the edge's span. Robust to endpoint noise, which
    makes it the discriminating score between a true pose and a symmetry
    twin: a twin reprojects the antenna edges where nothing was detected.
    """
    p0s, p1s, angles = seg_arrays
    if len(p0s) == 0:
        return 0
    verts_cam = pose.apply(model.vertices)
    if np.any(verts_cam[:, 2] <= 1e-9):
        return 0
    uv = np.column_stack(
        [
            cam.fx * verts_cam[:, 0] / verts_cam[:, 2] + cam.cx,
            cam.fy * verts_cam[:, 1] / verts_cam[:, 2] + cam.cy,
        ]
    )
    supported = 0
    for e in model.visible_edge_indices(verts_cam):
        i, j = model.edges[e]
        a, b = uv[i], uv[j]
        d = b - a
        L = float(np.linalg.norm(d))
        if L < 1e-6:
            continue
        d = d / L
        n = np.array([-d[1], d[0]])
        edge_angle = math.degrees(math.atan2(d[1], d[0])) % 180.0
        dang = np.abs(angles - edge_angle) % 180.0
        ok = np.minimum(dang, 180.0 - dang) < angle_tol
        ok &= np.abs((p0s - a) @ n) < lateral_tol
        ok &= np.abs((p1s - a) @ n) < lateral_tol
        if not ok.any():
            continue
        t0 = (p0s[ok] - a) @ d
        t1 = (p1s[ok] - a) @ d
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        overlap = np.minimum(hi, L) - np.maximum(lo, 0.0)
        if np.any(overlap >= 0.4 * (hi - lo)):
            supported += 1
    return supported


def solve_svd(img: GrayImage, model: WireframeModel, cam: CameraModel,
              cfg: SvdConfig = SvdConfig()) -> PnPResult:
    """Full edge-feature pipeline: detect, group, hypothesize, solve.

    Every candidate runs RANSAC (seed offset by candidate index) plus LM
    refinement on its own correspondences; the winner maximizes its support
    against the whole detection (model edges explained by detected segments,
    then model vertices landing on detected feature points), with ties broken
    by refined RMS then candidate order. Returns a non-converged result when
    features exist but no candidate reaches the inlier quorum; raises
    InitializationFailed when the feature stages themselves fail.
    """
    try:
        segments = detect_lines(img, cam, cfg)
        groups = perceptual_grouping(segments, cfg)
        candidates = generate_hypotheses(groups, model, cfg)
    except PoseInitError as exc:
        raise InitializationFailed(str(exc)) from exc
    raw_nodes = np.vstack(
        [np.vstack([s.p0, s.p1]) for s in segments] + [g.nodes for g in groups]
    )
    # deduplicate: one-to-one evidence matching is meaningless over the
    # massively repeated endpoints the parallel groups re-list
    node_cloud = []
    for p in raw_nodes:
        if not any(np.hypot(p[0] - q[0], p[1] - q[1]) < 1.5 for q in node_cloud):
            node_cloud.append(p)
    node_cloud = np.array(node_cloud)
    seg_arrays = (
        np.array([s.p0 for s in segments]),
        np.array([s.p1 for s in segments]),
        np.array([s.angle_deg for s in segments]),
    )
    best_key = None
    best = None
    for idx, cand in enumerate(candidates):
        corr = [Correspondence2D3D(px, model.vertices[vid]) for vid, px in cand.model_assignment]
        params = RansacParams(
            max_iterations=cfg.ransac_iterations,
            inlier_threshold=cfg.inlier_threshold_px,
            min_inliers=cfg.min_inliers,
            rng_seed=cfg.rng_seed + idx,
        )
        try:
            res = ransac_pnp(corr, cam, params)
            inl = [corr[k] for k in res.inlier_indices]
            pose, rms = refine_lm(res.pose, inl, cam, cfg.lm)
        except PoseInitError:
            continue
        except ValueError:
            continue
        vertex_support = _vertex_evidence_count(pose, model, node_cloud, cam, cfg.evidence_tol_px)
        if vertex_support < cfg.min_inliers:
            continue
        edge_support = _edge_support_count(
            pose, model, seg_arrays, cam, cfg.dup_angle_tol_deg + 1.0, cfg.evidence_tol_px
        )
        key = (-edge_support, -vertex_support, rms, idx)
        if best_key is None or key < best_key:
            best_key = key
            best = PnPResult(
                pose=pose,
                inlier_indices=res.inlier_indices,
                rms_reprojection=rms,
                converged=True,
            )
    if best is None:
        return PnPResult(
            pose=RigidTransform.identity(),
            inlier_indices=np.zeros(0, dtype=int),
            rms_reprojection=float("inf"),
            converged=False,
        )
    return best
