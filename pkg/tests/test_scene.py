import math

import numpy as np
import pytest

from poseinit.errors import OutOfFrame
from poseinit.geometry import RigidTransform, rotation_error, project_points
from poseinit.imageops import GrayImage, RegionOfInterest, extract_silhouette
from poseinit.scene import (
    ANTENNA_LENGTH,
    DatasetFrame,
    TrajectorySpec,
    build_cubesat_2u,
    default_camera,
    generate_sequence,
    render_edges,
    render_silhouette,
    rotary_pose,
    spherical_camera_pose,
    visible_edges,
)
from poseinit.wireframe import KIND_ANTENNA, KIND_TETRAD, WireframeModel

CAM = default_camera()


def scanline_fill_count(polygon, width, height):
    """Independent filled-pixel-count oracle: even-odd test at pixel centers."""
    x, y = polygon[:, 0], polygon[:, 1]
    xj, yj = np.roll(x, 1), np.roll(y, 1)
    count = 0
    for row in range(height):
        cond = (y <= row) != (yj <= row)
        if not cond.any():
            continue
        xi = np.sort(x[cond] + (row - y[cond]) * (xj[cond] - x[cond]) / (yj[cond] - y[cond]))
        for a, b in zip(xi[0::2], xi[1::2]):
            count += max(0, int(math.floor(b)) - int(math.ceil(a)) + 1)
    return count


def convex_hull(points):
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                ax, ay = np.subtract(out[-1], out[-2])
                bx, by = np.subtract(p, out[-2])
                if ax * by - ay * bx > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1], dtype=float)


class TestBuildCubesat:
    def test_body_diagonal_and_extent(self):
        model = build_cubesat_2u()
        body = model.vertices[:8]
        diag = np.linalg.norm(body.max(axis=0) - body.min(axis=0))
        assert diag == pytest.approx(math.sqrt(100**2 + 100**2 + 227**2), abs=1e-9)
        assert model.extent() > diag  # antennas extend the envelope

    def test_edge_counts(self):
        assert len(build_cubesat_2u(with_antennas=False).edges) == 12
        assert len(build_cubesat_2u().edges) == 14

    def test_face_normals_point_outward(self):
        model = build_cubesat_2u(with_antennas=False)
        centroid = model.centroid()
        for f in model.faces:
            p = model.vertices[list(f)]
            n = np.cross(p[1] - p[0], p[2] - p[0])
            assert np.dot(n, p.mean(axis=0) - centroid) > 0

    def test_annotations_populated(self):
        model = build_cubesat_2u()
        for kind in ("PolygonalTetrad", "PolygonalTriad", "ParallelTriad",
                     "ParallelPair", "ProximityPair", "Antenna"):
            assert model.feature_annotations[kind]
        assert len(model.feature_annotations[KIND_TETRAD]) == 6
        assert len(model.feature_annotations[KIND_ANTENNA]) == 2

    def test_tetrad_chains_are_closed_cycles(self):
        model = build_cubesat_2u()
        for g in model.feature_annotations[KIND_TETRAD]:
            path, closed = model.annotation_vertex_chain(g)
            assert closed and len(path) == 4

    def test_json_round_trip(self, tmp_path):
        model = build_cubesat_2u()
        p = tmp_path / "model.json"
        model.save(p)
        loaded = WireframeModel.load(p)
        assert np.allclose(loaded.vertices, model.vertices)
        assert loaded.edges == model.edges
        assert loaded.faces == model.faces
        assert loaded.feature_annotations == model.feature_annotations
        assert loaded.content_hash() == model.content_hash()


class TestRenderSilhouette:
    def test_face_on_square_side(self):
        model = build_cubesat_2u(with_antennas=False)
        # long axis along the boresight: the visible face is the 100x100 square
        pose = RigidTransform.from_axis_angle([1, 0, 0], 90.0, [0.0, 0.0, 1630.0])
        img, _ = render_silhouette(model, pose, CAM)
        cols = np.nonzero(img.pixels.any(axis=0))[0]
        side_px = CAM.fx * 100.0 / (1630.0 - 50.0)  # near face depth
        assert abs((cols.max() - cols.min() + 1) - side_px) <= 1.5

    def test_behind_camera(self):
        model = build_cubesat_2u()
        pose = RigidTransform.from_axis_angle([0, 0, 1], 0.0, [0.0, 0.0, -2000.0])
        with pytest.raises(OutOfFrame):
            render_silhouette(model, pose, CAM)

    def test_pixel_count_matches_scanline_oracle(self):
        model = build_cubesat_2u(with_antennas=False)
        pose = RigidTransform.from_axis_angle([0.3, 1.0, 0.2], 35.0, [40.0, -30.0, 1630.0])
        img, _ = render_silhouette(model, pose, CAM)
        uv, z = project_points(model.vertices, pose, CAM, distort=False)
        assert np.all(z > 0)
        hull = convex_hull(uv)
        oracle = scanline_fill_count(hull, CAM.width, CAM.height)
        measured = int(img.pixels.sum())
        assert abs(measured - oracle) / oracle < 0.01

    def test_anchors_reproject_onto_their_pixels(self):
        model = build_cubesat_2u()
        pose = RigidTransform.from_axis_angle([0.2, 1.0, 0.15], 55.0, [0.0, 0.0, 1630.0])
        _, anchors = render_silhouette(model, pose, CAM)
        uv, z = project_points(anchors.points, pose, CAM, distort=False)
        assert np.all(z > 0)
        err = np.linalg.norm(uv - anchors.pixels, axis=1)
        assert err.max() < 0.5  # anchors are exact at pixel centers


class TestRenderEdges:
    def test_face_on_cube_shows_4_body_edges(self):
        model = build_cubesat_2u(with_antennas=False)
        pose = RigidTransform.from_axis_angle([1, 0, 0], 90.0, [0.0, 0.0, 1630.0])
        vis = visible_edges(model, pose)
        assert len(vis) == 4

    def test_generic_oblique_view_shows_9_body_edges(self):
        model = build_cubesat_2u(with_antennas=False)
        pose = RigidTransform.from_axis_angle([0.3, 1.0, 0.2], 35.0, [0.0, 0.0, 1630.0])
        vis = visible_edges(model, pose)
        assert len(vis) == 9

    def test_antenna_edges_always_visible(self):
        model = build_cubesat_2u()
        pose = RigidTransform.from_axis_angle([1, 0, 0], 90.0, [0.0, 0.0, 1630.0])
        vis = visible_edges(model, pose)
        assert {12, 13} <= set(vis)

    def test_out_of_frame(self):
        model = build_cubesat_2u()
        pose = RigidTransform.from_axis_angle([0, 0, 1], 0.0, [50000.0, 0.0, 1630.0])
        with pytest.raises(OutOfFrame):
            render_edges(model, pose, CAM)

    def test_levels(self):
        model = build_cubesat_2u()
        pose = rotary_pose(TrajectorySpec(), 30)
        img = render_edges(model, pose, CAM)
        assert img.pixels[0, 0] == pytest.approx(0.35)
        assert np.isclose(img.pixels, 0.75).sum() > 2000
        assert img.pixels.min() >= 0.05 - 1e-9


class TestTrajectory:
    def test_frame0_centroid_depth(self):
        model = build_cubesat_2u()
        pose = rotary_pose(TrajectorySpec(), 0)
        c = pose.apply(model.centroid())
        assert np.allclose(c, [0.0, 0.0, 1630.0], atol=1e-9)

    def test_centroid_depth_constant_all_frames(self):
        model = build_cubesat_2u()
        spec = TrajectorySpec(step_deg=7.3, frame_count=40)
        for i in range(0, 40, 7):
            c = rotary_pose(spec, i).apply(model.centroid())
            assert abs(np.linalg.norm(c) - 1630.0) < 1.0
            assert abs(c[2] - 1630.0) < 1.0

    def test_wrap_around_periodicity(self):
        spec = TrajectorySpec(step_deg=45.0, frame_count=20)
        a = rotary_pose(spec, 2)
        b = rotary_pose(spec, 2 + 8)  # 8 frames = 360 deg
        assert rotation_error(a.rotation_matrix(), b.rotation_matrix()) < 1e-9

    def test_elevation_stays_within_database_band(self):
        # the 30 deg tilted spin keeps the boresight within +/-30 deg of the
        # model equator, matching the view-sphere inclination coverage
        spec = TrajectorySpec(step_deg=10.0, frame_count=36)
        for i in range(36):
            pose = rotary_pose(spec, i)
            d = pose.inverse().apply(np.zeros(3))  # camera center in model frame
            beta = math.degrees(math.asin(d[2] / np.linalg.norm(d)))
            assert -30.0 - 1e-6 <= beta <= 30.0 + 1e-6

    def test_noiseless_renders_bit_reproducible(self):
        model = build_cubesat_2u()
        spec = TrajectorySpec(step_deg=30.0, frame_count=2)
        a = generate_sequence(spec, model, CAM, seed=0)
        b = generate_sequence(spec, model, CAM, seed=1)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.image.pixels, fb.image.pixels)

    def test_noise_is_seeded_per_frame(self):
        model = build_cubesat_2u()
        spec = TrajectorySpec(step_deg=30.0, frame_count=2, noise_sigma=0.02)
        a = generate_sequence(spec, model, CAM, seed=5)
        b = generate_sequence(spec, model, CAM, seed=5)
        c = generate_sequence(spec, model, CAM, seed=6)
        assert np.array_equal(a[1].image.pixels, b[1].image.pixels)
        assert not np.array_equal(a[1].image.pixels, c[1].image.pixels)

    def test_target_visible_every_frame(self):
        model = build_cubesat_2u()
        spec = TrajectorySpec(step_deg=24.0, frame_count=15)
        for frame in generate_sequence(spec, model, CAM):
            uv, z = project_points(model.vertices, frame.ground_truth, CAM, distort=False)
            on = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < CAM.width) & (uv[:, 1] >= 0) & (uv[:, 1] < CAM.height)
            assert on.any()

    def test_timing_metadata_consistency(self):
        # 0.84 deg/frame at 1.5 deg/s -> 0.56 s/frame, about 1.79 fps
        spec = TrajectorySpec()
        seconds_per_frame = spec.step_deg / 1.5
        assert seconds_per_frame == pytest.approx(0.56)
        assert 1.0 / seconds_per_frame == pytest.approx(1.7857, abs=1e-3)


class TestSilhouetteEdgeConsistency:
    def test_outer_boundaries_agree_within_a_pixel(self):
        model = build_cubesat_2u()
        pose = rotary_pose(TrajectorySpec(), 17)
        sil, anchors = render_silhouette(model, pose, CAM)
        edge_img = render_edges(model, pose, CAM)
        ys, xs = np.nonzero(sil.pixels > 0)
        roi = RegionOfInterest(
            x0=int(xs.min()) - 10, y0=int(ys.min()) - 10,
            x1=int(xs.max()) + 11, y1=int(ys.max()) + 11,
        )
        _, contour = extract_silhouette(edge_img, roi, threshold=0.5)
        ref = anchors.pixels.astype(float)
        d = np.sqrt(((contour.points[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        assert np.quantile(d, 0.95) <= 1.0
        assert d.max() <= 2.0


class TestSphericalPose:
    def test_camera_distance_and_aim(self):
        pose = spherical_camera_pose(40.0, 20.0, 1600.0)
        cam_center = pose.inverse().apply(np.zeros(3))
        assert np.linalg.norm(cam_center) == pytest.approx(1600.0)
        c = pose.apply(np.zeros(3))
        assert c[:2] == pytest.approx((0.0, 0.0), abs=1e-9)
        assert c[2] == pytest.approx(1600.0)

    def test_model_up_maps_to_image_up(self):
        pose = spherical_camera_pose(75.0, 10.0, 1600.0)
        top = pose.apply(np.array([0.0, 0.0, 100.0]))
        bottom = pose.apply(np.array([0.0, 0.0, -100.0]))
        assert top[1] < bottom[1]  # smaller v = higher in the image

    def test_pole_fallback_is_finite(self):
        pose = spherical_camera_pose(30.0, 90.0, 1600.0)
        assert np.all(np.isfinite(pose.rotation_matrix()))
