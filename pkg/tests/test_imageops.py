import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poseinit.errors import EmptyImage, EmptyShape, ImageTooSmall, NoSilhouette
from poseinit.geometry import CameraModel
from poseinit.imageops import (
    BinaryImage,
    Contour,
    GrayImage,
    HoughParams,
    RegionOfInterest,
    clear_border_structures,
    dilate,
    erode,
    estimate_range_from_roi,
    extract_silhouette,
    fill_contour,
    flood_fill_holes,
    hough_lines,
    image_moments,
    resample_contour,
    sobel,
    weak_gradient_elimination,
)


def naive_sobel(pixels):
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    ky = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=float)
    p = np.pad(pixels, 1, mode="edge")
    h, w = pixels.shape
    gx = np.zeros_like(pixels)
    gy = np.zeros_like(pixels)
    for y in range(h):
        for x in range(w):
            win = p[y : y + 3, x : x + 3]
            gx[y, x] = np.sum(win * kx)
            gy[y, x] = np.sum(win * ky)
    return gx, gy


def rasterize_line(p0, p1, shape):
    mask = np.zeros(shape, dtype=bool)
    n = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 1
    xs = np.round(np.linspace(p0[0], p1[0], n)).astype(int)
    ys = np.round(np.linspace(p0[1], p1[1], n)).astype(int)
    mask[ys, xs] = True
    return mask


class TestSobel:
    def test_constant_image_zero_magnitude(self):
        g = sobel(GrayImage(np.full((20, 20), 0.5)))
        assert np.all(g.magnitude == 0.0)

    def test_vertical_step(self):
        img = np.zeros((16, 16))
        img[:, 8:] = 1.0
        g = sobel(GrayImage(img))
        interior = np.abs(g.gx[2:-2, :])
        peak_cols = {7, 8}
        assert set(np.argwhere(interior == interior.max())[:, 1].tolist()) <= peak_cols
        assert np.all(g.gy[2:-2, 2:-2] == 0.0)

    def test_matches_naive_convolution(self, rng):
        pixels = rng.uniform(size=(16, 16))
        g = sobel(GrayImage(pixels))
        gx, gy = naive_sobel(pixels)
        assert np.allclose(g.gx, gx, atol=1e-12)
        assert np.allclose(g.gy, gy, atol=1e-12)

    def test_linear_ramp_gradient_is_8x_slope(self):
        slope = 0.01
        img = np.tile(np.arange(32) * slope, (16, 1))
        g = sobel(GrayImage(img))
        assert np.allclose(g.gx[1:-1, 1:-1], 8.0 * slope, atol=1e-12)

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            sobel(GrayImage(np.zeros((2, 10))))


class TestWeakGradientElimination:
    def test_bright_square_roi(self):
        img = np.zeros((480, 640))
        img[200:240, 300:340] = 1.0
        g = sobel(GrayImage(img))
        mask, roi = weak_gradient_elimination(g, percentile=0.9)
        assert roi.x0 <= 300 and roi.x1 >= 340 and roi.y0 <= 200 and roi.y1 >= 240
        assert roi.width * roi.height <= (40 * 1.2) ** 2

    def test_all_zero_raises(self):
        g = sobel(GrayImage(np.zeros((32, 32))))
        with pytest.raises(EmptyImage):
            weak_gradient_elimination(g, percentile=0.9)

    def test_isolated_noise_does_not_steal_roi(self, rng):
        img = np.zeros((200, 200))
        img[80:120, 80:120] = 1.0
        img[10, 10] = 1.0  # lone bright pixel far away
        g = sobel(GrayImage(img))
        _, roi = weak_gradient_elimination(g, percentile=0.5)
        assert roi.x0 <= 80 and roi.x1 >= 120


class TestHough:
    def test_single_diagonal_line(self):
        mask = rasterize_line((10, 10), (100, 100), (128, 128))
        segs = hough_lines(BinaryImage(mask), HoughParams())
        assert len(segs) >= 1
        best = segs[0]
        assert abs(best.angle_deg - 135.0) <= 1.0 or abs(best.angle_deg - 45.0) <= 1.0
        ends = sorted([tuple(best.p0), tuple(best.p1)])
        assert np.linalg.norm(np.array(ends[0]) - (10, 10)) <= 2.0
        assert np.linalg.norm(np.array(ends[1]) - (100, 100)) <= 2.0

    def test_empty_image(self):
        assert hough_lines(BinaryImage(np.zeros((64, 64), dtype=bool))) == []

    def test_two_perpendicular_lines(self):
        # threshold sits above the theta +/- 2 deg side-lobe level (~44 votes
        # for an 80 px line at 1 px / 1 deg resolution)
        mask = rasterize_line((20, 30), (100, 30), (128, 128))
        mask |= rasterize_line((60, 10), (60, 90), (128, 128))
        segs = hough_lines(BinaryImage(mask), HoughParams(threshold=60))
        assert len(segs) == 2
        d = abs(segs[0].angle_deg - segs[1].angle_deg)
        assert abs(min(d, 180.0 - d) - 90.0) <= 2.0

    def test_deterministic(self, rng):
        mask = rng.uniform(size=(96, 96)) > 0.93
        mask |= rasterize_line((5, 80), (90, 20), (96, 96))
        a = hough_lines(BinaryImage(mask))
        b = hough_lines(BinaryImage(mask))
        assert len(a) == len(b)
        for s, t in zip(a, b):
            assert np.array_equal(s.p0, t.p0) and np.array_equal(s.p1, t.p1)
            assert s.support == t.support

    def test_segment_gap_splitting(self):
        mask = rasterize_line((10, 50), (60, 50), (128, 128))
        mask |= rasterize_line((80, 50), (120, 50), (128, 128))
        segs = hough_lines(BinaryImage(mask), HoughParams(threshold=40, min_length=15))
        horizontals = [s for s in segs if min(s.angle_deg, 180 - s.angle_deg) < 1.5]
        assert len(horizontals) == 2


class TestMorphology:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_closing_contains_original(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=(24, 24)) > 0.7
        img = BinaryImage(x)
        closed = erode(dilate(img, 1), 1)
        assert np.all(closed.bits[x])

    def test_ring_fill(self):
        img = np.zeros((32, 32), dtype=bool)
        img[8:24, 8:24] = True
        img[11:21, 11:21] = False
        filled = flood_fill_holes(BinaryImage(img))
        assert np.all(filled.bits[8:24, 8:24])

    def test_clear_border_structures(self):
        img = np.zeros((64, 64), dtype=bool)
        img[20:30, 0:10] = True  # touches left border
        img[30:40, 30:40] = True  # isolated central blob
        out = clear_border_structures(BinaryImage(img))
        assert not out.bits[20:30, 0:10].any()
        assert out.bits[30:40, 30:40].all()

    def test_dilate_erode_duality_under_complement(self, rng):
        x = np.zeros((40, 40), dtype=bool)
        x[10:30, 10:30] = rng.uniform(size=(20, 20)) > 0.5
        d = dilate(BinaryImage(x), 1).bits
        ec = ~erode(BinaryImage(~x), 1).bits
        # duality holds away from the border (complement introduces border structure)
        assert np.array_equal(d[5:-5, 5:-5], ec[5:-5, 5:-5])


class TestExtractSilhouette:
    def test_filled_square(self):
        img = np.zeros((128, 128))
        img[40:90, 40:90] = 1.0
        roi = RegionOfInterest(20, 20, 110, 110)
        mask, contour = extract_silhouette(GrayImage(img), roi, threshold=0.5)
        assert abs(contour.perimeter() - 4 * 49) / (4 * 49) < 0.02
        m = image_moments(mask)
        assert abs(m.m00 - 2500) / 2500 < 0.02

    def test_all_black_roi(self):
        img = np.zeros((64, 64))
        with pytest.raises(NoSilhouette):
            extract_silhouette(GrayImage(img), RegionOfInterest(0, 0, 64, 64))

    def test_contour_closed_and_8_connected(self, rng):
        img = np.zeros((100, 100))
        img[30:70, 20:80] = 1.0
        img[45:55, 40:60] = 0.7  # internal texture must not break the outline
        _, contour = extract_silhouette(GrayImage(img), RegionOfInterest(5, 5, 95, 95))
        pts = contour.points
        closed = np.vstack([pts, pts[:1]])
        steps = np.abs(np.diff(closed, axis=0))
        assert np.all(steps.max(axis=1) <= 1.0)
        assert np.all(steps.max(axis=1) > 0.0)

    def test_small_component_rejected(self):
        img = np.zeros((64, 64))
        img[30:33, 30:33] = 1.0
        with pytest.raises(NoSilhouette):
            extract_silhouette(GrayImage(img), RegionOfInterest(10, 10, 60, 60))


class TestMoments:
    def test_square(self):
        img = np.zeros((32, 32), dtype=bool)
        img[5:15, 5:15] = True
        m = image_moments(BinaryImage(img))
        assert m.m00 == 100
        assert m.centroid == pytest.approx((9.5, 9.5))

    def test_single_pixel(self):
        img = np.zeros((16, 16), dtype=bool)
        img[7, 3] = True
        m = image_moments(BinaryImage(img))
        assert m.m00 == 1
        assert m.centroid == pytest.approx((3.0, 7.0))
        assert (m.mu20, m.mu02, m.mu11) == (0.0, 0.0, 0.0)

    def test_empty_raises(self):
        with pytest.raises(EmptyShape):
            image_moments(BinaryImage(np.zeros((8, 8), dtype=bool)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.uniform(size=(20, 20)) > 0.6
        if not img.any():
            return
        m = image_moments(BinaryImage(img))
        m00 = mx = my = 0.0
        for y in range(20):
            for x in range(20):
                if img[y, x]:
                    m00 += 1
                    mx += x
                    my += y
        cx, cy = mx / m00, my / m00
        mu20 = sum((x - cx) ** 2 for y in range(20) for x in range(20) if img[y, x])
        assert m.m00 == m00
        assert m.centroid == pytest.approx((cx, cy))
        assert m.mu20 == pytest.approx(mu20)


class TestRangeFromRoi:
    def test_reference_geometry(self):
        cam = CameraModel(fx=672.2, fy=672.2, cx=960, cy=540)
        roi = RegionOfInterest(0, 0, 450, 430)
        r = estimate_range_from_roi(roi, cam, model_extent=1057.0)
        assert r == pytest.approx(1579.0, abs=1.0)
        assert 1500.0 <= r <= 1700.0

    def test_inverse_proportionality(self):
        cam = CameraModel(fx=700.0, fy=700.0, cx=960, cy=540)
        r1 = estimate_range_from_roi(RegionOfInterest(0, 0, 100, 80), cam, 500.0)
        r2 = estimate_range_from_roi(RegionOfInterest(0, 0, 200, 160), cam, 500.0)
        assert r1 == pytest.approx(2 * r2)

    def test_degenerate_single_pixel(self):
        cam = CameraModel(fx=700.0, fy=700.0, cx=960, cy=540)
        r = estimate_range_from_roi(RegionOfInterest(0, 0, 1, 1), cam, 500.0)
        assert r == pytest.approx(500.0 * 700.0)

    @pytest.mark.xfail(
        strict=True,
        reason="unreachable with the pinned benchmark geometry: a 1:1 2U model "
        "(<=391 mm extent) at 1630 mm under a 110 deg FOV camera (fx=672.2) "
        "subtends ~100-170 px, not the 300-600 px of the reference rig",
    )
    def test_reference_roi_size_at_full_range(self, bench_camera):
        from poseinit.scene import build_cubesat_2u, render_edges
        from poseinit.geometry import RigidTransform
        from poseinit.imageops import GrayImage as GI

        model = build_cubesat_2u()
        pose = RigidTransform.from_axis_angle([0.2, 1.0, 0.1], 60.0, [0, 0, 1630.0])
        img = render_edges(model, pose, bench_camera)
        from poseinit.imageops import gaussian_blur3
        g = sobel(GI(gaussian_blur3(img.pixels)))
        _, roi = weak_gradient_elimination(g, percentile=0.85)
        assert 300 <= max(roi.width, roi.height) <= 600


class TestContourUtilities:
    def test_resample_square_perimeter(self):
        pts = np.array([(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)])
        c = Contour(pts)
        samples = resample_contour(c, 8)
        assert samples.shape == (8, 2)
        assert np.allclose(samples[0], (0, 0))
        assert np.allclose(samples[2], (10, 0))

    def test_fill_contour_recovers_square(self):
        pts = np.array([(3.0, 3.0), (12.0, 3.0), (12.0, 12.0), (3.0, 12.0)])
        filled = fill_contour(Contour(pts), 20, 20)
        assert filled.bits[3:13, 3:13].all()
        assert filled.bits.sum() == 100
