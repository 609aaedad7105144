"""Pose back-end: P3P minimal solver, RANSAC scheme, Levenberg-Marquardt refinement.

Correspondences carry undistorted pixels, so all reprojection here is pure
pinhole (no distortion terms). Poses map target-frame points (mm) into the
camera frame.

P3P follows the classical depth-ratio formulation: with depths s1, s2, s3 to
the three model points, the law of cosines gives three quadrics; substituting
u = s2/s1, v = s3/s1 eliminates s1 and then u, leaving a quartic in v whose
real roots are back-substituted into depths. Each depth triple yields camera
frame points aligned to the model points by a closed-form rigid fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConfiguration,
    DivergedBehindCamera,
    NoConsensus,
    NoRealSolution,
    TooFewCorrespondences,
)
from .geometry import CameraModel, RigidTransform, quat_from_matrix

_MIN_TRIANGLE_AREA = 1e-6  # mm^2
_P3P_REPROJECT_TOL = 1e-6  # px, self-consistency gate on every returned pose


@dataclass(frozen=True)
class Correspondence2D3D:
    """An undistorted pixel paired with a target-frame 3D point (mm)."""

    pixel: np.ndarray  # (2,)
    model_point: np.ndarray  # (3,)

    def __post_init__(self):
        px = np.asarray(self.pixel, dtype=float).reshape(2)
        mp = np.asarray(self.model_point, dtype=float).reshape(3)
        if not (np.all(np.isfinite(px)) and np.all(np.isfinite(mp))):
            raise ValueError("correspondence must be finite")
        object.__setattr__(self, "pixel", px)
        object.__setattr__(self, "model_point", mp)


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 500
    inlier_threshold: float = 3.0  # px
    min_inliers: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1 or self.inlier_threshold <= 0 or self.min_inliers < 4:
            raise ValueError("invalid RANSAC parameters")


@dataclass(frozen=True)
class LmOptions:
    max_iterations: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0


@dataclass(frozen=True)
class PnPResult:
    pose: RigidTransform
    inlier_indices: np.ndarray
    rms_reprojection: float
    converged: bool


def _unpack(correspondences):
    pixels = np.array([c.pixel for c in correspondences], dtype=float)
    points = np.array([c.model_point for c in correspondences], dtype=float)
    return pixels, points


def _bearings(pixels: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Unit rays through undistorted pixels, (N, 3)."""
    f = np.column_stack(
        [
            (pixels[:, 0] - cam.cx) / cam.fx,
            (pixels[:, 1] - cam.cy) / cam.fy,
            np.ones(len(pixels)),
        ]
    )
    return f / np.linalg.norm(f, axis=1, keepdims=True)


def _pinhole(points_cam: np.ndarray, cam: CameraModel) -> np.ndarray:
    z = points_cam[..., 2]
    return np.stack(
        [
            cam.fx * points_cam[..., 0] / z + cam.cx,
            cam.fy * points_cam[..., 1] / z + cam.cy,
        ],
        axis=-1,
    )


def _quartic_coeffs(cos_a, cos_b, cos_g, A, C):
    """Coefficients (low to high) of the depth-ratio quartic in v = s3/s1.

    With N(v) = n2 v^2 + n1 v + n0 (numerator of u), D(v) = d1 v + d0
    (denominator, d0 = 2 cos_g) and Q(v) the residual quadric, the quartic is
    N^2 + Q D^2 - d0 N D. All inputs broadcast elementwise.
    """
    n2 = A - C - 1.0
    n1 = 2.0 * (C - A) * cos_b
    n0 = A - C + 1.0
    d1 = -2.0 * cos_a
    d0 = 2.0 * cos_g
    q2 = -C
    q1 = 2.0 * C * cos_b
    q0 = 1.0 - C
    d00 = d0 * d0
    d01 = 2.0 * d0 * d1
    d11 = d1 * d1
    c0 = n0 * n0 + q0 * d00 - d00 * n0
    c1 = 2.0 * n0 * n1 + q0 * d01 + q1 * d00 - d0 * (n0 * d1 + n1 * d0)
    c2 = n1 * n1 + 2.0 * n0 * n2 + q0 * d11 + q1 * d01 + q2 * d00 - d0 * (n1 * d1 + n2 * d0)
    c3 = 2.0 * n1 * n2 + q1 * d11 + q2 * d01 - d0 * n2 * d1
    c4 = n2 * n2 + q2 * d11
    return np.stack([c0, c1, c2, c3, c4], axis=-1), (n2, n1, n0, d1, d0)


def _quartic_roots_batch(coeffs: np.ndarray) -> np.ndarray:
    """Real roots of a batch of quartics, (B, 5) low-to-high -> (B, 4) with NaN padding."""
    B = coeffs.shape[0]
    out = np.full((B, 4), np.nan)
    lead = np.abs(coeffs[:, 4])
    scale = np.max(np.abs(coeffs), axis=1)
    ok = lead > 1e-12 * np.maximum(scale, 1e-300)
    if ok.any():
        monic = coeffs[ok] / coeffs[ok, 4:5]
        comp = np.zeros((int(ok.sum()), 4, 4))
        comp[:, 1, 0] = comp[:, 2, 1] = comp[:, 3, 2] = 1.0
        comp[:, :, 3] = -monic[:, :4]
        roots = np.linalg.eigvals(comp)
        out[ok] = roots.real
        # discard roots with a large imaginary part relative to magnitude
        bad = np.abs(roots.imag) > 1e-4 * (1.0 + np.abs(roots.real))
        tmp = out[ok]
        tmp[bad] = np.nan
        out[ok] = tmp
    # degenerate leading coefficient: lower-degree fallback per sample
    for i in np.nonzero(~ok)[0]:
        c = np.trim_zeros(coeffs[i][::-1], "f")
        if len(c) < 2:
            continue
        r = np.roots(c)
        r = r[np.abs(r.imag) < 1e-8 * (1.0 + np.abs(r.real))].real
        out[i, : min(4, len(r))] = r[:4]
    return out


def _polish_roots(coeffs: np.ndarray, roots: np.ndarray, iters: int = 8) -> np.ndarray:
    """Vectorized Newton refinement of real quartic roots; NaN passes through."""
    c0, c1, c2, c3, c4 = (coeffs[:, k : k + 1] for k in range(5))
    v = roots.copy()
    for _ in range(iters):
        p = (((c4 * v + c3) * v + c2) * v + c1) * v + c0
        dp = ((4.0 * c4 * v + 3.0 * c3) * v + 2.0 * c2) * v + c1
        with np.errstate(divide="ignore", invalid="ignore"):
            step = p / dp
        step = np.where(np.isfinite(step), step, 0.0)
        v = v - step
    return v


def _polish_depths(depths: np.ndarray, cos_abg: np.ndarray, dists: np.ndarray, iters: int = 5):
    """Newton refinement of depth triples on the law-of-cosines system.

    depths: (K, 3) = (s1, s2, s3); cos_abg: (K, 3) = (cos_a, cos_b, cos_g);
    dists: (K, 3) = (a, b, c). Back-substitution through the quartic loses
    precision when roots cluster; a few Newton steps restore it.
    """
    s = depths.copy()
    ca, cb, cg = cos_abg[:, 0], cos_abg[:, 1], cos_abg[:, 2]
    a2, b2, c2 = dists[:, 0] ** 2, dists[:, 1] ** 2, dists[:, 2] ** 2
    K = len(s)
    J = np.zeros((K, 3, 3))
    for _ in range(iters):
        s1, s2, s3 = s[:, 0], s[:, 1], s[:, 2]
        F = np.stack(
            [
                s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * ca - a2,
                s1 * s1 + s3 * s3 - 2.0 * s1 * s3 * cb - b2,
                s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cg - c2,
            ],
            axis=1,
        )
        J[:, 0, 1] = 2.0 * (s2 - s3 * ca)
        J[:, 0, 2] = 2.0 * (s3 - s2 * ca)
        J[:, 1, 0] = 2.0 * (s1 - s3 * cb)
        J[:, 1, 2] = 2.0 * (s3 - s1 * cb)
        J[:, 2, 0] = 2.0 * (s1 - s2 * cg)
        J[:, 2, 1] = 2.0 * (s2 - s1 * cg)
        det = np.linalg.det(J)
        solvable = np.abs(det) > 1e-12
        if not solvable.any():
            break
        step = np.zeros_like(s)
        step[solvable] = np.linalg.solve(J[solvable], F[solvable][..., None])[..., 0]
        s = s - step
    return s


def _fit_rigid_batch(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation+translation with dst ~= R src + t, batched (K, N, 3)."""
    cs = src.mean(axis=1, keepdims=True)
    cd = dst.mean(axis=1, keepdims=True)
    H = np.einsum("kni,knj->kij", src - cs, dst - cd)
    U, _, Vt = np.linalg.svd(H)
    V = Vt.transpose(0, 2, 1)
    Ut = U.transpose(0, 2, 1)
    det = np.linalg.det(V @ Ut)
    D = np.ones((len(src), 3))
    D[:, 2] = det
    R = V @ (D[:, :, None] * Ut)
    t = cd[:, 0, :] - np.einsum("kij,kj->ki", R, cs[:, 0, :])
    return R, t


def _p3p_candidates(points3: np.ndarray, bearings3: np.ndarray):
    """All admissible (R, t) for a batch of 3-point problems.

    points3, bearings3: (B, 3, 3). Returns (R (K,3,3), t (K,3), batch_index (K,)).
    Degenerate samples simply contribute no candidates.
    """
    P1, P2, P3 = points3[:, 0], points3[:, 1], points3[:, 2]
    f1, f2, f3 = bearings3[:, 0], bearings3[:, 1], bearings3[:, 2]
    a = np.linalg.norm(P2 - P3, axis=1)
    b = np.linalg.norm(P1 - P3, axis=1)
    c = np.linalg.norm(P1 - P2, axis=1)
    area = 0.5 * np.linalg.norm(np.cross(P2 - P1, P3 - P1), axis=1)
    cos_a = np.einsum("ij,ij->i", f2, f3)
    cos_b = np.einsum("ij,ij->i", f1, f3)
    cos_g = np.einsum("ij,ij->i", f1, f2)
    usable = (area > _MIN_TRIANGLE_AREA) & (b > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        A = (a / b) ** 2
        C = (c / b) ** 2
    A = np.where(usable, A, 0.0)
    C = np.where(usable, C, 0.0)
    coeffs, (n2, n1, n0, d1, d0) = _quartic_coeffs(cos_a, cos_b, cos_g, A, C)
    roots = _quartic_roots_batch(coeffs)
    v = _polish_roots(coeffs, roots)

    # back-substitute depths: s1 = b / sqrt(1 + v^2 - 2 v cos_b), s2 = u s1, s3 = v s1
    Nv = (n2[:, None] * v + n1[:, None]) * v + n0[:, None]
    Dv = d1[:, None] * v + d0[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = Nv / Dv
        rad = 1.0 + v * v - 2.0 * v * cos_b[:, None]
        s1 = b[:, None] / np.sqrt(rad)
    s2 = u * s1
    s3 = v * s1
    valid = (
        usable[:, None]
        & np.isfinite(v)
        & (np.abs(Dv) > 1e-12)
        & (rad > 1e-12)
        & (s1 > 0)
        & (s2 > 0)
        & (s3 > 0)
    )
    bi, ri = np.nonzero(valid)
    if len(bi) == 0:
        return np.zeros((0, 3, 3)), np.zeros((0, 3)), bi
    depths = np.stack([s1[bi, ri], s2[bi, ri], s3[bi, ri]], axis=1)  # (K, 3)
    depths = _polish_depths(
        depths,
        np.stack([cos_a[bi], cos_b[bi], cos_g[bi]], axis=1),
        np.stack([a[bi], b[bi], c[bi]], axis=1),
    )
    keep = np.all(depths > 0, axis=1) & np.all(np.isfinite(depths), axis=1)
    bi, depths = bi[keep], depths[keep]
    if len(bi) == 0:
        return np.zeros((0, 3, 3)), np.zeros((0, 3)), bi
    Y = depths[:, :, None] * bearings3[bi]  # camera-frame points
    R, t = _fit_rigid_batch(points3[bi], Y)
    return R, t, bi


def p3p(correspondences, cam: CameraModel):
    """Minimal 3-point pose solver; returns every admissible pose.

    Raises DegenerateConfiguration for (near-)collinear model points and
    NoRealSolution when no root survives. Every returned pose reprojects the
    three input points within 1e-6 px.
    """
    if len(correspondences) != 3:
        raise TooFewCorrespondences("p3p needs exactly 3 correspondences")
    pixels, points = _unpack(correspondences)
    area = 0.5 * np.linalg.norm(np.cross(points[1] - points[0], points[2] - points[0]))
    if area <= _MIN_TRIANGLE_AREA:
        raise DegenerateConfiguration(f"triangle area {area:.3g} mm^2")
    bearings = _bearings(pixels, cam)
    R, t, _ = _p3p_candidates(points[None], bearings[None])
    poses = []
    for k in range(len(R)):
        Y = points @ R[k].T + t[k]
        if np.any(Y[:, 2] <= 1e-9):
            continue
        err = np.linalg.norm(_pinhole(Y, cam) - pixels, axis=1).max()
        if err >= _P3P_REPROJECT_TOL:
            continue
        pose = RigidTransform(quat_from_matrix(R[k]), t[k])
        if any(
            np.abs(np.dot(pose.quaternion, p.quaternion)) > 1.0 - 1e-12
            and np.linalg.norm(pose.translation - p.translation) < 1e-7
            for p in poses
        ):
            continue
        poses.append(pose)
    if not poses:
        raise NoRealSolution("no admissible P3P solution")
    return poses


def _score_poses(R, t, points, pixels, cam):
    """Reprojection errors for a batch of poses: (K, N) pixel distances."""
    Y = np.einsum("kij,nj->kni", R, points) + t[:, None, :]
    z = Y[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * Y[:, :, 0] / z + cam.cx
        v = cam.fy * Y[:, :, 1] / z + cam.cy
    err = np.hypot(u - pixels[None, :, 0], v - pixels[None, :, 1])
    return np.where(z > 1e-9, err, np.inf)


def ransac_pnp(correspondences, cam: CameraModel, params: RansacParams = RansacParams()) -> PnPResult:
    """P3P hypotheses from random minimal samples, scored by inlier count.

    Fixed iteration count, no early exit; bit-identical output for equal
    rng_seed. Best hypothesis maximizes the inlier count with ties broken by
    lower inlier RMS, then by earlier candidate order.
    """
    n = len(correspondences)
    if n < 4:
        raise TooFewCorrespondences(f"{n} < 4 correspondences")
    pixels, points = _unpack(correspondences)
    bearings = _bearings(pixels, cam)
    rng = np.random.default_rng(params.rng_seed)
    samples = np.empty((params.max_iterations, 3), dtype=np.int64)
    for i in range(params.max_iterations):
        samples[i] = rng.choice(n, size=3, replace=False)
    R, t, batch_idx = _p3p_candidates(points[samples], bearings[samples])
    if len(R) == 0:
        raise NoConsensus("no P3P hypothesis could be built")
    errs = _score_poses(R, t, points, pixels, cam)
    # self-consistency gate: a hypothesis must reproject its own minimal sample
    own = np.take_along_axis(errs, samples[batch_idx], axis=1)
    good = own.max(axis=1) < _P3P_REPROJECT_TOL
    if not good.any():
        raise NoConsensus("all hypotheses failed the minimal-sample gate")
    R, t, errs = R[good], t[good], errs[good]
    inlier_mask = errs < params.inlier_threshold
    counts = inlier_mask.sum(axis=1)
    sq = np.where(inlier_mask, errs * errs, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rms = np.sqrt(sq / np.maximum(counts, 1))
    rms = np.where(counts > 0, rms, np.inf)
    order = np.lexsort((np.arange(len(counts)), rms, -counts))
    best = order[0]
    if counts[best] < params.min_inliers:
        raise NoConsensus(f"best hypothesis has {counts[best]} inliers < {params.min_inliers}")
    return PnPResult(
        pose=RigidTransform(quat_from_matrix(R[best]), t[best]),
        inlier_indices=np.nonzero(inlier_mask[best])[0],
        rms_reprojection=float(rms[best]),
        converged=True,
    )


def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def _rodrigues(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    K = _skew(w)
    if theta < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / theta
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def _lm_residual_jacobian(R, t, points, pixels, cam):
    """Stacked residuals r = obs - pi(RX + t) and analytic J = dr/d[omega, dt].

    Rotation increments are applied on the left, R <- exp([omega]x) R, so
    dY/domega = -[R X]x.
    """
    Y = points @ R.T + t
    z = Y[:, 2]
    u = cam.fx * Y[:, 0] / z + cam.cx
    v = cam.fy * Y[:, 1] / z + cam.cy
    r = np.stack([pixels[:, 0] - u, pixels[:, 1] - v], axis=1)
    n = len(points)
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = cam.fx / z
    dpi[:, 0, 2] = -cam.fx * Y[:, 0] / (z * z)
    dpi[:, 1, 1] = cam.fy / z
    dpi[:, 1, 2] = -cam.fy * Y[:, 1] / (z * z)
    W = Y - t
    Wx = np.zeros((n, 3, 3))
    Wx[:, 0, 1] = -W[:, 2]
    Wx[:, 0, 2] = W[:, 1]
    Wx[:, 1, 0] = W[:, 2]
    Wx[:, 1, 2] = -W[:, 0]
    Wx[:, 2, 0] = -W[:, 1]
    Wx[:, 2, 1] = W[:, 0]
    J = np.empty((n, 2, 6))
    J[:, :, :3] = dpi @ Wx  # dr/domega = -dpi @ (-[W]x)
    J[:, :, 3:] = -dpi
    return r.reshape(-1), J.reshape(-1, 6), z


def refine_lm(initial: RigidTransform, inliers, cam: CameraModel, opts: LmOptions = LmOptions()):
    """Minimize the stacked reprojection residuals over SE(3).

    Classic Marquardt damping: lambda x10 on rejection, /10 on acceptance.
    Steps that push any point to non-positive depth are rejected; if no step
    is ever accepted because of that, DivergedBehindCamera is raised.

    Returns (refined pose, rms over the given correspondences in px).
    """
    if len(inliers) < 4:
        raise TooFewCorrespondences(f"{len(inliers)} < 4 inliers")
    pixels, points = _unpack(inliers)
    R = initial.rotation_matrix()
    t = initial.translation.copy()
    r, J, z = _lm_residual_jacobian(R, t, points, pixels, cam)
    if np.any(z <= 1e-9):
        raise ValueError("initial pose places a point behind the camera")
    cost = 0.5 * float(r @ r)
    lam = opts.lambda_init
    accepted = 0
    behind_rejection = False
    n = len(points)
    for _ in range(opts.max_iterations):
        g = J.T @ r
        if float(np.max(np.abs(g))) < opts.gradient_tol:
            break
        H = J.T @ J
        stepped = False
        for _ in range(60):  # damping retries on the current linearization
            try:
                delta = np.linalg.solve(H + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= opts.lambda_up
                continue
            if float(np.linalg.norm(delta)) < opts.step_tol:
                break
            R_new = _rodrigues(delta[:3]) @ R
            t_new = t + delta[3:]
            r_new, J_new, z_new = _lm_residual_jacobian(R_new, t_new, points, pixels, cam)
            if np.any(z_new <= 1e-9):
                behind_rejection = True
                lam *= opts.lambda_up
                continue
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new <= cost:
                assert cost_new <= cost, "LM accepted an increasing step"
                R, t, r, J = R_new, t_new, r_new, J_new
                # re-orthonormalize through the quaternion to kill drift
                R = RigidTransform(quat_from_matrix(R), t).rotation_matrix()
                cost = cost_new
                lam = max(lam / opts.lambda_down, 1e-15)
                accepted += 1
                stepped = True
                break
            lam *= opts.lambda_up
        if not stepped:
            break
    if accepted == 0 and behind_rejection:
        g = J.T @ r
        if float(np.max(np.abs(g))) >= opts.gradient_tol:
            raise DivergedBehindCamera("every step drove a point behind the camera")
    rms = math.sqrt(float(r @ r) / n)
    return RigidTransform(quat_from_matrix(R), t), rms


def reprojection_rms(pose: RigidTransform, correspondences, cam: CameraModel) -> float:
    """RMS of per-point pixel errors; inf when any point falls behind the camera."""
    pixels, points = _unpack(correspondences)
    Y = points @ pose.rotation_matrix().T + pose.translation
    if np.any(Y[:, 2] <= 1e-9):
        return float("inf")
    d = _pinhole(Y, cam) - pixels
    return math.sqrt(float(np.mean(np.sum(d * d, axis=1))))
