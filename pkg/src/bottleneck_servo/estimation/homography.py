"""Planar homography estimation, decomposition and the 2 1/2 D task error.

Convention: ``H`` maps bottleneck normalized coordinates ``m*`` to current
ones, ``rho m = H m*`` with ``rho = Z / Z*``. With ``P = R P* + t`` and the plane
``n*^T P* = d*`` in the bottleneck camera frame, ``H = R + (t / d*) n*^T``.
``H`` is kept at Euclidean scale (middle singular value 1) because ``rho`` is
read directly off ``H m*``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateSample, InsufficientMatches, NoValidDepth
from ..geometry import CameraIntrinsics, orthonormalize, rotation_angle, so3_log
from ..matching import CorrespondenceSet


@dataclass(frozen=True)
class HomographyConfig:
    reprojThresh: float = 4.0  # pixels
    minMatches: int = 8
    confidence: float = 0.99
    maxIters: int = 1000
    refineRounds: int = 2

    @classmethod
    def from_dict(cls, d: dict) -> "HomographyConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True, eq=False)
class Homography:
    h: np.ndarray

    @property
    def projective(self) -> np.ndarray:
        """Same map scaled so that h[2, 2] == 1."""
        return self.h / self.h[2, 2]


@dataclass(frozen=True, eq=False)
class HomographySolution:
    rotation: np.ndarray
    t_scaled: np.ndarray
    normal: np.ndarray | None  # None on the pure-rotation branch

    @property
    def degenerate(self) -> bool:
        return self.normal is None

    def reconstruct(self) -> np.ndarray:
        if self.normal is None:
            return self.rotation.copy()
        return self.rotation + np.outer(self.t_scaled, self.normal)


@dataclass(frozen=True)
class ReferencePoint:
    m_star: np.ndarray  # (x*, y*, 1)
    z_star: float

    def __post_init__(self):
        if self.m_star[2] != 1.0 or not self.z_star > 0:
            raise ValueError("reference point needs m*[2] == 1 and Z* > 0")


@dataclass(frozen=True, eq=False)
class TaskError25D:
    extended: np.ndarray  # (rho x - x*, rho y - y*, rho - 1)
    rotational: np.ndarray  # theta u
    rho: float

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.extended, self.rotational])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


def _homog(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x, np.ones(len(x))])


def _hartley(x: np.ndarray):
    c = x.mean(axis=0)
    s = np.sqrt(2) / max(np.mean(np.linalg.norm(x - c, axis=1)), 1e-15)
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return (x - c) * s, T


def dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT homography from >= 4 correspondences (src -> dst)."""
    s, Ts = _hartley(src)
    d, Td = _hartley(dst)
    n = len(s)
    M = np.zeros((2 * n, 9))
    M[0::2, 0:2] = s
    M[0::2, 2] = 1
    M[0::2, 6:8] = -d[:, :1] * s
    M[0::2, 8] = -d[:, 0]
    M[1::2, 3:5] = s
    M[1::2, 5] = 1
    M[1::2, 6:8] = -d[:, 1:2] * s
    M[1::2, 8] = -d[:, 1]
    _, _, Vt = np.linalg.svd(M)
    Hn = Vt[-1].reshape(3, 3)
    return np.linalg.inv(Td) @ Hn @ Ts


def _batch_four_point(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Homographies (h33 = 1) for K four-point samples, src/dst shape (K, 4, 2)."""
    K = len(src)
    M = np.zeros((K, 8, 8))
    b = np.zeros((K, 8))
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    M[:, 0::2, 0] = x
    M[:, 0::2, 1] = y
    M[:, 0::2, 2] = 1
    M[:, 0::2, 6] = -u * x
    M[:, 0::2, 7] = -u * y
    M[:, 1::2, 3] = x
    M[:, 1::2, 4] = y
    M[:, 1::2, 5] = 1
    M[:, 1::2, 6] = -v * x
    M[:, 1::2, 7] = -v * y
    b[:, 0::2] = u
    b[:, 1::2] = v
    h = np.linalg.solve(M, b[..., None])[..., 0]
    return np.concatenate([h, np.ones((K, 1))], axis=1).reshape(K, 3, 3)


def _collinear_any(pts: np.ndarray, tol: float) -> np.ndarray:
    """True where any three of the four points in a (K, 4, 2) batch are collinear."""
    bad = np.zeros(len(pts), bool)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a = pts[:, j] - pts[:, i]
        c = pts[:, k] - pts[:, i]
        bad |= np.abs(a[:, 0] * c[:, 1] - a[:, 1] * c[:, 0]) < tol
    return bad


def transfer_errors(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Symmetric transfer error (squared, summed over both directions) per point."""
    Hi = np.linalg.inv(H)
    p = _homog(src) @ H.T
    q = _homog(dst) @ Hi.T
    with np.errstate(divide="ignore", invalid="ignore"):
        e1 = np.sum((p[:, :2] / p[:, 2:] - dst) ** 2, axis=1)
        e2 = np.sum((q[:, :2] / q[:, 2:] - src) ** 2, axis=1)
    e = e1 + e2
    return np.where(np.isfinite(e), e, np.inf)


def euclidean_scale(H: np.ndarray, src: np.ndarray | None = None) -> np.ndarray:
    """Scale ``H`` to unit middle singular value with the sign giving rho > 0."""
    H = H / np.linalg.svd(H, compute_uv=False)[1]
    pts = np.array([[0.0, 0.0]]) if src is None else src
    z = _homog(pts) @ H[2]
    if np.sum(np.sign(z)) < 0:
        H = -H
    return H


def estimate_homography(
    matches: CorrespondenceSet,
    intrinsics: CameraIntrinsics,
    cfg: HomographyConfig = HomographyConfig(),
    seed=0,
    intrinsics_b: CameraIntrinsics | None = None,
):
    """MSAC-scored RANSAC over four-point DLT in normalized coordinates.

    Returns ``(Homography, inlier_flags)``.
    """
    if len(matches) < cfg.minMatches:
        raise InsufficientMatches(f"{len(matches)} matches < {cfg.minMatches}")
    intr_b = intrinsics_b or intrinsics
    src = intrinsics.normalize(matches.pix_a)
    dst = intr_b.normalize(matches.pix_b)
    f = 0.5 * (intrinsics.fx + intrinsics.fy)
    th2 = 2.0 * (cfg.reprojThresh / f) ** 2  # both transfer directions
    n = len(src)
    rng = np.random.default_rng(seed)
    best_cost, best_H = np.inf, None
    need, done, chunk = cfg.maxIters, 0, 64
    tol = 1e-4 * (np.ptp(src, axis=0).max() ** 2 + 1e-12)
    while done < need:
        k = min(chunk, cfg.maxIters - done)
        done += k
        idx = np.argsort(rng.random((k, n)), axis=1)[:, :4]
        S, D = src[idx], dst[idx]
        ok = ~(_collinear_any(S, tol) | _collinear_any(D, tol))
        if not np.any(ok):
            continue
        try:
            Hs = _batch_four_point(S[ok], D[ok])
        except np.linalg.LinAlgError:
            continue
        good = np.all(np.isfinite(Hs), axis=(1, 2)) & (np.abs(np.linalg.det(Hs)) > 1e-12)
        if not np.any(good):
            continue
        Hs = Hs[good]
        p = np.einsum("kij,nj->kni", Hs, _homog(src))
        q = np.einsum("kij,nj->kni", np.linalg.inv(Hs), _homog(dst))
        with np.errstate(divide="ignore", invalid="ignore"):
            e = np.sum((p[..., :2] / p[..., 2:] - dst) ** 2, axis=2) + np.sum((q[..., :2] / q[..., 2:] - src) ** 2, axis=2)
        e = np.where(np.isfinite(e), e, np.inf)
        cost = np.minimum(e, th2).sum(axis=1)
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost, best_H = cost[j], Hs[j]
            ratio = float(np.mean(e[j] < th2))
            if ratio > 0:
                need = min(need, int(np.ceil(np.log(1 - cfg.confidence) / np.log(max(1 - ratio**4, 1e-300)))) if ratio < 1 else 1)
    if best_H is None:
        raise DegenerateSample("every four-point sample was degenerate")

    H = best_H
    inl = transfer_errors(H, src, dst) < th2
    for _ in range(cfg.refineRounds):
        if inl.sum() < 4:
            break
        H = dlt(src[inl], dst[inl])
        new = transfer_errors(H, src, dst) < th2
        if np.array_equal(new, inl):
            break
        inl = new
    if inl.sum() < 4:
        raise DegenerateSample("too few inliers for a homography")
    return Homography(euclidean_scale(H, src[inl])), inl


def decompose_homography(h: Homography, ref_points=None, tol: float = 1e-6) -> list[HomographySolution]:
    """Candidate (R, t/d*, n*) triples for ``h``.

    ``ref_points`` are bottleneck-side normalized points (N, 2) or homogeneous
    (N, 3); solutions that put any of them behind the camera are dropped.
    """
    if ref_points is None:
        pts = np.array([[0.0, 0.0, 1.0]])
    else:
        pts = np.asarray(ref_points, dtype=float)
        if pts.shape[1] == 2:
            pts = _homog(pts)
    H = euclidean_scale(h.h, pts[:, :2] / pts[:, 2:])
    R0 = orthonormalize(H)
    if np.linalg.norm(H - R0) < tol:
        return [HomographySolution(R0, np.zeros(3), None)]

    _, S, Vt = np.linalg.svd(H)
    V = Vt.T
    if np.linalg.det(V) < 0:
        V = -V
    s1, s3 = S[0] ** 2, S[2] ** 2
    v1, v2, v3 = V[:, 0], V[:, 1], V[:, 2]
    den = np.sqrt(max(s1 - s3, 1e-300))
    a = np.sqrt(max(1.0 - s3, 0.0))
    b = np.sqrt(max(s1 - 1.0, 0.0))
    sols = []
    for u in ((a * v1 + b * v3) / den, (a * v1 - b * v3) / den):
        U = np.column_stack([v2, u, np.cross(v2, u)])
        Hv2, Hu = H @ v2, H @ u
        W = np.column_stack([Hv2, Hu, np.cross(Hv2, Hu)])
        R = W @ U.T
        n = np.cross(v2, u)
        t = (H - R) @ n
        sols.append(HomographySolution(R, t, n))
        sols.append(HomographySolution(R, -t, -n))

    passing = [np.sum(pts @ s.normal > 0) for s in sols]
    top = max(passing)
    kept = [s for s, c in zip(sols, passing) if c == top]
    # the two sign-flipped copies of a repeated singular value are identical; dedupe
    out: list[HomographySolution] = []
    for s in kept:
        if not any(np.allclose(s.rotation, o.rotation, atol=1e-12) and np.allclose(s.normal, o.normal, atol=1e-12) for o in out):
            out.append(s)
    return out


def fit_plane_normal(points) -> np.ndarray:
    """Unit normal of the best-fit plane through camera-frame points, oriented so n . P > 0.

    A cold-start prior for :func:`select_solution` when bottleneck depths are at hand.
    """
    P = np.asarray(points, dtype=float)
    if len(P) < 3:
        raise NoValidDepth("need three points to fit a plane")
    c = P.mean(axis=0)
    n = np.linalg.svd(P - c)[2][2]
    return n if n @ c > 0 else -n


def _solution_key(s: HomographySolution):
    n = s.normal if s.normal is not None else np.zeros(3)
    return (round(rotation_angle(s.rotation), 12), tuple(np.round(n, 12)))


def _normal_angle(a, b) -> float:
    if a is None or b is None:
        return 0.0
    return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))


def select_solution(
    candidates: list[HomographySolution],
    previous: HomographySolution | None = None,
    normal_prior=(0.0, 0.0, 1.0),
) -> HomographySolution:
    """Pick the physically consistent decomposition.

    With a previous frame: smallest rotation distance plus normal angle (the
    plane normal lives in the fixed bottleneck frame, so the true one does not
    drift). Cold start: normal closest to ``normal_prior``.
    """
    if not candidates:
        raise ValueError("no candidates")
    if len(candidates) == 1:
        return candidates[0]
    if previous is not None:
        def score(s):
            return rotation_angle(s.rotation.T @ previous.rotation) + _normal_angle(s.normal, previous.normal)
    else:
        prior = np.asarray(normal_prior, dtype=float)

        def score(s):
            return _normal_angle(s.normal, prior)
    return min(candidates, key=lambda s: (round(score(s), 12), _solution_key(s)))


def build_task_error(
    h: Homography,
    matches: CorrespondenceSet,
    inliers: np.ndarray,
    intrinsics: CameraIntrinsics,
    selected: HomographySolution,
    ref: ReferencePoint | None = None,
) -> tuple[TaskError25D, ReferencePoint]:
    """Task error ``[rho m - m*, theta u]`` and the (sticky) reference point.

    ``theta u`` is the axis-angle of the current camera orientation expressed in
    the bottleneck camera frame, i.e. of ``R^T``.
    """
    if ref is None:
        sel = np.flatnonzero(inliers & (matches.depth_a > 0))
        if len(sel) == 0:
            raise NoValidDepth("no inlier with a valid bottleneck depth")
        src = intrinsics.normalize(matches.pix_a[sel])
        dst = intrinsics.normalize(matches.pix_b[sel])
        e = transfer_errors(h.h, src, dst)
        k = int(np.argmin(e))
        ref = ReferencePoint(np.array([src[k, 0], src[k, 1], 1.0]), float(matches.depth_a[sel[k]]))
    return task_error(h, selected, ref), ref


def task_error(h: Homography, selected: HomographySolution, ref: ReferencePoint) -> TaskError25D:
    rm = h.h @ ref.m_star
    rho = float(rm[2])
    return TaskError25D(rm - ref.m_star, so3_log(selected.rotation.T), rho)
