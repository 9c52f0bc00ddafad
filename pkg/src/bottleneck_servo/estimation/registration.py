"""Rigid registration: weighted Kabsch, MSAC-scored RANSAC, ICP, and the
two bottleneck-estimate compositions (global prior and wrist measurement)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import (
    DegenerateConfiguration,
    EmptyCloud,
    InsufficientMatches,
    NoConsensus,
    PriorUnavailable,
    TooFewPoints,
)
from ..geometry import CameraIntrinsics, Pose, backproject, to_vector
from ..matching import CorrespondenceSet


@dataclass(frozen=True)
class RansacConfig:
    minMatches: int = 6
    minInliers: int = 6
    inlierDistM: float = 0.01
    confidence: float = 0.99
    maxIters: int = 1000
    refineRounds: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "RansacConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class IcpConfig:
    maxIters: int = 50
    relTol: float = 1e-6
    rejectFactor: float = 3.0


@dataclass(frozen=True)
class KabschFit:
    pose: Pose
    inliers: np.ndarray
    rms: float

    def __iter__(self):
        return iter((self.pose, self.inliers))


@dataclass(frozen=True)
class IcpResult:
    pose: Pose
    rms: float
    iterations: int


def _check_rank(pts: np.ndarray, w: np.ndarray | None = None) -> None:
    c = pts - (pts.mean(axis=0) if w is None else (w @ pts) / w.sum())
    if w is not None:
        c = c * np.sqrt(w)[:, None]
    s = np.linalg.svd(c, compute_uv=False)
    if s[0] == 0 or s[1] <= 1e-9 * s[0] + 1e-15:
        raise DegenerateConfiguration("points are collinear or coincident")


def weighted_kabsch(pts_a, pts_b, weights=None) -> Pose:
    """Least-squares rigid pose ``p`` minimising sum w_i |p(a_i) - b_i|^2."""
    A = np.asarray(pts_a, dtype=float)
    B = np.asarray(pts_b, dtype=float)
    w = np.ones(len(A)) if weights is None else np.asarray(weights, dtype=float)
    if len(A) != len(B) or len(A) != len(w):
        raise ValueError("point and weight counts differ")
    pos = w > 0
    if pos.sum() < 3:
        raise TooFewPoints("weighted Kabsch needs at least 3 positively weighted points")
    A, B, w = A[pos], B[pos], w[pos]
    _check_rank(A, w)
    W = w.sum()
    ca = (w @ A) / W
    cb = (w @ B) / W
    C = ((A - ca) * w[:, None]).T @ (B - cb)
    U, _, Vt = np.linalg.svd(C)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ U.T
    return Pose(R, cb - R @ ca)


def _batch_kabsch(A: np.ndarray, B: np.ndarray):
    """Unweighted Kabsch for a batch of minimal samples, A/B shape (K, m, 3)."""
    ca = A.mean(axis=1, keepdims=True)
    cb = B.mean(axis=1, keepdims=True)
    C = np.einsum("kmi,kmj->kij", A - ca, B - cb)
    U, _, Vt = np.linalg.svd(C)
    V = np.transpose(Vt, (0, 2, 1))
    d = np.sign(np.linalg.det(V @ np.transpose(U, (0, 2, 1))))
    D = np.zeros((len(A), 3, 3))
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = np.where(d == 0, 1.0, d)
    R = V @ D @ np.transpose(U, (0, 2, 1))
    t = cb[:, 0, :] - np.einsum("kij,kj->ki", R, ca[:, 0, :])
    return R, t


def _adaptive_iters(inlier_ratio: float, sample: int, confidence: float, cap: int) -> int:
    if inlier_ratio <= 0:
        return cap
    p = inlier_ratio**sample
    if p >= 1.0:
        return 1
    return int(min(cap, np.ceil(np.log(1 - confidence) / np.log(1 - p))))


def ransac_kabsch(A: np.ndarray, B: np.ndarray, weights: np.ndarray, cfg: RansacConfig, seed) -> KabschFit:
    """MSAC-scored RANSAC over 3-point samples, then weighted refits on the inliers."""
    n = len(A)
    rng = np.random.default_rng(seed)
    th2 = cfg.inlierDistM**2
    best_cost = np.inf
    best = None
    need = cfg.maxIters
    done = 0
    chunk = 64
    while done < need:
        k = min(chunk, cfg.maxIters - done)
        idx = np.argsort(rng.random((k, n)), axis=1)[:, :3]
        Sa = A[idx]
        # reject near-collinear samples
        area = np.linalg.norm(np.cross(Sa[:, 1] - Sa[:, 0], Sa[:, 2] - Sa[:, 0]), axis=1)
        ok = area > 1e-8
        done += k
        if not np.any(ok):
            continue
        R, t = _batch_kabsch(Sa[ok], B[idx[ok]])
        pred = np.einsum("kij,nj->kni", R, A) + t[:, None, :]
        r2 = np.sum((pred - B[None]) ** 2, axis=2)
        cost = np.minimum(r2, th2).sum(axis=1)
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            best_cost = cost[j]
            best = Pose(R[j], t[j])
            ratio = float(np.mean(r2[j] < th2))
            need = min(need, _adaptive_iters(ratio, 3, cfg.confidence, cfg.maxIters))
    if best is None:
        raise DegenerateConfiguration("no non-degenerate minimal sample found")

    pose = best
    inl = np.sum((pose.apply(A) - B) ** 2, axis=1) < th2
    for _ in range(cfg.refineRounds):
        if inl.sum() < cfg.minInliers:
            break
        w = weights[inl] if weights[inl].sum() > 0 else np.ones(inl.sum())
        try:
            pose = weighted_kabsch(A[inl], B[inl], w)
        except (DegenerateConfiguration, TooFewPoints):
            break
        new = np.sum((pose.apply(A) - B) ** 2, axis=1) < th2
        if np.array_equal(new, inl):
            break
        inl = new
    if inl.sum() < cfg.minInliers:
        raise NoConsensus(f"only {int(inl.sum())} inliers")
    r = np.linalg.norm(pose.apply(A[inl]) - B[inl], axis=1)
    return KabschFit(pose, inl, float(np.sqrt(np.mean(r**2))))


def lift(matches: CorrespondenceSet, intr_a: CameraIntrinsics, intr_b: CameraIntrinsics):
    A = backproject(intr_a, matches.pix_a, matches.depth_a)
    B = backproject(intr_b, matches.pix_b, matches.depth_b)
    return A, B


def robust_kabsch(
    matches: CorrespondenceSet,
    intr_a: CameraIntrinsics,
    intr_b: CameraIntrinsics,
    cfg: RansacConfig = RansacConfig(),
    seed=0,
) -> KabschFit:
    """Pose mapping bottleneck-side 3D points onto current-side 3D points."""
    if len(matches) >= 3:
        A, B = lift(matches, intr_a, intr_b)
        _check_rank(A)
    if len(matches) < cfg.minMatches:
        raise InsufficientMatches(f"{len(matches)} matches < {cfg.minMatches}")
    return ransac_kabsch(A, B, matches.weight, cfg, seed)


def _trimmed_pairs(d: np.ndarray, factor: float) -> np.ndarray:
    return d <= factor * np.median(d)


def icp_refine(cloud_a, cloud_b, init: Pose, cfg: IcpConfig = IcpConfig()) -> IcpResult:
    """Point-to-point ICP from ``cloud_a`` onto ``cloud_b`` with median-based pair rejection.

    The returned pose never has a larger association RMS than ``init``.
    """
    A = np.asarray(cloud_a, dtype=float)
    B = np.asarray(cloud_b, dtype=float)
    if len(A) == 0 or len(B) == 0:
        raise EmptyCloud("ICP needs two non-empty clouds")
    tree = cKDTree(B)

    def assoc(p: Pose):
        d, j = tree.query(p.apply(A))
        keep = _trimmed_pairs(d, cfg.rejectFactor)
        return float(np.sqrt(np.mean(d[keep] ** 2))), j, keep

    pose = init
    rms, j, keep = assoc(pose)
    best, best_rms = pose, rms
    it = 0
    for it in range(1, cfg.maxIters + 1):
        if keep.sum() < 3 or rms == 0.0:
            break
        try:
            pose = weighted_kabsch(A[keep], B[j[keep]])
        except (DegenerateConfiguration, TooFewPoints):
            break
        new_rms, j, keep = assoc(pose)
        if new_rms < best_rms:
            best, best_rms = pose, new_rms
        if rms - new_rms < cfg.relTol * max(rms, 1e-300):
            rms = new_rms
            break
        rms = new_rms
    return IcpResult(best, best_rms, it)


@dataclass(frozen=True)
class PriorConfig:
    minPoints: int = 20
    ransac: RansacConfig = RansacConfig(inlierDistM=0.015)
    icp: IcpConfig = IcpConfig()
    useIcp: bool = True


def global_prior(
    matches: CorrespondenceSet,
    intrinsics: CameraIntrinsics,
    calib_global: Pose,
    demo_bottleneck: Pose,
    cfg: PriorConfig = PriorConfig(),
    seed=0,
    demo_cloud=None,
    current_cloud=None,
) -> np.ndarray:
    """Coarse bottleneck estimate from the global camera.

    The object's displacement in the camera frame is found by robust Kabsch on
    the global correspondences and optionally refined with ICP, then conjugated
    into the robot frame through the (imprecise) global-camera calibration and
    applied to the demonstration bottleneck.
    """
    if len(matches) < cfg.minPoints:
        raise PriorUnavailable(f"{len(matches)} global matches < {cfg.minPoints}")
    try:
        fit = robust_kabsch(matches, intrinsics, intrinsics, cfg.ransac, seed)
    except (NoConsensus, InsufficientMatches, DegenerateConfiguration) as exc:
        raise PriorUnavailable(str(exc)) from exc
    delta = fit.pose
    if cfg.useIcp:
        if demo_cloud is None or current_cloud is None:
            A, B = lift(matches, intrinsics, intrinsics)
            demo_cloud, current_cloud = A[fit.inliers], B[fit.inliers]
        if len(demo_cloud) >= cfg.minPoints and len(current_cloud) >= cfg.minPoints:
            delta = icp_refine(demo_cloud, current_cloud, delta, cfg.icp).pose
    return to_vector(calib_global @ delta @ calib_global.inverse() @ demo_bottleneck)


def wrist_measurement(delta_wrist: Pose, ee_pose: Pose, calib_wrist: Pose) -> np.ndarray:
    """Bottleneck estimate from the wrist camera's bottleneck-to-current displacement."""
    return to_vector(ee_pose @ calib_wrist @ delta_wrist @ calib_wrist.inverse())
