"""Synthetic instances with known ground truth, shared by unit and acceptance tests."""
import numpy as np

from bottleneck_servo.geometry import CameraIntrinsics, Pose, so3_exp
from bottleneck_servo.matching import CorrespondenceSet

INTR = CameraIntrinsics(600.0, 600.0, 424.0, 240.0, 848, 480)


def random_rotation(rng, max_angle):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0, max_angle))


def correspondences(pa, pb, intr=INTR, weight=None):
    """Perfect matches between two camera-frame point sets."""
    n = len(pa)
    za, zb = pa[:, 2], pb[:, 2]
    pix_a = np.column_stack([intr.fx * pa[:, 0] / za + intr.cx, intr.fy * pa[:, 1] / za + intr.cy])
    pix_b = np.column_stack([intr.fx * pb[:, 0] / zb + intr.cx, intr.fy * pb[:, 1] / zb + intr.cy])
    ids = np.arange(n)
    w = np.ones(n) if weight is None else weight
    return CorrespondenceSet(ids, ids.copy(), pix_a, pix_b, za.copy(), zb.copy(), w, np.ones(n, bool))


def plane_scene(rng, n=60, pure_rotation=False, max_rot=np.deg2rad(30)):
    """Points on a plane seen from a bottleneck camera and a displaced current camera.

    Returns (matches, R, t/d*, n*) with P = R P* + t and n*^T P* = d*.
    """
    R = random_rotation(rng, max_rot)
    while True:
        normal = np.array([0.0, 0.0, 1.0]) + rng.uniform(-0.5, 0.5, 3) * np.array([1, 1, 0])
        normal /= np.linalg.norm(normal)
        d = rng.uniform(0.15, 0.6)
        xy = rng.uniform(-0.25, 0.25, (n, 2)) * d
        z = (d - xy @ normal[:2]) / normal[2]
        pa = np.column_stack([xy, z])
        t = np.zeros(3) if pure_rotation else rng.uniform(-0.05, 0.05, 3) * d / 0.3
        pb = pa @ R.T + t
        if pa[:, 2].min() > 0.05 and pb[:, 2].min() > 0.05:
            break
    return correspondences(pa, pb), R, t / d, normal


def rigid_instance(rng, n, noise=0.0, outlier_frac=0.0):
    """Lifted 3D match set under a known pose; returns (matches, pose, inlier truth)."""
    pose = Pose.from_rt(random_rotation(rng, np.deg2rad(40)), rng.uniform(-0.05, 0.05, 3))
    pa = np.column_stack([rng.uniform(-0.08, 0.08, (n, 2)), rng.uniform(0.15, 0.35, n)])
    pb = pose.apply(pa) + rng.normal(0, noise, (n, 3))
    out = rng.random(n) < outlier_frac
    pb[out] = np.column_stack([rng.uniform(-0.1, 0.1, (out.sum(), 2)), rng.uniform(0.12, 0.4, out.sum())])
    m = correspondences(pa, pb)
    m = CorrespondenceSet(m.ids_a, m.ids_b, m.pix_a, m.pix_b, m.depth_a, m.depth_b, m.weight, ~out)
    return m, pose, ~out


def robust_kabsch_trials(seeds, noise=0.002, outlier_frac=0.4, n=100):
    """Per-seed (inlier precision, translation error) of robust Kabsch, plus the inlier noise floor.

    The floor is the RMS translation error of the least-squares fit on the true
    inlier set over the same seeds, i.e. what an outlier oracle would achieve.
    """
    from bottleneck_servo.estimation import RansacConfig, robust_kabsch, weighted_kabsch
    from bottleneck_servo.estimation.registration import lift

    prec, err, oracle = [], [], []
    for s in seeds:
        r = np.random.default_rng(s)
        m, truth, inl = rigid_instance(r, n, noise, outlier_frac)
        fit = robust_kabsch(m, INTR, INTR, RansacConfig(), s)
        A, B = lift(m, INTR, INTR)
        ideal = weighted_kabsch(A[inl], B[inl])
        prec.append((fit.inliers & inl).sum() / fit.inliers.sum())
        err.append(np.linalg.norm(fit.pose.translation - truth.translation))
        oracle.append(np.linalg.norm(ideal.translation - truth.translation))
    return np.array(prec), np.array(err), float(np.sqrt(np.mean(np.square(oracle))))


def ukf_vs_average(seeds, n_meas=30, prior_offset=0.05, sigma=0.01):
    """Posterior RMSE and measurement-average RMSE (translation, metres) over seeded trials.

    Each trial: a random bottleneck, a prior displaced by ``prior_offset`` in a
    random direction with a matching prior sigma, and ``n_meas`` measurements
    with isotropic noise ``sigma``. The filter is given the true noise levels.
    """
    from bottleneck_servo.fusion import ukf_init, ukf_step

    rot_sigma = np.deg2rad(0.5)
    P0 = np.diag([np.deg2rad(3.0) ** 2] * 3 + [(prior_offset / np.sqrt(3)) ** 2] * 3)
    Rm = np.diag([rot_sigma**2] * 3 + [sigma**2] * 3)
    Q = np.zeros((6, 6))
    post, avg = [], []
    for s in seeds:
        r = np.random.default_rng(s)
        w = r.normal(size=3)
        truth = np.concatenate([w / np.linalg.norm(w) * r.uniform(0, 1.0), r.uniform(-0.3, 0.3, 3)])
        d = r.normal(size=3)
        prior = truth.copy()
        prior[3:] += prior_offset * d / np.linalg.norm(d)
        prior[:3] += r.normal(0, np.deg2rad(3.0), 3)
        z = truth + r.normal(size=(n_meas, 6)) * np.sqrt(np.diag(Rm))
        b = ukf_init(prior, P0)
        for zi in z:
            b = ukf_step(b, zi, Rm, Q)
        post.append(b.mean[3:] - truth[3:])
        avg.append(z[:, 3:].mean(axis=0) - truth[3:])
    rmse = lambda e: float(np.sqrt(np.mean(np.sum(np.square(e), axis=1))))  # noqa: E731
    return rmse(post), rmse(avg)


def linear_kf(x, P, zs, Rm, Q):
    """Closed-form Kalman filter with identity process and measurement models."""
    for z in zs:
        P = P + Q
        K = P @ np.linalg.inv(P + Rm)
        x = x + K @ (z - x)
        P = (np.eye(len(x)) - K) @ P
    return x, P


ACCEPTANCE: dict = {}


def report(n: int, ok: bool, detail: str) -> None:
    """Record and print the one-line verdict for acceptance criterion ``n``."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
