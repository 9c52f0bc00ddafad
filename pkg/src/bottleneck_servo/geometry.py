"""SE(3) poses, the axis-angle/translation 6-vector chart and pinhole projection.

Poses are stored as a rotation matrix plus translation. The 6-vector layout
used everywhere is ``[rx, ry, rz, tx, ty, tz]``: axis-angle first, then
translation in meters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AngleAtPi, BehindCamera, NonPositiveDepth

PI_GUARD = 1e-6
_REORTHO_EVERY = 100


def hat(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(W: np.ndarray) -> np.ndarray:
    return 0.5 * np.array([W[2, 1] - W[1, 2], W[0, 2] - W[2, 0], W[1, 0] - W[0, 1]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    w = np.asarray(w, dtype=float)
    th2 = float(w @ w)
    W = hat(w)
    if th2 < 1e-16:
        # second-order series; exact to double precision at this size
        return np.eye(3) + W + 0.5 * (W @ W)
    th = np.sqrt(th2)
    A = np.sin(th) / th
    B = (1.0 - np.cos(th)) / th2
    return np.eye(3) + A * W + B * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` with angle in [0, pi].

    Uses atan2 for the angle so precision holds near 0, and the symmetric
    part for the axis once the angle is large enough that sin(theta) is small.
    """
    R = np.asarray(R, dtype=float)
    s_vec = 0.5 * vee(R - R.T)
    s = np.linalg.norm(s_vec)
    c = 0.5 * (np.trace(R) - 1.0)
    th = np.arctan2(s, c)
    if th < 1e-8:
        return s_vec * (1.0 + th * th / 6.0)
    if th < 2.5:
        return s_vec * (th / s)
    B = 0.5 * (R + R.T) - c * np.eye(3)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(max(B[i, i] * (1.0 - c), 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ s_vec < 0:
        axis = -axis
    return axis * th


def rotation_angle(R: np.ndarray) -> float:
    s = 0.5 * np.linalg.norm(vee(R - R.T))
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest proper rotation (polar decomposition via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rot_x(a: float) -> np.ndarray:
    return so3_exp([a, 0.0, 0.0])


def rot_y(a: float) -> np.ndarray:
    return so3_exp([0.0, a, 0.0])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t``.

    ``a @ b`` composes (apply ``b`` first). The chain depth is tracked so long
    composition chains get re-orthonormalized every 100 steps.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    chain: int = 0

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(np.asarray(R, dtype=float), np.asarray(t, dtype=float))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        if not isinstance(other, Pose):
            return NotImplemented
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        depth = max(self.chain, other.chain) + 1
        if depth >= _REORTHO_EVERY:
            return Pose(orthonormalize(R), t, 0)
        return Pose(R, t, depth)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation, self.chain)

    def apply(self, pts) -> np.ndarray:
        """Transform points, shape (3,) or (N, 3)."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation

    def angle(self) -> float:
        return rotation_angle(self.rotation)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def to_dict(self) -> dict:
        return {"R": self.rotation.tolist(), "t": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["R"], dtype=float), np.array(d["t"], dtype=float))

    def __repr__(self) -> str:
        v = np.concatenate([so3_log(self.rotation), self.translation])
        return f"Pose(rotvec={v[:3].round(6).tolist()}, t={v[3:].round(6).tolist()})"


def compose(*poses: Pose) -> Pose:
    out = poses[0]
    for p in poses[1:]:
        out = out @ p
    return out


def to_vector(p: Pose) -> np.ndarray:
    """Map a pose to ``[axis-angle, translation]``; rejects angles at pi."""
    w = so3_log(p.rotation)
    if np.linalg.norm(w) >= np.pi - PI_GUARD:
        raise AngleAtPi(f"rotation angle {np.linalg.norm(w):.9f} too close to pi")
    return np.concatenate([w, p.translation])


def from_vector(v) -> Pose:
    v = np.asarray(v, dtype=float).reshape(6)
    if np.linalg.norm(v[:3]) >= np.pi - PI_GUARD:
        raise AngleAtPi(f"rotation angle {np.linalg.norm(v[:3]):.9f} too close to pi")
    return Pose(so3_exp(v[:3]), v[3:].copy())


def pose_error(est: Pose, truth: Pose) -> tuple[float, float]:
    """(translation error m, rotation error rad) between two poses."""
    dt = float(np.linalg.norm(est.translation - truth.translation))
    dr = rotation_angle(est.rotation.T @ truth.rotation)
    return dt, dr


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose (z forward, x right, y down) looking from eye to target."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), eye)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def normalize(self, pixels) -> np.ndarray:
        """Pixels (N, 2) to normalized image coordinates (N, 2)."""
        px = np.asarray(pixels, dtype=float)
        return np.stack([(px[..., 0] - self.cx) / self.fx, (px[..., 1] - self.cy) / self.fy], axis=-1)

    def in_image(self, pixels) -> np.ndarray:
        px = np.asarray(pixels, dtype=float)
        return (px[..., 0] >= 0) & (px[..., 0] < self.width) & (px[..., 1] >= 0) & (px[..., 1] < self.height)

    def to_dict(self) -> dict:
        return dict(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy, width=self.width, height=self.height)


def project(intr: CameraIntrinsics, point_cam):
    """Project camera-frame point(s) to pixels. Returns (pixels, depths)."""
    p = np.asarray(point_cam, dtype=float)
    z = p[..., 2]
    if np.any(z <= 1e-6):
        raise BehindCamera("point at or behind the image plane")
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1), z


def backproject(intr: CameraIntrinsics, pixel, depth) -> np.ndarray:
    """Inverse of :func:`project`: pixel(s) plus depth(s) to camera-frame points."""
    px = np.asarray(pixel, dtype=float)
    z = np.asarray(depth, dtype=float)
    if np.any(z <= 0):
        raise NonPositiveDepth("depth must be positive")
    x = (px[..., 0] - intr.cx) / intr.fx * z
    y = (px[..., 1] - intr.cy) / intr.fy * z
    return np.stack([x, y, z], axis=-1)
