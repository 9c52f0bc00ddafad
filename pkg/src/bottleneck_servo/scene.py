"""Feature-level synthetic world: object, cameras, and a velocity-driven end-effector.

Frames: the robot frame R has z up. The object frame origin sits at the centre
of the object's top face. The end-effector frame is upright at the bottleneck
and the wrist camera looks down along -z of the end-effector.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidBounds, NonFiniteCommand
from .geometry import (
    CameraIntrinsics,
    Pose,
    look_at,
    orthonormalize,
    project,
    rot_x,
    rot_y,
    rot_z,
    so3_exp,
)

OBJECT_ID_BASE = 0
BACKGROUND_ID_BASE = 1000
DISTRACTOR_ID_BASE = 2000

WRIST_INTRINSICS = CameraIntrinsics(fx=600.0, fy=600.0, cx=424.0, cy=240.0, width=848, height=480)
GLOBAL_INTRINSICS = CameraIntrinsics(fx=900.0, fy=900.0, cx=640.0, cy=360.0, width=1280, height=720)
WRIST_MOUNT = Pose(rot_x(np.pi), [0.02, 0.0, -0.02])
GLOBAL_MOUNT = look_at([0.0, -0.55, 0.55], [0.0, 0.0, 0.0])


@dataclass(frozen=True)
class ObjectModel:
    ids: np.ndarray
    points: np.ndarray  # (N, 3) object frame
    normals: np.ndarray  # (N, 3) unit
    descriptor_seeds: np.ndarray
    edge_distance: np.ndarray  # distance to silhouette rim, for mask erosion
    bounding_radius: float
    surface: np.ndarray | None = None  # dense surface samples, what a depth camera would see
    surface_normals: np.ndarray | None = None

    def __post_init__(self):
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("feature ids must be unique")
        if len(self.ids) < 50:
            raise ValueError("object needs at least 50 feature points")

    @property
    def top_mask(self) -> np.ndarray:
        return np.isclose(self.normals[:, 2], 1.0)


def make_box_object(seed: int = 0, size=(0.08, 0.06, 0.03), n_top: int = 90, n_side: int = 30) -> ObjectModel:
    """Box whose top face (z = 0) carries most features; sides carry the rest."""
    rng = np.random.default_rng(seed)
    sx, sy, sz = size
    top = np.column_stack([
        rng.uniform(-sx / 2, sx / 2, n_top),
        rng.uniform(-sy / 2, sy / 2, n_top),
        np.zeros(n_top),
    ])
    top_n = np.tile([0.0, 0.0, 1.0], (n_top, 1))
    top_edge = np.minimum(sx / 2 - np.abs(top[:, 0]), sy / 2 - np.abs(top[:, 1]))

    face = rng.integers(0, 4, n_side)
    u = rng.uniform(-0.5, 0.5, n_side)
    z = rng.uniform(-sz, 0.0, n_side)
    side = np.zeros((n_side, 3))
    side_n = np.zeros((n_side, 3))
    for k, (axis, sign) in enumerate([(0, 1), (0, -1), (1, 1), (1, -1)]):
        sel = face == k
        half = (sx, sy)[axis] / 2
        other = (sy, sx)[axis]
        side[sel, axis] = sign * half
        side[sel, 1 - axis] = u[sel] * other
        side_n[sel, axis] = sign
    side[:, 2] = z
    points = np.vstack([top, side])
    normals = np.vstack([top_n, side_n])
    edge = np.concatenate([top_edge, np.zeros(n_side)])
    n = len(points)
    surf, surf_n = box_surface(size)
    return ObjectModel(
        ids=np.arange(OBJECT_ID_BASE, OBJECT_ID_BASE + n),
        points=points,
        normals=normals,
        descriptor_seeds=rng.integers(0, 2**31 - 1, n),
        edge_distance=edge,
        bounding_radius=float(np.linalg.norm(size) / 2),
        surface=surf,
        surface_normals=surf_n,
    )


def box_surface(size, spacing: float = 0.004):
    """Regular samples on the top and four side faces of a box with its top at z = 0."""
    sx, sy, sz = size
    pts, nrm = [], []

    def grid(a, b):
        na, nb = max(int(round(a / spacing)), 1), max(int(round(b / spacing)), 1)
        u = (np.arange(na) + 0.5) / na - 0.5
        v = (np.arange(nb) + 0.5) / nb - 0.5
        return np.meshgrid(u * a, v * b, indexing="ij")

    u, v = grid(sx, sy)
    pts.append(np.column_stack([u.ravel(), v.ravel(), np.zeros(u.size)]))
    nrm.append(np.tile([0.0, 0.0, 1.0], (u.size, 1)))
    for axis, sign in [(0, 1), (0, -1), (1, 1), (1, -1)]:
        half = (sx, sy)[axis] / 2
        u, v = grid((sy, sx)[axis], sz)
        p = np.zeros((u.size, 3))
        p[:, axis] = sign * half
        p[:, 1 - axis] = u.ravel()
        p[:, 2] = v.ravel() - sz / 2
        n = np.zeros((u.size, 3))
        n[:, axis] = sign
        pts.append(p)
        nrm.append(n)
    return np.vstack(pts), np.vstack(nrm)


@dataclass(frozen=True)
class CameraRig:
    intrinsics: CameraIntrinsics
    true_extrinsic: Pose
    calib_extrinsic: Pose
    mount: str  # "global" or "wrist"

    def camera_pose(self, ee_pose: Pose | None = None, calibrated: bool = False) -> Pose:
        ext = self.calib_extrinsic if calibrated else self.true_extrinsic
        if self.mount == "wrist":
            return ee_pose @ ext
        return ext


def perturb(pose: Pose, rng: np.random.Generator, rot_bound: float, trans_bound: float) -> Pose:
    """Right-compose a perturbation with exactly the given magnitudes and random directions."""
    a = rng.normal(size=3)
    a *= rot_bound / max(np.linalg.norm(a), 1e-12)
    b = rng.normal(size=3)
    b *= trans_bound / max(np.linalg.norm(b), 1e-12)
    return pose @ Pose(so3_exp(a), b)


@dataclass(frozen=True)
class ScenarioConfig:
    dofMode: str = "4dof"
    maxZRotDeg: float = 60.0
    maxXYRotDeg: float = 30.0
    maxTranslationM: float = 0.1
    distractorCount: int = 0
    occlusionFraction: float = 0.0
    calibErrorScale: float = 1.0
    matcherNoiseScale: float = 1.0
    seed: int = 0
    standoffM: float = 0.15
    maskErosionM: float = 0.0
    calibRotDeg: float = 1.0
    calibTransM: float = 0.01

    def validate(self) -> None:
        if self.dofMode not in ("4dof", "6dof"):
            raise InvalidBounds(f"unknown dofMode {self.dofMode!r}")
        if not (0 <= self.maxZRotDeg <= 90 and 0 <= self.maxXYRotDeg <= 45):
            raise InvalidBounds("rotation bounds out of range")
        if not (0 <= self.maxTranslationM <= 0.3):
            raise InvalidBounds("translation bound out of range")
        if not (0 <= self.occlusionFraction < 1):
            raise InvalidBounds("occlusionFraction must be in [0, 1)")
        if self.distractorCount < 0 or self.calibErrorScale < 0 or self.matcherNoiseScale < 0:
            raise InvalidBounds("counts and scales must be non-negative")
        if self.standoffM <= 0:
            raise InvalidBounds("standoff must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Scenario:
    objectDelta: Pose
    dofMode: str
    distractorCount: int
    occlusionFraction: float
    calibErrorScale: float
    matcherNoiseScale: float
    seed: int
    eeStart: Pose
    config: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.to_dict() == other.to_dict()
        )

    def to_dict(self) -> dict:
        return {
            "objectDelta": self.objectDelta.to_dict(),
            "dofMode": self.dofMode,
            "distractorCount": self.distractorCount,
            "occlusionFraction": self.occlusionFraction,
            "calibErrorScale": self.calibErrorScale,
            "matcherNoiseScale": self.matcherNoiseScale,
            "seed": self.seed,
            "eeStart": self.eeStart.to_dict(),
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            objectDelta=Pose.from_dict(d["objectDelta"]),
            dofMode=d["dofMode"],
            distractorCount=d["distractorCount"],
            occlusionFraction=d["occlusionFraction"],
            calibErrorScale=d["calibErrorScale"],
            matcherNoiseScale=d["matcherNoiseScale"],
            seed=d["seed"],
            eeStart=Pose.from_dict(d["eeStart"]),
            config=ScenarioConfig.from_dict(d["config"]),
        )


def sample_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Deterministic scenario draw for ``(config, seed)``."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CE0]))
    yaw = np.deg2rad(rng.uniform(-config.maxZRotDeg, config.maxZRotDeg))
    tx, ty = rng.uniform(-config.maxTranslationM, config.maxTranslationM, 2)
    if config.dofMode == "6dof":
        roll, pitch = np.deg2rad(rng.uniform(-config.maxXYRotDeg, config.maxXYRotDeg, 2))
        R = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
    else:
        R = rot_z(yaw)
    delta = Pose(R, [tx, ty, 0.0])
    # start pose: above the demo bottleneck, displaced and yawed
    sx, sy = rng.uniform(-0.12, 0.12, 2)
    sz = rng.uniform(0.04, 0.12)
    syaw = rng.uniform(-np.pi / 6, np.pi / 6)
    ee_start = Pose(rot_z(syaw), [sx, sy, config.standoffM + sz])
    return Scenario(
        objectDelta=delta,
        dofMode=config.dofMode,
        distractorCount=config.distractorCount,
        occlusionFraction=config.occlusionFraction,
        calibErrorScale=config.calibErrorScale,
        matcherNoiseScale=config.matcherNoiseScale,
        seed=int(seed),
        eeStart=ee_start,
        config=config,
    )


@dataclass(frozen=True)
class FeatureObservations:
    ids: np.ndarray
    pixels: np.ndarray  # (N, 2)
    depths: np.ndarray  # (N,)
    in_mask: np.ndarray  # (N,) bool
    is_object: np.ndarray  # (N,) bool, ground truth

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, sel) -> "FeatureObservations":
        return FeatureObservations(self.ids[sel], self.pixels[sel], self.depths[sel], self.in_mask[sel], self.is_object[sel])

    def mask_ids(self) -> np.ndarray:
        return self.ids[self.in_mask]

    @classmethod
    def empty(cls) -> "FeatureObservations":
        return cls(np.zeros(0, int), np.zeros((0, 2)), np.zeros(0), np.zeros(0, bool), np.zeros(0, bool))


@dataclass(frozen=True)
class Scene:
    """Static content of one episode."""

    obj: ObjectModel
    wrist: CameraRig
    glob: CameraRig
    background_points: np.ndarray
    distractor_points: np.ndarray
    occluded_ids: np.ndarray
    mask_erosion: float = 0.0
    standoff: float = 0.15

    def demo_view(self) -> "Scene":
        """Same scene as seen during demonstration: no distractors, no occluders."""
        return replace(self, distractor_points=np.zeros((0, 3)), occluded_ids=np.zeros(0, int))


@dataclass(frozen=True, eq=False)
class WorldState:
    ee_pose: Pose
    object_pose: Pose
    object_pose_demo: Pose
    demo_bottleneck: Pose
    time: float = 0.0
    seed: int = 0
    step: int = 0
    displacement_flag: bool = False
    saturated: bool = False
    attached: Pose | None = None  # EE-relative object pose while grasped

    @property
    def optimal_bottleneck(self) -> Pose:
        return self.object_pose @ self.object_pose_demo.inverse() @ self.demo_bottleneck


def bottleneck_offset(standoff: float) -> Pose:
    return Pose(np.eye(3), [0.0, 0.0, standoff])


def build_scene(scenario: Scenario, obj: ObjectModel | None = None) -> Scene:
    cfg = scenario.config
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 0xC0FE]))
    obj = obj or make_box_object(seed=0)
    s = scenario.calibErrorScale
    rb, tb = np.deg2rad(cfg.calibRotDeg) * s, cfg.calibTransM * s
    wrist = CameraRig(WRIST_INTRINSICS, WRIST_MOUNT, perturb(WRIST_MOUNT, rng, rb, tb), "wrist")
    glob = CameraRig(GLOBAL_INTRINSICS, GLOBAL_MOUNT, perturb(GLOBAL_MOUNT, rng, rb, tb), "global")

    # table texture on a ring around the object's demo footprint
    bg_rng = np.random.default_rng(1234)
    r = bg_rng.uniform(0.07, 0.35, 160)
    a = bg_rng.uniform(0, 2 * np.pi, 160)
    background = np.column_stack([r * np.cos(a), r * np.sin(a), np.full(160, -0.03)])

    distractors = np.zeros((0, 3))
    if scenario.distractorCount > 0:
        # look-alike clutter: points at object-top height near the object
        centers = []
        for _ in range(max(1, scenario.distractorCount // 10)):
            ang = rng.uniform(0, 2 * np.pi)
            rad = rng.uniform(0.09, 0.16)
            centers.append([rad * np.cos(ang), rad * np.sin(ang)])
        centers = np.array(centers)
        pick = rng.integers(0, len(centers), scenario.distractorCount)
        xy = centers[pick] + rng.uniform(-0.03, 0.03, (scenario.distractorCount, 2))
        xy += scenario.objectDelta.translation[:2]
        distractors = np.column_stack([xy, np.zeros(scenario.distractorCount)])

    occluded = np.zeros(0, int)
    n_occ = int(round(scenario.occlusionFraction * len(obj.ids)))
    if n_occ > 0:
        # contiguous occluder: the features furthest along a random direction
        d = rng.normal(size=2)
        d /= np.linalg.norm(d)
        proj = obj.points[:, :2] @ d
        occluded = obj.ids[np.argsort(-proj)[:n_occ]]
    return Scene(obj, wrist, glob, background, distractors, occluded, cfg.maskErosionM, cfg.standoffM)


def make_world(scenario: Scenario, scene: Scene, object_pose_demo: Pose | None = None) -> WorldState:
    """Test-time world: object displaced by the scenario delta, EE at its start pose."""
    obj_demo = object_pose_demo or Pose.identity()
    demo_b = obj_demo @ bottleneck_offset(scene.standoff)
    return WorldState(
        ee_pose=scenario.eeStart,
        object_pose=scenario.objectDelta @ obj_demo,
        object_pose_demo=obj_demo,
        demo_bottleneck=demo_b,
        seed=scenario.seed,
    )


def demo_world(world: WorldState) -> WorldState:
    """The demonstration-time world: object at its demo pose, EE at the bottleneck."""
    return replace(world, ee_pose=world.demo_bottleneck, object_pose=world.object_pose_demo, displacement_flag=False)


def observe(world: WorldState, rig: CameraRig, scene: Scene, min_facing: float = 0.1) -> FeatureObservations:
    """Noise-free feature observations of everything visible to ``rig``."""
    cam = rig.camera_pose(world.ee_pose)
    cam_inv = cam.inverse()
    obj = scene.obj

    pw = world.object_pose.apply(obj.points)
    nw = obj.normals @ world.object_pose.rotation.T
    ray = cam.translation - pw
    facing = np.einsum("ij,ij->i", nw, ray) / np.linalg.norm(ray, axis=1)
    keep = facing > min_facing
    if len(scene.occluded_ids):
        keep &= ~np.isin(obj.ids, scene.occluded_ids)
    in_mask_obj = obj.edge_distance >= scene.mask_erosion

    ids = [obj.ids[keep], BACKGROUND_ID_BASE + np.arange(len(scene.background_points))]
    pts = [pw[keep], scene.background_points]
    masks = [in_mask_obj[keep], np.zeros(len(scene.background_points), bool)]
    is_obj = [np.ones(keep.sum(), bool), np.zeros(len(scene.background_points), bool)]
    if len(scene.distractor_points):
        n = len(scene.distractor_points)
        ids.append(DISTRACTOR_ID_BASE + np.arange(n))
        pts.append(scene.distractor_points)
        masks.append(np.zeros(n, bool))
        is_obj.append(np.zeros(n, bool))

    ids = np.concatenate(ids)
    pc = cam_inv.apply(np.vstack(pts))
    front = pc[:, 2] > 0.02
    if not np.any(front):
        return FeatureObservations.empty()
    px, depth = project(rig.intrinsics, pc[front])
    vis = rig.intrinsics.in_image(px)
    sel = np.flatnonzero(front)[vis]
    return FeatureObservations(
        ids=ids[sel],
        pixels=px[vis],
        depths=depth[vis],
        in_mask=np.concatenate(masks)[sel],
        is_object=np.concatenate(is_obj)[sel],
    )


def segmented_cloud(world: WorldState, rig: CameraRig, scene: Scene, depth_sigma_rel: float, rng,
                    min_facing: float = 0.1) -> np.ndarray:
    """Camera-frame points of the object surface visible to ``rig``, with depth noise along each ray."""
    obj = scene.obj
    if obj.surface is None:
        raise ValueError("object model has no surface samples")
    cam = rig.camera_pose(world.ee_pose)
    pw = world.object_pose.apply(obj.surface)
    nw = obj.surface_normals @ world.object_pose.rotation.T
    ray = cam.translation - pw
    facing = np.einsum("ij,ij->i", nw, ray) / np.linalg.norm(ray, axis=1)
    pc = cam.inverse().apply(pw[facing > min_facing])
    pc = pc[pc[:, 2] > 0.02]
    if len(pc) == 0:
        return pc
    px, _ = project(rig.intrinsics, pc)
    pc = pc[rig.intrinsics.in_image(px)]
    return pc * (1.0 + depth_sigma_rel * rng.standard_normal(len(pc)))[:, None]


@dataclass(frozen=True)
class RobotLimits:
    v_max: float = 0.15
    w_max: float = 0.8


def step_robot(world: WorldState, v, w, dt: float = 0.1, limits: RobotLimits = RobotLimits()) -> WorldState:
    """First-order integration of a robot-frame velocity command.

    Translation moves by ``v dt``; rotation is left-multiplied by exp(w dt).
    Per-axis clamping is applied and flagged in ``saturated``.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
        raise NonFiniteCommand("velocity command contains non-finite values")
    vc = np.clip(v, -limits.v_max, limits.v_max)
    wc = np.clip(w, -limits.w_max, limits.w_max)
    saturated = bool(np.any(vc != v) or np.any(wc != w))
    ee = world.ee_pose
    if np.any(wc):
        R = so3_exp(wc * dt) @ ee.rotation
        chain = ee.chain + 1
        if chain >= 100:
            R, chain = orthonormalize(R), 0
        new_ee = Pose(R, ee.translation + vc * dt, chain)
    else:
        new_ee = Pose(ee.rotation, ee.translation + vc * dt, ee.chain)
    obj = world.object_pose
    if world.attached is not None:
        obj = new_ee @ world.attached
    return replace(world, ee_pose=new_ee, object_pose=obj, time=world.time + dt, step=world.step + 1, saturated=saturated)


def displace_object(world: WorldState, delta: Pose) -> WorldState:
    """Move the object by ``delta`` (left-composed) and flag the event."""
    return replace(world, object_pose=delta @ world.object_pose, displacement_flag=True)
