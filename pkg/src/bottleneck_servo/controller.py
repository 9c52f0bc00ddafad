"""Three-stage servoing state machine and the closed-loop episode runner.

Stage 1 drives toward the global-camera prior, stage 2 fuses wrist
measurements into that prior with a UKF, and stage 3 regulates the
homography task error with the wrist camera alone.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateDepth, PriorUnavailable, ServoError
from .estimation import (
    HomographyConfig,
    HomographySolution,
    PriorConfig,
    RansacConfig,
    ReferencePoint,
    TaskError25D,
    build_task_error,
    decompose_homography,
    estimate_homography,
    global_prior,
    robust_kabsch,
    select_solution,
    wrist_measurement,
)
from .fusion import BeliefState, FusionConfig, VarianceWindow, push_variance, ukf_init, ukf_step
from .geometry import Pose, from_vector, pose_error, rotation_angle, so3_log, to_vector
from .matching import GLOBAL_NOISE, NoiseModel, filter_mask, generate_matches
from .scene import (
    FeatureObservations,
    RobotLimits,
    Scenario,
    Scene,
    WorldState,
    demo_world,
    displace_object,
    observe,
    segmented_cloud,
    step_robot,
)


class Phase(str, enum.Enum):
    STAGE1 = "Stage1"
    STAGE2 = "Stage2"
    STAGE3 = "Stage3"
    CONVERGED = "Converged"
    REINIT = "Reinitializing"


_PHASE_CODE = {Phase.STAGE1: "1", Phase.STAGE2: "2", Phase.STAGE3: "3", Phase.CONVERGED: "C", Phase.REINIT: "R"}
_GRAMMAR = {
    "full": re.compile(r"^(1+2*3*R+)*1+(2+(3+C?)?)?$"),
    "stage2": re.compile(r"^(1+2*R+)*1+(2+C?)?$"),
    "openloop": re.compile(r"^(1+R+)*1+C?$"),
}


def phase_string(phases) -> str:
    return "".join(_PHASE_CODE[Phase(p)] for p in phases)


def legal_phase_sequence(phases, arm: str = "full") -> bool:
    """Check a per-step phase trace against the legal-transition grammar."""
    return bool(_GRAMMAR[arm].match(phase_string(phases)))


@dataclass(frozen=True)
class ControllerConfig:
    lambda1: float = 0.8
    lambda2: float = 0.8
    lambdaT: float = 1.0
    lambdaR: float = 1.0
    matchCountThresh: int = 30
    varianceThresh: tuple = tuple([float(np.deg2rad(1.0)) ** 2] * 3 + [0.005**2] * 3)
    overlapDeltaThreshT: float = 0.02
    overlapDeltaThreshR: float = float(np.deg2rad(5.0))
    overlapHoldSteps: int = 10
    convergenceThresh: float = 0.01
    bidirFilterThresh: float = 0.05
    controlRateHz: float = 10.0
    stepBudget: int = 600
    confidentWeight: float = 0.5
    settleThreshT: float = 0.001
    settleThreshR: float = float(np.deg2rad(0.2))
    successThreshT: float = 0.005
    successThreshR: float = float(np.deg2rad(1.0))

    def __post_init__(self):
        gains = (self.lambda1, self.lambda2, self.lambdaT, self.lambdaR)
        if min(gains) <= 0:
            raise ValueError("gains must be positive")
        if min(self.varianceThresh) <= 0 or self.convergenceThresh <= 0 or self.bidirFilterThresh <= 0:
            raise ValueError("thresholds must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.controlRateHz

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerConfig":
        d = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "varianceThresh" in d:
            d["varianceThresh"] = tuple(d["varianceThresh"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class VelocityCommand:
    v: np.ndarray  # robot frame, m/s
    w: np.ndarray  # robot frame, rad/s
    v_cam: np.ndarray | None = None
    w_cam: np.ndarray | None = None

    @classmethod
    def zero(cls) -> "VelocityCommand":
        return cls(np.zeros(3), np.zeros(3))

    def as_list(self) -> list:
        return [*self.v.tolist(), *self.w.tolist()]


def dof_mask(dof_mode: str) -> np.ndarray:
    """Robot-frame angular axes the controller may drive."""
    return np.array([0.0, 0.0, 1.0]) if dof_mode == "4dof" else np.ones(3)


def stage_law12(ee_vec, target_vec, gain: float, mask=None) -> VelocityCommand:
    """Decoupled proportional law on the pose error between EE and target.

    The rotational error is the shortest-arc rotation vector from target to EE
    orientation, which equals the axis-angle difference to first order.
    """
    ee_vec = np.asarray(ee_vec, dtype=float)
    target_vec = np.asarray(target_vec, dtype=float)
    v = -gain * (ee_vec[3:] - target_vec[3:])
    Re = from_vector(ee_vec).rotation
    Rt = from_vector(target_vec).rotation
    w = -gain * so3_log(Re @ Rt.T)
    if mask is not None:
        w = w * mask
    return VelocityCommand(v, w)


def stage_law3(
    e: TaskError25D,
    cfg: ControllerConfig,
    calib_wrist: Pose,
    ref: ReferencePoint,
    ee_pose: Pose,
    mask=None,
) -> VelocityCommand:
    """2 1/2 D law: rotation decoupled, translation compensating rotation-induced motion.

    With ``q = rho m`` the reference point's current position over Z*, the
    camera twist ``w_c = -lambdaR theta u`` and ``v_c = Z* (lambdaT e_ext - w_c x q)``
    give ``de/dt = -lambda e`` for both error blocks.
    """
    z_star = ref.z_star
    if e.rho * z_star < 1e-3:
        raise DegenerateDepth(f"rho * Z* = {e.rho * z_star:.2e} m")
    cam = ee_pose @ calib_wrist
    Rrc = cam.rotation
    w_c = -cfg.lambdaR * e.rotational
    w_r = Rrc @ w_c
    if mask is not None:
        w_r = w_r * mask
        w_c = Rrc.T @ w_r
    q = e.extended + ref.m_star
    v_c = z_star * (cfg.lambdaT * e.extended - np.cross(w_c, q))
    lever = ee_pose.rotation @ calib_wrist.translation
    v_r = Rrc @ v_c - np.cross(w_r, lever)
    return VelocityCommand(v_r, w_r, v_c, w_c)


@dataclass(frozen=True)
class Telemetry:
    match_count: int = 0
    variance: np.ndarray = field(default_factory=lambda: np.full(6, np.inf))
    posterior_deltas: tuple = ()  # ((trans m, rot rad), ...) most recent last
    task_error_norms: tuple = ()
    displacement_flag: bool = False


def _held(history, hold: int, ok) -> bool:
    return len(history) >= hold and all(ok(h) for h in history[-hold:])


def check_transition(phase: Phase, tel: Telemetry, cfg: ControllerConfig) -> Phase:
    if tel.displacement_flag:
        return Phase.REINIT
    if phase == Phase.REINIT:
        return Phase.STAGE1
    if phase == Phase.STAGE1:
        if tel.match_count >= cfg.matchCountThresh and np.all(np.asarray(tel.variance) < np.asarray(cfg.varianceThresh)):
            return Phase.STAGE2
    elif phase == Phase.STAGE2:
        if _held(tel.posterior_deltas, cfg.overlapHoldSteps,
                 lambda d: d[0] < cfg.overlapDeltaThreshT and d[1] < cfg.overlapDeltaThreshR):
            return Phase.STAGE3
    elif phase == Phase.STAGE3:
        if _held(tel.task_error_norms, cfg.overlapHoldSteps, lambda n: n < cfg.convergenceThresh):
            return Phase.CONVERGED
    return phase


def bidirectional_active(phase: Phase, task_error_norm: float | None, cfg: ControllerConfig) -> bool:
    return phase == Phase.STAGE3 and task_error_norm is not None and task_error_norm < cfg.bidirFilterThresh


@dataclass(frozen=True)
class DemoRecord:
    """What the demonstration leaves behind for the controller."""

    wrist_obs: FeatureObservations
    global_obs: FeatureObservations
    demo_bottleneck: Pose
    global_cloud: np.ndarray | None = None


def record_demo(world: WorldState, scene: Scene, global_noise: NoiseModel = GLOBAL_NOISE, seed: int = 0) -> DemoRecord:
    demo = demo_world(world)
    view = scene.demo_view()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xDE30]))
    cloud = segmented_cloud(demo, scene.glob, view, global_noise.depthSigmaRel, rng)
    return DemoRecord(observe(demo, scene.wrist, view), observe(demo, scene.glob, view), world.demo_bottleneck, cloud)


@dataclass(frozen=True)
class EstimatorConfig:
    ransac: RansacConfig = RansacConfig()
    prior: PriorConfig = PriorConfig()
    homography: HomographyConfig = HomographyConfig()


@dataclass
class EpisodeResult:
    success: bool
    converged: bool
    final_err_t: float
    final_err_r: float
    steps: int
    stage_steps: dict
    reinits: int
    arm: str
    seed: int
    failure: str | None
    final_pose: Pose
    truth_pose: Pose
    estimated_bottleneck: Pose | None
    trace: list

    def trace_json(self) -> dict:
        return {
            "seed": self.seed,
            "arm": self.arm,
            "success": self.success,
            "converged": self.converged,
            "failure": self.failure,
            "finalEePose": self.final_pose.to_dict(),
            "truthBottleneck": self.truth_pose.to_dict(),
            "estimatedBottleneck": None if self.estimated_bottleneck is None else self.estimated_bottleneck.to_dict(),
            "steps": self.trace,
        }


def _step_seed(seed: int, k: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(k), int(stream)])


class ThreeStageServo:
    """One controller instance per episode."""

    def __init__(
        self,
        scene: Scene,
        demo: DemoRecord,
        cfg: ControllerConfig = ControllerConfig(),
        fusion: FusionConfig = FusionConfig(),
        est: EstimatorConfig = EstimatorConfig(),
        noise: NoiseModel = NoiseModel(),
        global_noise: NoiseModel = GLOBAL_NOISE,
        noise_scale: float = 1.0,
        dof_mode: str = "4dof",
        arm: str = "full",
        seed: int = 0,
    ):
        if arm not in _GRAMMAR:
            raise ValueError(f"unknown arm {arm!r}")
        self.scene, self.demo, self.cfg, self.fusion, self.est = scene, demo, cfg, fusion, est
        self.noise, self.global_noise, self.noise_scale = noise, global_noise, noise_scale
        self.mask = dof_mask(dof_mode)
        self.arm = arm
        self.seed = seed
        self.calib_wrist = scene.wrist.calib_extrinsic
        self.calib_global = scene.glob.calib_extrinsic
        self.demo_mask_ids = demo.wrist_obs.mask_ids()
        self.phase = Phase.STAGE1
        self._reset()

    def _reset(self) -> None:
        self.prior: np.ndarray | None = None
        self.belief: BeliefState | None = None
        self.window = VarianceWindow(self.fusion.window)
        self.post_deltas: list = []
        self.err_norms: list = []
        self.settle: list = []
        self.ref: ReferencePoint | None = None
        self.prev_solution: HomographySolution | None = None
        self.last_err_norm: float | None = None

    # sensing -----------------------------------------------------------------

    def _wrist_matches(self, world: WorldState, k: int, bidirectional: bool):
        rig = self.scene.wrist
        cur = observe(world, rig, self.scene)
        true_bn_cam = world.optimal_bottleneck @ rig.true_extrinsic
        rel = true_bn_cam.inverse() @ rig.camera_pose(world.ee_pose)
        offset = (float(np.linalg.norm(rel.translation)), rel.angle())
        m = generate_matches(self.demo.wrist_obs, cur, self.noise, _step_seed(self.seed, k, 1),
                             offset=offset, scale=self.noise_scale, bias_seed=self.seed)
        side = "bidirectional" if bidirectional else "unidirectional"
        return filter_mask(m, side, self.demo_mask_ids, cur.mask_ids())

    def _wrist_estimate(self, world: WorldState, k: int):
        m = self._wrist_matches(world, k, False)
        count = int(np.sum(m.weight >= self.cfg.confidentWeight))
        try:
            fit = robust_kabsch(m, self.scene.wrist.intrinsics, self.scene.wrist.intrinsics,
                                self.est.ransac, _step_seed(self.seed, k, 2))
            x = wrist_measurement(fit.pose, world.ee_pose, self.calib_wrist)
        except ServoError:
            return count, None, None
        return count, x, self.fusion.meas_cov(int(fit.inliers.sum()), fit.rms)

    def query_prior(self, world: WorldState, k: int) -> np.ndarray:
        rig = self.scene.glob
        cur = observe(world, rig, self.scene)
        obj_delta = world.object_pose @ world.object_pose_demo.inverse()
        offset = (float(np.linalg.norm(obj_delta.translation)), obj_delta.angle())
        m = generate_matches(self.demo.global_obs, cur, self.global_noise, _step_seed(self.seed, k, 3),
                             offset=offset, scale=self.noise_scale, bias_seed=self.seed + 7919)
        m = filter_mask(m, "bidirectional", self.demo.global_obs.mask_ids(), cur.mask_ids())
        cloud = segmented_cloud(world, rig, self.scene, self.global_noise.depthSigmaRel,
                                np.random.default_rng(_step_seed(self.seed, k, 6)))
        return global_prior(m, rig.intrinsics, self.calib_global, self.demo.demo_bottleneck,
                            self.est.prior, _step_seed(self.seed, k, 4), self.demo.global_cloud, cloud)

    # control -----------------------------------------------------------------

    def step(self, world: WorldState, k: int):
        """Advance one control period; returns (command, trace record)."""
        cfg = self.cfg
        rec = {"k": k, "estimates": {}, "taskError": None,
               "filtersActive": {"unidirectional": False, "bidirectional": False}, "matchCount": None}
        ee_vec = to_vector(world.ee_pose)

        if world.displacement_flag:
            self.phase = check_transition(self.phase, Telemetry(displacement_flag=True), cfg)
            self._reset()
            rec["phase"] = self.phase.value
            return VelocityCommand.zero(), rec

        if self.phase == Phase.REINIT:
            try:
                self.prior = self.query_prior(world, k)
            except PriorUnavailable:
                rec["phase"] = self.phase.value
                return VelocityCommand.zero(), rec
            self.phase = check_transition(self.phase, Telemetry(), cfg)

        if self.prior is None:
            self.prior = self.query_prior(world, k)
        rec["phase"] = self.phase.value
        rec["estimates"]["prior"] = self.prior.tolist()
        cmd = VelocityCommand.zero()

        if self.phase == Phase.STAGE1:
            cmd = stage_law12(ee_vec, self.prior, cfg.lambda1, self.mask)
            if self.arm == "openloop":
                self._settle(cmd, cfg.lambda1)
            else:
                count, x, _ = self._wrist_estimate(world, k)
                rec["filtersActive"]["unidirectional"] = True
                rec["matchCount"] = count
                if x is not None:
                    push_variance(self.window, x)
                    rec["estimates"]["measurement"] = x.tolist()
                tel = Telemetry(match_count=count, variance=self.window.variance)
                self.phase = check_transition(self.phase, tel, cfg)
                if self.phase == Phase.STAGE2:
                    self.belief = ukf_init(self.prior, self.fusion.prior_cov())

        elif self.phase == Phase.STAGE2:
            count, x, R = self._wrist_estimate(world, k)
            rec["filtersActive"]["unidirectional"] = True
            rec["matchCount"] = count
            if x is not None:
                rec["estimates"]["measurement"] = x.tolist()
                try:
                    self.belief = ukf_step(self.belief, x, R, self.fusion.process_cov(), self.fusion.ukf)
                except ServoError:
                    pass
            post = self.belief.mean
            rec["estimates"]["posterior"] = post.tolist()
            cmd = stage_law12(ee_vec, post, cfg.lambda2, self.mask)
            post_pose = from_vector(post)
            d = (world.ee_pose @ self.calib_wrist).inverse() @ post_pose @ self.calib_wrist
            self.post_deltas.append((float(np.linalg.norm(d.translation)), d.angle()))
            if self.arm == "stage2":
                self._settle(cmd, cfg.lambda2)
            else:
                self.phase = check_transition(self.phase, Telemetry(posterior_deltas=tuple(self.post_deltas)), cfg)

        elif self.phase == Phase.STAGE3:
            cmd = self._stage3(world, k, rec)

        return cmd, rec

    def _settle(self, cmd: VelocityCommand, gain: float) -> None:
        # the reachable part of the error is what the command is driving to zero
        self.settle.append((np.linalg.norm(cmd.v) / gain, np.linalg.norm(cmd.w) / gain))
        if _held(self.settle, self.cfg.overlapHoldSteps,
                 lambda d: d[0] < self.cfg.settleThreshT and d[1] < self.cfg.settleThreshR):
            self.phase = Phase.CONVERGED

    def _stage3(self, world: WorldState, k: int, rec: dict) -> VelocityCommand:
        cfg = self.cfg
        bidir = bidirectional_active(self.phase, self.last_err_norm, cfg)
        rec["filtersActive"] = {"unidirectional": True, "bidirectional": bidir}
        m = self._wrist_matches(world, k, bidir)
        rec["matchCount"] = int(np.sum(m.weight >= cfg.confidentWeight))
        intr = self.scene.wrist.intrinsics
        try:
            H, inl = estimate_homography(m, intr, self.est.homography, _step_seed(self.seed, k, 5))
            sols = decompose_homography(H, intr.normalize(m.pix_a[inl]))
            sol = select_solution(sols, self.prev_solution)
            e, self.ref = build_task_error(H, m, inl, intr, sol, self.ref)
            cmd = stage_law3(e, cfg, self.calib_wrist, self.ref, world.ee_pose, self.mask)
        except ServoError:
            return VelocityCommand.zero()
        except np.linalg.LinAlgError:
            return VelocityCommand.zero()
        self.prev_solution = sol
        n = e.norm() if self.mask[0] else self._norm_4dof(world, e)
        self.last_err_norm = n
        self.err_norms.append(n)
        rec["taskError"] = e.vector.tolist()
        self.phase = check_transition(self.phase, Telemetry(task_error_norms=tuple(self.err_norms)), cfg)
        return cmd

    def _norm_4dof(self, world: WorldState, e: TaskError25D) -> float:
        # only the rotation about the robot z-axis is regulated in 4-DoF mode
        z_cam = (world.ee_pose @ self.calib_wrist).rotation.T @ np.array([0.0, 0.0, 1.0])
        return float(np.linalg.norm(np.concatenate([e.extended, [e.rotational @ z_cam]])))


def run_episode(
    world: WorldState,
    scenario: Scenario,
    scene: Scene,
    cfg: ControllerConfig = ControllerConfig(),
    *,
    fusion: FusionConfig = FusionConfig(),
    est: EstimatorConfig = EstimatorConfig(),
    noise: NoiseModel = NoiseModel(),
    global_noise: NoiseModel = GLOBAL_NOISE,
    arm: str = "full",
    displacement: tuple[int, Pose] | None = None,
    limits: RobotLimits = RobotLimits(),
    keep_trace: bool = True,
) -> EpisodeResult:
    """Run the closed loop at the control rate until convergence or the step budget."""
    demo = record_demo(world, scene, global_noise, scenario.seed)
    ctrl = ThreeStageServo(scene, demo, cfg, fusion, est, noise, global_noise,
                           scenario.matcherNoiseScale, scenario.dofMode, arm, scenario.seed)
    trace: list = []
    phases: list = []
    failure = None
    for k in range(cfg.stepBudget):
        if displacement is not None and k == displacement[0]:
            world = displace_object(world, displacement[1])
        cmd, rec = ctrl.step(world, k)
        phases.append(rec["phase"])
        if world.displacement_flag:
            world = replace(world, displacement_flag=False)
        if keep_trace:
            rec["eePose"] = to_vector(world.ee_pose).tolist()
            rec["command"] = cmd.as_list()
        if ctrl.phase == Phase.CONVERGED:
            if keep_trace:
                rec["phase"] = Phase.CONVERGED.value
                trace.append(rec)
            phases[-1] = Phase.CONVERGED.value
            break
        world = step_robot(world, cmd.v, cmd.w, cfg.dt, limits)
        if keep_trace:
            rec["saturated"] = world.saturated
            trace.append(rec)
    else:
        failure = "StepBudgetExceeded"

    truth = world.optimal_bottleneck
    et, er = pose_error(world.ee_pose, truth)
    converged = ctrl.phase == Phase.CONVERGED
    success = converged and et <= cfg.successThreshT and er <= cfg.successThreshR
    if converged and not success:
        failure = "ConvergedOutsideTolerance"
    stage_steps = {p.value: phases.count(p.value) for p in (Phase.STAGE1, Phase.STAGE2, Phase.STAGE3)}
    reinits = sum(1 for a, b in zip([None] + phases, phases) if b == Phase.REINIT.value and a != b)
    est_b = world.ee_pose if converged else None
    return EpisodeResult(success, converged, et, er, len(phases), stage_steps, reinits, arm, scenario.seed,
                         failure, world.ee_pose, truth, est_b, trace)
