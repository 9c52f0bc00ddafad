"""Dual-arm coordination: primitive-labelled demonstrations, bottleneck-relative
adaptation, rearrange planning, trapezoidal timing and kinematic execution."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSegment, OutOfWorkspace, PreconditionViolated
from .geometry import Pose, pose_error, rot_z, so3_exp, so3_log


class Primitive(str, enum.Enum):
    ACT = "Act"
    STABILIZE = "Stabilize"
    REARRANGE = "Rearrange"


class Paradigm(str, enum.Enum):
    ACT_ACT = "ActAct"
    STABILIZE_ACT = "StabilizeAct"
    REARRANGE_ACT = "RearrangeAct"
    REARRANGE_REARRANGE = "RearrangeRearrange"


OPEN, CLOSED = "open", "closed"


@dataclass(frozen=True)
class Waypoint:
    t: float
    pose: Pose
    gripper: str = OPEN

    def to_dict(self) -> dict:
        return {"t": self.t, "pose": self.pose.to_dict(), "gripper": self.gripper}

    @classmethod
    def from_dict(cls, d: dict) -> "Waypoint":
        return cls(float(d["t"]), Pose.from_dict(d["pose"]), d["gripper"])


@dataclass(frozen=True)
class Segment:
    arm: int
    primitive: Primitive
    start: int
    stop: int  # exclusive

    def to_dict(self) -> dict:
        return {"arm": self.arm, "primitive": self.primitive.value, "start": self.start, "stop": self.stop}

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        return cls(int(d["arm"]), Primitive(d["primitive"]), int(d["start"]), int(d["stop"]))


@dataclass(frozen=True)
class DemoTrajectory:
    """One demonstration at EE-pose level.

    ``grasp`` is the object-frame EE pose used for grasping (T_O^E); the
    Rearrange and Stabilize primitives store a single target EE pose each.
    """

    per_arm: tuple
    segments: tuple
    paradigm: Paradigm
    bottleneck: Pose
    object_pose: Pose
    grasp: Pose | None = None

    def __post_init__(self):
        if len(self.per_arm) != 2:
            raise ValueError("a demonstration has exactly two arms")
        for arm, wps in enumerate(self.per_arm):
            ts = np.array([w.t for w in wps])
            if len(ts) and np.any(np.diff(ts) <= 0):
                raise ValueError(f"arm {arm}: timestamps must be strictly increasing")
            segs = sorted((s for s in self.segments if s.arm == arm), key=lambda s: s.start)
            pos = 0
            for s in segs:
                if s.start != pos or s.stop <= s.start:
                    raise ValueError(f"arm {arm}: segments must be disjoint and cover every waypoint")
                if s.primitive != Primitive.ACT and s.stop - s.start != 1:
                    raise ValueError(f"arm {arm}: {s.primitive.value} stores a single target pose")
                pos = s.stop
            if pos != len(wps):
                raise ValueError(f"arm {arm}: segments must be disjoint and cover every waypoint")

    def waypoints(self, seg: Segment) -> list:
        return list(self.per_arm[seg.arm][seg.start:seg.stop])

    def to_dict(self) -> dict:
        return {
            "paradigm": self.paradigm.value,
            "perArm": [[w.to_dict() for w in wps] for wps in self.per_arm],
            "segments": [s.to_dict() for s in self.segments],
            "bottleneck": self.bottleneck.to_dict(),
            "objectPose": self.object_pose.to_dict(),
            "grasp": None if self.grasp is None else self.grasp.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DemoTrajectory":
        return cls(
            per_arm=tuple(tuple(Waypoint.from_dict(w) for w in wps) for wps in d["perArm"]),
            segments=tuple(Segment.from_dict(s) for s in d["segments"]),
            paradigm=Paradigm(d["paradigm"]),
            bottleneck=Pose.from_dict(d["bottleneck"]),
            object_pose=Pose.from_dict(d["objectPose"]),
            grasp=None if d.get("grasp") is None else Pose.from_dict(d["grasp"]),
        )


def save_demo(demo: DemoTrajectory, path) -> None:
    Path(path).write_text(json.dumps(demo.to_dict(), indent=1))


def load_demo(path) -> DemoTrajectory:
    return DemoTrajectory.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# paradigms

@dataclass(frozen=True)
class CoordinationPlan:
    """Phases run in order with a barrier between them; segments inside a phase run in parallel.

    ``holding`` lists, per phase, arms that keep a Stabilize grip while the phase runs.
    """

    paradigm: Paradigm
    phases: tuple  # tuple of tuples of Segment
    holding: tuple  # tuple of tuples of arm ids


def make_plan(demo: DemoTrajectory) -> CoordinationPlan:
    by_prim = {p: [s for s in demo.segments if s.primitive == p] for p in Primitive}
    acts, stabs, rearr = by_prim[Primitive.ACT], by_prim[Primitive.STABILIZE], by_prim[Primitive.REARRANGE]
    par = demo.paradigm
    if par == Paradigm.ACT_ACT:
        phases, holding = (tuple(acts),), ((),)
    elif par == Paradigm.STABILIZE_ACT:
        phases = (tuple(stabs), tuple(acts))
        holding = ((), tuple(s.arm for s in stabs))
    elif par == Paradigm.REARRANGE_ACT:
        phases, holding = (tuple(rearr), tuple(acts)), ((), ())
    else:
        phases, holding = (tuple(rearr), tuple(acts)), ((), ())
    plan = CoordinationPlan(par, phases, holding)
    if not check_paradigm(plan):
        raise ValueError(f"demonstration segments do not fit the {par.value} pattern")
    return plan


def check_paradigm(plan: CoordinationPlan) -> bool:
    """Segment pattern of each paradigm: which primitives, on which arms, in which order."""
    sig = [sorted((s.primitive.value, s.arm) for s in ph) for ph in plan.phases]
    prims = [[p for p, _ in ph] for ph in sig]
    arms = [{a for _, a in ph} for ph in sig]
    par = plan.paradigm
    if par == Paradigm.ACT_ACT:
        return prims == [["Act", "Act"]] and arms == [{0, 1}]
    if par == Paradigm.STABILIZE_ACT:
        return (prims == [["Stabilize"], ["Act"]] and arms[0].isdisjoint(arms[1])
                and set(plan.holding[1]) == arms[0])
    if par == Paradigm.REARRANGE_ACT:
        return prims[0] == ["Rearrange"] and len(prims) == 2 and set(prims[1]) == {"Act"} and len(prims[1]) >= 1
    return prims[0] == ["Rearrange", "Rearrange"] and arms[0] == {0, 1} and len(prims) == 2 and set(prims[1]) == {"Act"}


# ---------------------------------------------------------------------------
# adaptation

def delta_object_transform(demo_bottleneck: Pose, test_bottleneck: Pose) -> Pose:
    """Object displacement implied by the bottleneck moving from B to B'."""
    return test_bottleneck @ demo_bottleneck.inverse()


@dataclass(frozen=True)
class CoordinatedTrajectory:
    times: tuple  # per arm, (N,) arrays on a common grid
    poses: tuple  # per arm, list of Pose
    gripper: tuple  # per arm, list of str
    bottleneck_ref: Pose
    barriers: tuple = ()

    def arm_waypoints(self, arm: int) -> list:
        return [Waypoint(float(t), p, g) for t, p, g in zip(self.times[arm], self.poses[arm], self.gripper[arm])]


def adapt_cartesian(traj: CoordinatedTrajectory, delta: Pose) -> CoordinatedTrajectory:
    return CoordinatedTrajectory(
        times=traj.times,
        poses=tuple([delta @ p for p in poses] for poses in traj.poses),
        gripper=traj.gripper,
        bottleneck_ref=delta @ traj.bottleneck_ref,
        barriers=traj.barriers,
    )


def adapt_waypoints(wps: list, delta: Pose) -> list:
    return [Waypoint(w.t, delta @ w.pose, w.gripper) for w in wps]


@dataclass(frozen=True)
class RearrangeConfig:
    liftHeight: float = 0.10
    workspaceMin: tuple = (-0.7, -0.7, -0.05)
    workspaceMax: tuple = (0.7, 0.7, 0.7)


@dataclass(frozen=True)
class RearrangePlan:
    waypoints: list  # (Pose, gripper) pairs
    noop: bool


def plan_rearrange(current_obj: Pose, demo_obj: Pose, grasp: Pose, cfg: RearrangeConfig = RearrangeConfig()) -> RearrangePlan:
    """Pick at the current object pose, lift, transport, lower and release at the demo pose."""
    lo, hi = np.array(cfg.workspaceMin), np.array(cfg.workspaceMax)
    pick = current_obj @ grasp
    place = demo_obj @ grasp
    up = Pose.from_rt(np.eye(3), [0.0, 0.0, cfg.liftHeight])
    if current_obj.allclose(demo_obj, atol=1e-12):
        wps = [(pick, CLOSED), (pick, OPEN)]
        noop = True
    else:
        wps = [(pick, OPEN), (pick, CLOSED), (up @ pick, CLOSED), (up @ place, CLOSED), (place, CLOSED), (place, OPEN)]
        noop = False
    for p, _ in wps:
        if np.any(p.translation < lo) or np.any(p.translation > hi):
            raise OutOfWorkspace(f"waypoint {p.translation} outside workspace")
    return RearrangePlan(wps, noop)


# ---------------------------------------------------------------------------
# timing

@dataclass(frozen=True)
class MotionLimits:
    vMax: float = 0.25
    aMax: float = 0.5
    wMax: float = 1.0
    alphaMax: float = 2.0
    minDwell: float = 0.2
    sampleDt: float = 0.01

    def __post_init__(self):
        if min(self.vMax, self.aMax, self.wMax, self.alphaMax, self.sampleDt) <= 0 or self.minDwell < 0:
            raise ValueError("limits must be positive")


def trapezoid_duration(dist: float, v: float, a: float) -> float:
    if dist <= 0:
        return 0.0
    if dist >= v * v / a:
        return dist / v + v / a
    return 2.0 * np.sqrt(dist / a)


def _trapezoid_s(t: np.ndarray, T: float, v: float, a: float) -> np.ndarray:
    """Normalised path position for a trapezoid over unit length with limits v, a."""
    ta = min(v / a, T / 2)
    vp = a * ta
    s = np.where(
        t < ta, 0.5 * a * t**2,
        np.where(t < T - ta, 0.5 * a * ta**2 + vp * (t - ta), 1.0 - 0.5 * a * np.clip(T - t, 0, None) ** 2),
    )
    return np.clip(s, 0.0, 1.0)


@dataclass(frozen=True)
class TimedSegment:
    start: Pose
    end: Pose
    duration: float
    v_s: float  # peak rate along the normalised path (1/s); 0 for a dwell
    a_s: float
    gripper: str  # gripper command that fires on arrival at ``end``

    @property
    def dwell(self) -> bool:
        return self.v_s == 0

    @property
    def peak_speed(self) -> float:
        d = float(np.linalg.norm(self.end.translation - self.start.translation))
        return d * min(self.v_s, self.a_s * self.duration / 2)

    def pose_at(self, tau: float) -> Pose:
        if self.dwell or tau <= 0:
            return self.start if tau < self.duration or self.dwell and tau < self.duration else self.end
        if tau >= self.duration:
            return self.end
        s = float(_trapezoid_s(np.array(tau), self.duration, self.v_s, self.a_s))
        dr = so3_log(self.end.rotation @ self.start.rotation.T)
        return Pose(so3_exp(s * dr) @ self.start.rotation,
                    self.start.translation + s * (self.end.translation - self.start.translation))

    def stretched(self, duration: float) -> "TimedSegment":
        """Same limits, longer duration: lower the cruise rate (never raises any rate)."""
        if duration < self.duration - 1e-12:
            raise ValueError("a segment can only be stretched")
        if self.dwell:
            return TimedSegment(self.start, self.end, duration, 0.0, 0.0, self.gripper)
        a = self.a_s
        disc = max(a * a * duration * duration - 4 * a, 0.0)
        v = 0.5 * (a * duration - np.sqrt(disc))
        return TimedSegment(self.start, self.end, duration, min(v, self.v_s), a, self.gripper)


def time_segment(start: Pose, end: Pose, limits: MotionLimits, gripper: str = OPEN) -> TimedSegment:
    """Synchronised translation/rotation trapezoid; a zero-length move becomes a dwell."""
    d = float(np.linalg.norm(end.translation - start.translation))
    phi = (start.inverse() @ end).angle()
    if d < 1e-12 and phi < 1e-12:
        return TimedSegment(start, end, limits.minDwell, 0.0, 0.0, gripper)
    v_s = min(limits.vMax / d if d > 0 else np.inf, limits.wMax / phi if phi > 0 else np.inf)
    a_s = min(limits.aMax / d if d > 0 else np.inf, limits.alphaMax / phi if phi > 0 else np.inf)
    return TimedSegment(start, end, trapezoid_duration(1.0, v_s, a_s), v_s, a_s, gripper)


def _steps(duration: float, dt: float) -> int:
    return max(int(np.ceil(duration / dt - 1e-9)), 1)


def _as_pair(w):
    if isinstance(w, Pose):
        return w, None
    if isinstance(w, Waypoint):
        return w.pose, w.gripper
    return w


def _timed_chain(waypoints: list, limits: MotionLimits, start_gripper: str) -> list:
    """Timed segments whose durations are whole numbers of samples."""
    pairs = [_as_pair(w) for w in waypoints]
    segs = []
    grip = pairs[0][1] or start_gripper
    for (p0, _), (p1, g1) in zip(pairs[:-1], pairs[1:]):
        g = g1 or grip
        seg = time_segment(p0, p1, limits, g)
        segs.append(seg.stretched(_steps(seg.duration, limits.sampleDt) * limits.sampleDt))
        grip = g
    return segs


def _sample_chain(segs: list, dt: float, start_gripper: str):
    """Uniform samples; each segment's first sample is the previous arrival, where its gripper event fires."""
    poses, grip = [], []
    prev = start_gripper
    for seg in segs:
        for j in range(int(round(seg.duration / dt))):
            poses.append(seg.pose_at(j * dt))
            grip.append(prev)
        prev = seg.gripper
    poses.append(segs[-1].end)
    grip.append(prev)
    return np.arange(len(poses)) * dt, poses, grip


def time_parameterize(waypoints: list, limits: MotionLimits = MotionLimits(), start_gripper: str = OPEN) -> CoordinatedTrajectory:
    """Single-arm trapezoidal timing through a pose (or (pose, gripper)) sequence."""
    if len(waypoints) < 2:
        raise DegenerateSegment("time parametrisation needs at least two waypoints")
    segs = _timed_chain(waypoints, limits, start_gripper)
    times, poses, grip = _sample_chain(segs, limits.sampleDt, start_gripper)
    return CoordinatedTrajectory((times,), (poses,), (grip,), poses[0])


def time_parameterize_plan(arm_phases: list, start_poses: tuple, limits: MotionLimits = MotionLimits(),
                           start_grippers: tuple = (OPEN, OPEN), bottleneck_ref: Pose | None = None) -> CoordinatedTrajectory:
    """Two-arm timing with a barrier after every phase.

    ``arm_phases[k][arm]`` is the waypoint list for that arm in phase k (may be
    empty: the arm holds). Both arms reach each barrier before either proceeds.
    """
    dt = limits.sampleDt
    chains: tuple = ([], [])
    cur = list(start_poses)
    grips = list(start_grippers)
    barriers = []
    total = 0
    for phase in arm_phases:
        phase_chains = [
            _timed_chain([(cur[arm], grips[arm])] + list(phase[arm]), limits, grips[arm]) if phase[arm] else []
            for arm in (0, 1)
        ]
        n = max(sum(int(round(s.duration / dt)) for s in c) for c in phase_chains)
        for arm in (0, 1):
            segs = phase_chains[arm]
            held = n - sum(int(round(s.duration / dt)) for s in segs)
            if segs:
                cur[arm], grips[arm] = segs[-1].end, segs[-1].gripper
            if held > 0:
                segs = segs + [TimedSegment(cur[arm], cur[arm], held * dt, 0.0, 0.0, grips[arm])]
            chains[arm].extend(segs)
        total += n
        barriers.append(total * dt)
    out_t, out_p, out_g = [], [], []
    for arm in (0, 1):
        if chains[arm]:
            t, p, g = _sample_chain(chains[arm], dt, start_grippers[arm])
        else:
            t = np.arange(total + 1) * dt
            p, g = [start_poses[arm]] * (total + 1), [start_grippers[arm]] * (total + 1)
        out_t.append(t)
        out_p.append(p)
        out_g.append(g)
    ref = bottleneck_ref if bottleneck_ref is not None else start_poses[0]
    return CoordinatedTrajectory(tuple(out_t), tuple(out_p), tuple(out_g), ref, tuple(barriers))


def finite_difference_rates(traj: CoordinatedTrajectory, arm: int = 0):
    """Max translational/rotational speed and acceleration from finite differences."""
    t = traj.times[arm]
    P = traj.poses[arm]
    if len(P) < 2:
        return 0.0, 0.0, 0.0, 0.0
    dt = np.diff(t)
    pos = np.array([p.translation for p in P])
    vv = np.diff(pos, axis=0) / dt[:, None]
    w_vec = np.array([so3_log(P[i + 1].rotation @ P[i].rotation.T) for i in range(len(P) - 1)]) / dt[:, None]
    v = np.linalg.norm(vv, axis=1)
    w = np.linalg.norm(w_vec, axis=1)
    if len(P) < 3:
        return float(v.max()), 0.0, float(w.max()), 0.0
    dtm = 0.5 * (dt[1:] + dt[:-1])
    a = np.linalg.norm(np.diff(vv, axis=0), axis=1) / dtm
    al = np.linalg.norm(np.diff(w_vec, axis=0), axis=1) / dtm
    return float(v.max()), float(a.max()), float(w.max()), float(al.max())


# ---------------------------------------------------------------------------
# execution

@dataclass(frozen=True)
class ExecConfig:
    attachRadius: float = 0.01
    successT: float = 0.005
    successR: float = float(np.deg2rad(1.0))
    limits: MotionLimits = MotionLimits()
    rearrange: RearrangeConfig = RearrangeConfig()


@dataclass
class DualArmState:
    ee: list
    object_pose: Pose
    attached: dict = field(default_factory=dict)  # arm -> EE-to-object offset
    grippers: list = field(default_factory=lambda: [OPEN, OPEN])


@dataclass
class ExecutionResult:
    success: bool
    rel_errors: list  # per arm (trans m, rot rad) against the demonstration
    final_relative: list  # per arm, EE^-1 * object at the end
    object_pose: Pose
    relative_trace: list
    mode: str


def simulate(state: DualArmState, traj: CoordinatedTrajectory, grasp: Pose | None, cfg: ExecConfig) -> tuple[DualArmState, list]:
    """Kinematic tracking of both arms' sample poses with grasp attachment."""
    n = max(len(traj.times[0]), len(traj.times[1]))
    trace = []
    for k in range(n):
        for arm in (0, 1):
            if k >= len(traj.poses[arm]):
                continue
            ee = traj.poses[arm][k]
            g = traj.gripper[arm][k]
            state.ee[arm] = ee
            if g == CLOSED and state.grippers[arm] == OPEN and grasp is not None and arm not in state.attached:
                target = state.object_pose @ grasp
                if np.linalg.norm(target.translation - ee.translation) <= cfg.attachRadius:
                    state.attached[arm] = ee.inverse() @ state.object_pose
            if g == OPEN and arm in state.attached:
                del state.attached[arm]
            state.grippers[arm] = g
        if state.attached:
            arm = min(state.attached)
            state.object_pose = state.ee[arm] @ state.attached[arm]
        trace.append([(state.ee[a].inverse() @ state.object_pose) for a in (0, 1)])
    return state, trace


def _phase_waypoints(demo: DemoTrajectory, plan: CoordinationPlan, delta: Pose | None, mode: str,
                     obj_estimate: Pose | None, cfg: ExecConfig) -> list:
    phases = []
    for ph in plan.phases:
        arm_wps = [[], []]
        for seg in ph:
            if seg.primitive == Primitive.REARRANGE:
                if obj_estimate is None:
                    raise PreconditionViolated("rearrange needs an object pose estimate")
                rp = plan_rearrange(obj_estimate, demo.object_pose, demo.grasp, cfg.rearrange)
                arm_wps[seg.arm].extend(rp.waypoints)
                continue
            wps = demo.waypoints(seg)
            if mode == "cartesianAdapted" and delta is not None:
                wps = adapt_waypoints(wps, delta)
            arm_wps[seg.arm].extend((w.pose, w.gripper) for w in wps)
        phases.append(arm_wps)
    return phases


def demo_relative_poses(demo: DemoTrajectory, cfg: ExecConfig = ExecConfig()) -> list:
    """Final EE-object relative poses from executing the demonstration as recorded."""
    plan = make_plan(demo)
    starts = tuple(demo.per_arm[a][0].pose for a in (0, 1))
    phases = _phase_waypoints(demo, plan, None, "jointReplay", demo.object_pose, cfg)
    traj = time_parameterize_plan(phases, starts, cfg.limits, bottleneck_ref=demo.bottleneck)
    state = DualArmState(list(starts), demo.object_pose)
    state, _ = simulate(state, traj, demo.grasp, cfg)
    return [state.ee[a].inverse() @ state.object_pose for a in (0, 1)]


def execute_plan(
    start_poses: tuple,
    object_pose: Pose,
    demo: DemoTrajectory,
    mode: str,
    delta: Pose | None = None,
    cfg: ExecConfig = ExecConfig(),
) -> ExecutionResult:
    """Build the timed dual-arm trajectory for ``mode`` and execute it kinematically.

    ``cartesianAdapted`` moves every demonstrated pose by ``delta``.
    ``jointReplay`` first runs any Rearrange phase (planned from the object
    estimate ``delta * demo object``), then replays the Act waypoints verbatim;
    the object must then sit at its demonstrated pose.
    """
    if mode not in ("cartesianAdapted", "jointReplay"):
        raise ValueError(f"unknown mode {mode!r}")
    plan = make_plan(demo)
    if mode == "cartesianAdapted" and plan.paradigm in (Paradigm.REARRANGE_ACT, Paradigm.REARRANGE_REARRANGE):
        raise ValueError("Rearrange paradigms restore the object and replay; use jointReplay")
    expected = demo_relative_poses(demo, cfg)
    state = DualArmState(list(start_poses), object_pose)
    trace: list = []
    obj_est = None if delta is None else delta @ demo.object_pose

    if mode == "jointReplay":
        rearr = [i for i, ph in enumerate(plan.phases) if any(s.primitive == Primitive.REARRANGE for s in ph)]
        if rearr:
            pre = CoordinationPlan(plan.paradigm, plan.phases[: rearr[-1] + 1], plan.holding[: rearr[-1] + 1])
            phases = _phase_waypoints(demo, pre, None, mode, obj_est if obj_est is not None else object_pose, cfg)
            traj = time_parameterize_plan(phases, tuple(state.ee), cfg.limits, tuple(state.grippers), demo.bottleneck)
            state, tr = simulate(state, traj, demo.grasp, cfg)
            trace += tr
            rest = CoordinationPlan(plan.paradigm, plan.phases[rearr[-1] + 1:], plan.holding[rearr[-1] + 1:])
        else:
            rest = plan
        dt, dr = pose_error(state.object_pose, demo.object_pose)
        if dt > cfg.successT or dr > cfg.successR:
            raise PreconditionViolated(f"object {dt * 1000:.1f} mm / {np.rad2deg(dr):.2f} deg from its demonstrated pose")
        phases = _phase_waypoints(demo, rest, None, mode, None, cfg)
    else:
        phases = _phase_waypoints(demo, plan, delta, mode, obj_est, cfg)

    ref = demo.bottleneck if delta is None or mode == "jointReplay" else delta @ demo.bottleneck
    traj = time_parameterize_plan(phases, tuple(state.ee), cfg.limits, tuple(state.grippers), ref)
    state, tr = simulate(state, traj, demo.grasp, cfg)
    trace += tr
    final = [state.ee[a].inverse() @ state.object_pose for a in (0, 1)]
    errs = [pose_error(f, e) for f, e in zip(final, expected)]
    success = all(t <= cfg.successT and r <= cfg.successR for t, r in errs)
    return ExecutionResult(success, errs, final, state.object_pose, trace, mode)


# ---------------------------------------------------------------------------
# example tasks

def _dense(a: Pose, b: Pose, n: int) -> list:
    dr = so3_log(b.rotation @ a.rotation.T)
    return [Pose(so3_exp(s * dr) @ a.rotation, a.translation + s * (b.translation - a.translation)) for s in np.linspace(0, 1, n)]


def make_demo_task(paradigm: Paradigm, object_pose: Pose, bottleneck: Pose, standoff: float = 0.15) -> DemoTrajectory:
    """A small labelled two-arm demonstration around a box object.

    Arm 0 is the servoing arm: its Act segment starts at the bottleneck and
    descends onto the object. Arm 1 acts beside it, holds the object, or
    rearranges it.
    """
    down = Pose.from_rt(np.eye(3), [0.0, 0.0, -standoff + 0.02])
    touch = bottleneck @ down
    act0 = _dense(bottleneck, touch, 8) + [Pose.from_rt(np.eye(3), [0.0, 0.0, 0.03]) @ touch]
    grasp = Pose.from_rt(rot_z(np.pi / 2), [0.0, 0.0, 0.0])  # top-down grasp across the short side
    side_grasp = object_pose @ grasp
    pre1 = Pose.from_rt(np.eye(3), [0.0, 0.0, 0.08]) @ side_grasp
    arm0 = [Waypoint(0.5 * i, p, OPEN) for i, p in enumerate(act0)]
    if paradigm == Paradigm.ACT_ACT:
        act1 = _dense(pre1, Pose.from_rt(np.eye(3), [0.05, 0.0, 0.0]) @ pre1, 6)
        arm1 = [Waypoint(0.5 * i, p, OPEN) for i, p in enumerate(act1)]
        segs = (Segment(0, Primitive.ACT, 0, len(arm0)), Segment(1, Primitive.ACT, 0, len(arm1)))
        return DemoTrajectory((tuple(arm0), tuple(arm1)), segs, paradigm, bottleneck, object_pose, grasp)
    if paradigm == Paradigm.STABILIZE_ACT:
        arm1 = [Waypoint(0.0, side_grasp, CLOSED)]
        segs = (Segment(1, Primitive.STABILIZE, 0, 1), Segment(0, Primitive.ACT, 0, len(arm0)))
        return DemoTrajectory((tuple(arm0), tuple(arm1)), segs, paradigm, bottleneck, object_pose, grasp)
    if paradigm == Paradigm.REARRANGE_ACT:
        arm1 = [Waypoint(0.0, side_grasp, OPEN)]
        segs = (Segment(1, Primitive.REARRANGE, 0, 1), Segment(0, Primitive.ACT, 0, len(arm0)))
        return DemoTrajectory((tuple(arm0), tuple(arm1)), segs, paradigm, bottleneck, object_pose, grasp)
    raise ValueError("the example task has one object; RearrangeRearrange needs two")
