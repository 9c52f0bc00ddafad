from dataclasses import replace

import numpy as np
import pytest

from bottleneck_servo.controller import (
    ControllerConfig, Phase, Telemetry, bidirectional_active, check_transition, dof_mask, legal_phase_sequence,
    run_episode, stage_law12, stage_law3,
)
from bottleneck_servo.errors import DegenerateDepth
from bottleneck_servo.estimation import (
    HomographySolution, build_task_error, decompose_homography, estimate_homography, select_solution,
)
from bottleneck_servo.estimation.homography import ReferencePoint, TaskError25D
from bottleneck_servo.geometry import Pose, pose_error, rot_z, so3_exp, to_vector
from bottleneck_servo.matching import NoiseModel, filter_mask, generate_matches
from bottleneck_servo.scene import (
    RobotLimits, ScenarioConfig, build_scene, demo_world, make_world, observe, sample_scenario, step_robot,
)

CFG = ControllerConfig()
FREE = RobotLimits(v_max=10.0, w_max=10.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(lambda1=0.0)
    with pytest.raises(ValueError):
        ControllerConfig(convergenceThresh=-1.0)
    assert CFG.dt == pytest.approx(0.1)
    assert ControllerConfig.from_dict({"lambdaT": 2.0, "varianceThresh": [1] * 6}).varianceThresh == (1,) * 6


def test_law12_examples():
    x = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    c = stage_law12(x, x, 1.0)
    assert np.allclose(c.v, 0) and np.allclose(c.w, 0)
    t = x.copy()
    t[3] -= 0.1
    c = stage_law12(x, t, 1.0)
    assert np.allclose(c.v, [-0.1, 0, 0]) and np.allclose(c.w, 0)


def test_law12_mask_blocks_roll_pitch():
    c = stage_law12([0.1, 0.1, 0.1, 0, 0, 0], np.zeros(6), 1.0, dof_mask("4dof"))
    assert c.w[0] == 0 and c.w[1] == 0 and c.w[2] < 0


def test_law12_closed_loop_decay():
    gain, dt = 0.8, 0.1
    target = np.array([0.05, -0.02, 0.4, 0.3, -0.1, 0.2])
    sc = sample_scenario(ScenarioConfig(), 0)
    world = make_world(sc, build_scene(sc))
    prev = np.inf
    for k in range(int(10 / (gain * dt))):
        ee = to_vector(world.ee_pose)
        et, er = pose_error(world.ee_pose, Pose(so3_exp(target[:3]), target[3:]))
        err = et + er
        assert err < prev
        prev = err
        c = stage_law12(ee, target, gain)
        world = step_robot(world, c.v, c.w, dt, FREE)
    et, _ = pose_error(world.ee_pose, Pose(so3_exp(target[:3]), target[3:]))
    assert et < 1e-3


def test_law3_examples():
    ref = ReferencePoint(np.array([0.0, 0.0, 1.0]), 0.15)
    mount = Pose.from_rt(np.eye(3), [0.02, 0, -0.02])
    e0 = TaskError25D(np.zeros(3), np.zeros(3), 1.0)
    c = stage_law3(e0, CFG, mount, ref, Pose.identity())
    assert np.allclose(c.v, 0) and np.allclose(c.w, 0)
    e = TaskError25D(np.zeros(3), np.array([0, 0, 0.2]), 1.0)
    c = stage_law3(e, CFG, mount, ref, Pose.identity())
    assert np.allclose(c.w_cam, [0, 0, -0.2])
    with pytest.raises(DegenerateDepth):
        stage_law3(TaskError25D(np.zeros(3), np.zeros(3), 0.001), CFG, mount, ref, Pose.identity())


def stage3_loop(offset: Pose, steps=60, dof="6dof"):
    """Noiseless stage-3 servoing from bottleneck-relative ``offset``; returns task-error norms."""
    sc = sample_scenario(ScenarioConfig(calibErrorScale=0.0, dofMode=dof), 1)
    scene = build_scene(sc)
    world = make_world(sc, scene)
    world = replace(world, ee_pose=world.optimal_bottleneck @ offset)
    demo = observe(demo_world(world), scene.wrist, scene.demo_view())
    top = scene.obj.ids[scene.obj.top_mask]
    intr = scene.wrist.intrinsics
    ref, prev, norms = None, None, []
    for k in range(steps):
        cur = observe(world, scene.wrist, scene)
        m = filter_mask(generate_matches(demo, cur, NoiseModel.zero(), k), "bidirectional", top, cur.mask_ids())
        H, inl = estimate_homography(m, intr, seed=k)
        sol = select_solution(decompose_homography(H, intr.normalize(m.pix_a[inl])), prev)
        e, ref = build_task_error(H, m, inl, intr, sol, ref)
        prev = sol
        norms.append(e.norm())
        c = stage_law3(e, CFG, scene.wrist.calib_extrinsic, ref, world.ee_pose, dof_mask(dof))
        world = step_robot(world, c.v, c.w, CFG.dt, FREE)
    return np.array(norms), world


def test_law3_noiseless_decay_rate():
    offset = Pose.from_rt(so3_exp(np.deg2rad(20) * np.array([0.3, -0.3, 0.9]) / np.linalg.norm([0.3, -0.3, 0.9])),
                          [0.03, -0.03, 0.028])
    norms, world = stage3_loop(offset)
    lam = min(CFG.lambdaT, CFG.lambdaR)
    assert np.all(norms[1:] <= (1 - 0.5 * lam * CFG.dt) * norms[:-1] + 1e-12)
    et, er = pose_error(world.ee_pose, world.optimal_bottleneck)
    assert et < 1e-3 and er < np.deg2rad(0.1)


def test_transition_rules():
    assert check_transition(Phase.STAGE1, Telemetry(match_count=0, variance=np.zeros(6)), CFG) == Phase.STAGE1
    assert check_transition(Phase.STAGE1, Telemetry(match_count=40, variance=np.full(6, 1e-9)), CFG) == Phase.STAGE2
    assert check_transition(Phase.STAGE1, Telemetry(match_count=40, variance=np.full(6, np.inf)), CFG) == Phase.STAGE1
    deltas = tuple([(0.01, np.deg2rad(2.0))] * 10)
    cfg = replace(CFG, overlapDeltaThreshT=0.02, overlapDeltaThreshR=np.deg2rad(5.0), overlapHoldSteps=10)
    assert check_transition(Phase.STAGE2, Telemetry(posterior_deltas=deltas), cfg) == Phase.STAGE3
    assert check_transition(Phase.STAGE2, Telemetry(posterior_deltas=deltas[:9]), cfg) == Phase.STAGE2
    broken = deltas[:5] + ((0.03, 0.0),) + deltas[:4]
    assert check_transition(Phase.STAGE2, Telemetry(posterior_deltas=broken), cfg) == Phase.STAGE2
    assert check_transition(Phase.STAGE3, Telemetry(task_error_norms=(0.001,) * 10), CFG) == Phase.CONVERGED
    for p in Phase:
        assert check_transition(p, Telemetry(displacement_flag=True), CFG) == Phase.REINIT
    assert check_transition(Phase.REINIT, Telemetry(), CFG) == Phase.STAGE1


def test_bidirectional_gate():
    assert bidirectional_active(Phase.STAGE3, 0.01, CFG)
    assert not bidirectional_active(Phase.STAGE3, 0.2, CFG)
    assert not bidirectional_active(Phase.STAGE2, 0.01, CFG)
    assert not bidirectional_active(Phase.STAGE3, None, CFG)


def test_phase_grammar():
    ok = ["Stage1"] * 3 + ["Stage2"] * 2 + ["Stage3"] * 4 + ["Converged"]
    assert legal_phase_sequence(ok)
    assert legal_phase_sequence(["Stage1", "Stage2", "Reinitializing", "Stage1", "Stage2"])
    assert not legal_phase_sequence(["Stage1", "Stage3"])
    assert not legal_phase_sequence(["Stage2", "Stage1"])
    assert not legal_phase_sequence(["Stage1", "Stage2", "Stage3", "Converged", "Stage1"])
    assert legal_phase_sequence(["Stage1", "Stage2", "Converged"], "stage2")
    assert not legal_phase_sequence(["Stage1", "Stage2", "Converged"], "full")
    assert legal_phase_sequence(["Stage1", "Converged"], "openloop")


def degenerate_episode(**kw):
    sc = sample_scenario(ScenarioConfig(calibErrorScale=0.0), 2)
    sc = replace(sc, objectDelta=Pose.identity())
    scene = build_scene(sc)
    world = make_world(sc, scene)
    cfg = ControllerConfig(convergenceThresh=1e-7)
    return run_episode(world, sc, scene, cfg, noise=NoiseModel.zero(), global_noise=NoiseModel.zero(), **kw)


def test_degenerate_episode_converges_exactly():
    res = degenerate_episode()
    assert res.converged and res.success
    assert res.final_err_t < 1e-6 and res.final_err_r < 1e-6
    assert res.stage_steps["Stage3"] > 0
    phases = [r["phase"] for r in res.trace]
    assert legal_phase_sequence(phases)
    # noiseless stage 3: the task error shrinks every step
    norms = [np.linalg.norm(r["taskError"]) for r in res.trace if r["phase"] == "Stage3" and r["taskError"]]
    assert np.all(np.diff(norms) < 0)


def test_episode_trace_schema_and_filters():
    sc = sample_scenario(ScenarioConfig(), 5)
    scene = build_scene(sc)
    res = run_episode(make_world(sc, scene), sc, scene)
    assert res.success
    prev_norm = None
    for r in res.trace:
        assert {"k", "phase", "eePose", "command", "estimates", "taskError", "filtersActive"} <= set(r)
        if r["filtersActive"]["bidirectional"]:
            # engaged only in stage 3, and only once the previous error was small
            assert r["phase"] in ("Stage3", "Converged")
            assert prev_norm is not None and prev_norm < CFG.bidirFilterThresh
        if r["taskError"] is not None:
            prev_norm = _norm4(r, scene)
    assert res.trace_json()["finalEePose"] == res.final_pose.to_dict()


def _norm4(rec, scene):
    from bottleneck_servo.geometry import from_vector

    e = np.asarray(rec["taskError"])
    cam = from_vector(rec["eePose"]) @ scene.wrist.calib_extrinsic
    z_cam = cam.rotation.T @ np.array([0.0, 0.0, 1.0])
    return float(np.linalg.norm(np.concatenate([e[:3], [e[3:] @ z_cam]])))


def test_episode_is_deterministic():
    sc = sample_scenario(ScenarioConfig(), 9)
    scene = build_scene(sc)
    a = run_episode(make_world(sc, scene), sc, scene)
    b = run_episode(make_world(sc, scene), sc, scene)
    assert a.trace == b.trace


def test_displacement_triggers_reinit():
    sc = sample_scenario(ScenarioConfig(), 4)
    scene = build_scene(sc)
    world = make_world(sc, scene)
    res = run_episode(world, sc, scene, displacement=(25, Pose.from_rt(rot_z(0.2), [0.03, 0.0, 0.0])))
    phases = [r["phase"] for r in res.trace]
    assert phases[25] == "Reinitializing" and res.reinits == 1
    assert legal_phase_sequence(phases)
    assert res.success
    assert res.truth_pose.allclose(world.optimal_bottleneck, 0.0) is False


def test_unknown_arm():
    sc = sample_scenario(ScenarioConfig(), 0)
    scene = build_scene(sc)
    with pytest.raises(ValueError):
        run_episode(make_world(sc, scene), sc, scene, arm="stage4")


def test_ablation_arms_follow_their_grammar():
    sc = sample_scenario(ScenarioConfig(), 1)
    scene = build_scene(sc)
    for arm in ("stage2", "openloop"):
        res = run_episode(make_world(sc, scene), sc, scene, arm=arm)
        phases = [r["phase"] for r in res.trace]
        assert legal_phase_sequence(phases, arm)
        assert "Stage3" not in phases
