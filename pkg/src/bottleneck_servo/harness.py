"""Benchmark protocols, the seeded episode suite, the trace audit and result emission."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ARMS, CONDITIONS, ExperimentConfig, displacement_pose
from .controller import Phase, run_episode
from .errors import ConfigError, InsufficientSamples, ServoError
from .estimation import RansacConfig, robust_kabsch, wrist_measurement
from .geometry import Pose, from_vector, pose_error, rot_z
from .matching import NoiseModel, filter_mask, generate_matches
from .scene import ScenarioConfig, build_scene, demo_world, make_world, observe, sample_scenario

# ---------------------------------------------------------------------------
# matcher metrics over the viewpoint grid

GRID_TRANS_M = (0.03, 0.06, 0.09, 0.12, 0.15)
GRID_ROT_DEG = (15.0, 30.0, 45.0, 60.0, 75.0)
CLOSE_TRANS_M = (0.03, 0.06)
CLOSE_ROT_DEG = (15.0, 30.0, 45.0)


def viewpoint_grid() -> list[tuple[float, float]]:
    """(translation m, rotation deg) offsets: the bottleneck itself plus a 5x5 grid."""
    return [(0.0, 0.0)] + [(t, r) for t in GRID_TRANS_M for r in GRID_ROT_DEG]


def is_close_region(vp) -> bool:
    t, r = vp
    return any(np.isclose(t, c) for c in CLOSE_TRANS_M) and any(np.isclose(r, c) for c in CLOSE_ROT_DEG)


def compute_bench_metrics(estimates: dict, ground_truth: dict) -> dict:
    """CV, ME, CRE and SSE from per-viewpoint bottleneck estimates.

    ``estimates`` maps a viewpoint key to a list of sample groups (one group
    per trial, each a list of Pose estimates); ``ground_truth`` maps the same
    key to one truth Pose per group. Viewpoint keys are (trans m, rot deg).
    CV is std/mean of the isotropic error within each group, averaged over
    groups and viewpoints; groups with zero mean error are skipped and
    flagged.
    """
    err_t: dict = {}
    err_r: dict = {}
    cvs_t, cvs_r = [], []
    cv_undefined = False
    for vp, groups in estimates.items():
        truths = ground_truth[vp]
        if len(groups) != len(truths):
            raise ValueError(f"viewpoint {vp}: {len(groups)} groups vs {len(truths)} truths")
        et_all, er_all = [], []
        for grp, truth in zip(groups, truths):
            if len(grp) < 2:
                raise InsufficientSamples(f"viewpoint {vp} has a group with {len(grp)} < 2 samples")
            e = np.array([pose_error(p, truth) for p in grp])
            et_all.extend(e[:, 0])
            er_all.extend(e[:, 1])
            for col, out in ((e[:, 0], cvs_t), (e[:, 1], cvs_r)):
                m = col.mean()
                if m > 0:
                    out.append(col.std(ddof=1) / m)
                else:
                    cv_undefined = True
        err_t[vp] = np.array(et_all)
        err_r[vp] = np.array(er_all)

    def region(sel):
        keys = [vp for vp in err_t if sel(vp)]
        if not keys:
            return np.nan, np.nan, np.nan, np.nan
        t = np.concatenate([err_t[k] for k in keys])
        r = np.concatenate([err_r[k] for k in keys])
        return float(t.mean()), float(t.std()), float(r.mean()), float(r.std())

    me = region(lambda vp: True)
    cre = region(is_close_region)
    sse = region(lambda vp: vp[0] == 0 and vp[1] == 0)
    return {
        "CV_t": float(np.mean(cvs_t)) if cvs_t else np.nan,
        "CV_r": float(np.mean(cvs_r)) if cvs_r else np.nan,
        "CV_undefined": cv_undefined and not (cvs_t or cvs_r),
        "ME_t_m": me[0], "ME_r_rad": me[2],
        "CRE_t_m": cre[0], "CRE_t_std_m": cre[1], "CRE_r_rad": cre[2], "CRE_r_std_rad": cre[3],
        "SSE_t_m": sse[0], "SSE_t_std_m": sse[1], "SSE_r_rad": sse[2], "SSE_r_std_rad": sse[3],
    }


def viewpoint_pose(bottleneck: Pose, pivot: np.ndarray, trans_m: float, rot_deg: float, rng) -> Pose:
    """EE pose offset from the bottleneck by a yaw about the object and a horizontal shift."""
    if trans_m == 0 and rot_deg == 0:
        return bottleneck
    yaw = np.deg2rad(rot_deg) * rng.choice([-1.0, 1.0])
    phi = rng.uniform(0, 2 * np.pi)
    shift = trans_m * np.array([np.cos(phi), np.sin(phi), 0.0])
    orbit = Pose.from_rt(np.eye(3), pivot) @ Pose.from_rt(rot_z(yaw), np.zeros(3)) @ Pose.from_rt(np.eye(3), -pivot)
    return Pose.from_rt(np.eye(3), shift) @ orbit @ bottleneck


def bench_samples(trials: int = 12, frames: int = 10, noise: NoiseModel = NoiseModel(), seed: int = 0,
                  ransac=None) -> tuple[dict, dict, int]:
    """Simulate the viewpoint-grid capture; returns (estimates, truths, failed fits).

    Each trial is one object/scene with its own static matcher bias; every
    frame at a viewpoint is an independent matcher call. Estimates are
    bottleneck poses recovered through the true wrist extrinsic, so they
    measure matcher error alone.
    """
    ransac = ransac or RansacConfig()
    estimates: dict = {vp: [] for vp in viewpoint_grid()}
    truths: dict = {vp: [] for vp in viewpoint_grid()}
    failed = 0
    for trial in range(trials):
        tseed = seed * 1000 + trial
        sc = sample_scenario(ScenarioConfig(seed=tseed, calibErrorScale=0.0), tseed)
        scene = build_scene(sc)
        world = make_world(sc, scene)
        demo = demo_world(world)
        bn_obs = observe(demo, scene.wrist, scene.demo_view())
        rng = np.random.default_rng(np.random.SeedSequence([tseed, 0xBE4C]))
        truth = world.optimal_bottleneck
        pivot = world.object_pose.translation
        mount = scene.wrist.true_extrinsic
        for vi, vp in enumerate(viewpoint_grid()):
            ee = viewpoint_pose(truth, pivot, vp[0], vp[1], rng)
            w = replace(world, ee_pose=ee)
            cur = observe(w, scene.wrist, scene)
            rel = (truth @ mount).inverse() @ (ee @ mount)
            offset = (float(np.linalg.norm(rel.translation)), rel.angle())
            grp = []
            for f in range(frames):
                ss = np.random.SeedSequence([tseed, vi, f])
                m = generate_matches(bn_obs, cur, noise, ss, offset=offset, bias_seed=tseed)
                m = filter_mask(m, "unidirectional", bn_obs.mask_ids())
                try:
                    fit = robust_kabsch(m, scene.wrist.intrinsics, scene.wrist.intrinsics, ransac, ss.spawn(1)[0])
                except ServoError:
                    failed += 1
                    continue
                grp.append(from_vector(wrist_measurement(fit.pose, ee, mount)))
            if len(grp) >= 2:
                estimates[vp].append(grp)
                truths[vp].append(truth)
    return estimates, truths, failed


def run_bench_metrics(trials: int = 12, frames: int = 10, noise: NoiseModel = NoiseModel(), seed: int = 0) -> dict:
    est, truth, failed = bench_samples(trials, frames, noise, seed)
    est = {k: v for k, v in est.items() if v}
    truth = {k: truth[k] for k in est}
    out = compute_bench_metrics(est, truth)
    out["failedFits"] = failed
    out["samples"] = trials * frames * len(viewpoint_grid())
    return out


def bench_rows(metrics: dict) -> list:
    """Metric rows in the units used for reporting (cm and degrees)."""
    rows = []
    for name in ("CV", "ME", "CRE", "SSE"):
        if name == "CV":
            rows.append({"metric": name, "translation": metrics["CV_t"], "rotation": metrics["CV_r"], "unit": "ratio"})
        else:
            rows.append({"metric": name, "translation": 100 * metrics[f"{name}_t_m"],
                         "rotation": float(np.rad2deg(metrics[f"{name}_r_rad"])), "unit": "cm|deg"})
    return rows


# ---------------------------------------------------------------------------
# episode suite

EPISODE_COLUMNS = ["taskTag", "condition", "arm", "seed", "success", "finalErrT_m", "finalErrR_rad", "steps",
                   "stage1Steps", "stage2Steps", "stage3Steps", "reinits"]
REPORT_COLUMNS = ["taskTag", "condition", "arm", "episodes", "successRate", "medianFinalErrorT_m",
                  "medianFinalErrorR_rad", "medianSteps"]


def trace_name(condition: str, arm: str, seed: int) -> str:
    return f"{condition.replace('+', 'plus')}_{arm}_{seed}.json"


def run_one(cfg: ExperimentConfig, condition: str, arm: str, seed: int, scenario_cfg=None) -> dict:
    """One seeded episode; never raises for servoing failures, which are recorded in the trace."""
    sc_cfg = scenario_cfg if scenario_cfg is not None else cfg.condition_scenario(condition)
    sc = sample_scenario(sc_cfg, seed)
    scene = build_scene(sc)
    world = make_world(sc, scene)
    disp = None
    if cfg.displacement is not None:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD15C]))
        d = displacement_pose(cfg.displacement, rng)
        p = world.object_pose.translation
        about = Pose.from_rt(np.eye(3), p) @ d @ Pose.from_rt(np.eye(3), -p)
        disp = (cfg.displacement.step, about)
    ctl = cfg.controller
    try:
        res = run_episode(world, sc, scene, ctl, fusion=cfg.fusion, est=cfg.estimation, noise=cfg.noise,
                          global_noise=cfg.globalNoise, arm=arm, displacement=disp)
        trace = res.trace_json()
    except ServoError as exc:
        final = world.ee_pose
        truth = world.optimal_bottleneck
        trace = {"seed": int(seed), "arm": arm, "success": False, "converged": False, "failure": type(exc).__name__,
                 "finalEePose": final.to_dict(), "truthBottleneck": truth.to_dict(), "estimatedBottleneck": None,
                 "steps": []}
    trace["taskTag"] = cfg.taskTag
    trace["condition"] = condition
    trace["successThresh"] = [ctl.successThreshT, ctl.successThreshR]
    trace["scenario"] = sc.to_dict()
    return trace


def row_from_trace(trace: dict) -> dict:
    """Per-episode CSV row derived only from the stored trace."""
    final = Pose.from_dict(trace["finalEePose"])
    truth = Pose.from_dict(trace["truthBottleneck"])
    et, er = pose_error(final, truth)
    phases = [s["phase"] for s in trace["steps"]]
    converged = bool(phases) and phases[-1] == Phase.CONVERGED.value
    tt, tr = trace["successThresh"]
    reinits = sum(1 for a, b in zip([None] + phases, phases) if b == Phase.REINIT.value and a != b)
    return {
        "taskTag": trace["taskTag"],
        "condition": trace["condition"],
        "arm": trace["arm"],
        "seed": int(trace["seed"]),
        "success": int(converged and et <= tt and er <= tr),
        "finalErrT_m": et,
        "finalErrR_rad": er,
        "steps": len(phases),
        "stage1Steps": phases.count(Phase.STAGE1.value),
        "stage2Steps": phases.count(Phase.STAGE2.value),
        "stage3Steps": phases.count(Phase.STAGE3.value),
        "reinits": reinits,
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def aggregate(rows: list) -> list:
    out = []
    keys = []
    for r in rows:
        k = (r["taskTag"], r["condition"], r["arm"])
        if k not in keys:
            keys.append(k)
    for k in keys:
        grp = [r for r in rows if (r["taskTag"], r["condition"], r["arm"]) == k]
        n = len(grp)
        out.append({
            "taskTag": k[0], "condition": k[1], "arm": k[2], "episodes": n,
            "successRate": sum(r["success"] for r in grp) / n,
            "medianFinalErrorT_m": float(np.median([r["finalErrT_m"] for r in grp])),
            "medianFinalErrorR_rad": float(np.median([r["finalErrR_rad"] for r in grp])),
            "medianSteps": float(np.median([r["steps"] for r in grp])),
        })
    return out


def _job(args):
    cfg, condition, arm, seed = args
    return run_one(cfg, condition, arm, seed)


def _order(row) -> tuple:
    conds = list(CONDITIONS)
    return (conds.index(row["condition"]) if row["condition"] in conds else len(conds),
            ARMS.index(row["arm"]), row["seed"])


@dataclass
class SuiteResult:
    rows: list
    report: list
    traces: list


def run_episodes(cfg: ExperimentConfig, jobs: list, parallel: int = 1) -> list:
    """Run (condition, arm, seed) jobs; results come back sorted, whatever the completion order."""
    args = [(cfg, c, a, s) for c, a, s in jobs]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            traces = list(ex.map(_job, args, chunksize=max(1, len(args) // (4 * parallel))))
    else:
        traces = [_job(a) for a in args]
    return sorted(traces, key=lambda t: _order(row_from_trace(t)))


def run_suite(cfg: ExperimentConfig, out_dir=None, parallel: int = 1, conditions=None, arms=None) -> SuiteResult:
    conditions = tuple(conditions or cfg.conditions)
    arms = tuple(arms or cfg.arms)
    jobs = [(c, a, s) for c in conditions for a in arms for s in cfg.episode_seeds()]
    traces = run_episodes(cfg, jobs, parallel)
    rows = [row_from_trace(t) for t in traces]
    report = aggregate(rows)
    if out_dir is not None:
        write_outputs(out_dir, traces, rows, report)
    return SuiteResult(rows, report, traces)


def write_outputs(out_dir, traces: list, rows: list, report: list) -> None:
    out = Path(out_dir)
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    for t in traces:
        path = out / "traces" / trace_name(t["condition"], t["arm"], t["seed"])
        path.write_text(json.dumps(t, sort_keys=True), encoding="utf-8")
    (out / "summary.csv").write_text(write_csv(rows, EPISODE_COLUMNS), encoding="utf-8", newline="")
    (out / "report.csv").write_text(write_csv(report, REPORT_COLUMNS), encoding="utf-8", newline="")


def audit(out_dir) -> list:
    """Re-derive summary.csv from the stored traces; returns mismatching lines (empty when clean)."""
    out = Path(out_dir)
    lines = (out / "summary.csv").read_text(encoding="utf-8").splitlines()
    rd = csv.DictReader(lines)
    problems = []
    for rec in rd:
        path = out / "traces" / trace_name(rec["condition"], rec["arm"], int(rec["seed"]))
        if not path.exists():
            problems.append(f"missing trace {path.name}")
            continue
        row = row_from_trace(json.loads(path.read_text(encoding="utf-8")))
        want = {c: _fmt(row[c]) for c in EPISODE_COLUMNS}
        if want != rec:
            problems.append(f"{path.name}: csv {rec} != trace {want}")
    report = aggregate([row_from_trace(json.loads((out / "traces" / trace_name(r["condition"], r["arm"], int(r["seed"]))).read_text()))
                        for r in csv.DictReader(lines)])
    if write_csv(report, REPORT_COLUMNS) != (out / "report.csv").read_text(encoding="utf-8"):
        problems.append("report.csv does not match the traces")
    return problems


def ablation_stats(rows: list, condition: str = "4dof") -> dict:
    """Success rates and the one-sided Mann-Whitney test of full vs stop-at-stage-2 final error."""
    from scipy.stats import mannwhitneyu

    by = {a: [r for r in rows if r["arm"] == a and r["condition"] == condition] for a in ARMS}
    out = {f"successRate_{a}": (np.mean([r["success"] for r in v]) if v else np.nan) for a, v in by.items()}
    for a, v in by.items():
        out[f"medianErrT_{a}"] = float(np.median([r["finalErrT_m"] for r in v])) if v else np.nan
    if by["full"] and by["stage2"]:
        full = [r["finalErrT_m"] for r in by["full"]]
        s2 = [r["finalErrT_m"] for r in by["stage2"]]
        out["mannWhitneyP_full_lt_stage2"] = float(mannwhitneyu(full, s2, alternative="less").pvalue)
    if by["stage2"] and by["openloop"]:
        s2 = [r["finalErrT_m"] for r in by["stage2"]]
        ol = [r["finalErrT_m"] for r in by["openloop"]]
        out["mannWhitneyP_stage2_lt_openloop"] = float(mannwhitneyu(s2, ol, alternative="less").pvalue)
    return out
