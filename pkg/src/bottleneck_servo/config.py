"""Experiment configuration: one JSON file drives a run, a suite or an ablation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .controller import ControllerConfig, EstimatorConfig
from .errors import ConfigError, InvalidBounds
from .estimation import HomographyConfig, IcpConfig, PriorConfig, RansacConfig
from .fusion import FusionConfig
from .matching import GLOBAL_NOISE, NoiseModel
from .scene import ScenarioConfig

CONDITIONS = {
    "4dof": {"dofMode": "4dof"},
    "4dof+": {"dofMode": "4dof", "distractorCount": 10, "occlusionFraction": 0.2},
    "6dof+": {"dofMode": "6dof", "distractorCount": 10, "occlusionFraction": 0.2},
}
ARMS = ("full", "stage2", "openloop")

_SCENARIO_KEYS = {f.name for f in fields(ScenarioConfig)}
_TOP_KEYS = {"noise", "globalNoise", "estimation", "fusion", "controller", "taskTag", "conditions", "arms",
             "episodes", "seed", "displacement", "benchTrials", "benchFrames"}


@dataclass(frozen=True)
class Displacement:
    """Mid-episode object displacement: applied at ``step`` as a yaw plus a planar shift."""

    step: int = 30
    translationM: float = 0.04
    rotationDeg: float = 15.0


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = ScenarioConfig()
    noise: NoiseModel = NoiseModel()
    globalNoise: NoiseModel = GLOBAL_NOISE
    estimation: EstimatorConfig = EstimatorConfig()
    fusion: FusionConfig = FusionConfig()
    controller: ControllerConfig = ControllerConfig()
    taskTag: str = "box"
    conditions: tuple = ("4dof", "4dof+", "6dof+")
    arms: tuple = ARMS
    episodes: int = 10
    seed: int = 0
    displacement: Displacement | None = None
    benchTrials: int = 12
    benchFrames: int = 10
    raw: dict = field(default_factory=dict, compare=False)

    def condition_scenario(self, condition: str) -> ScenarioConfig:
        if condition not in CONDITIONS:
            raise ConfigError(f"unknown condition {condition!r}")
        d = self.scenario.to_dict()
        d.update(CONDITIONS[condition])
        for k in ("distractorCount", "occlusionFraction"):
            # an explicit scenario value overrides the condition default
            if k in self.raw and k not in CONDITIONS[condition]:
                d[k] = self.raw[k]
        return ScenarioConfig.from_dict(d)

    def episode_seeds(self) -> list:
        return [self.seed + i for i in range(self.episodes)]


def _estimation_from_dict(d: dict) -> EstimatorConfig:
    prior = d.get("prior", {})
    return EstimatorConfig(
        ransac=RansacConfig.from_dict(d.get("ransac", {})),
        prior=PriorConfig(
            minPoints=prior.get("minPoints", 20),
            ransac=RansacConfig.from_dict({"inlierDistM": 0.015, **prior.get("ransac", {})}),
            icp=IcpConfig(**prior.get("icp", {})),
            useIcp=prior.get("useIcp", True),
        ),
        homography=HomographyConfig.from_dict(d.get("homography", {})),
    )


def experiment_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - _SCENARIO_KEYS - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        scenario = ScenarioConfig.from_dict({k: d[k] for k in _SCENARIO_KEYS if k in d})
        scenario.validate()
        conds = tuple(d.get("conditions", ExperimentConfig.conditions))
        arms = tuple(d.get("arms", ARMS))
        for c in conds:
            if c not in CONDITIONS:
                raise ConfigError(f"unknown condition {c!r}")
        for a in arms:
            if a not in ARMS:
                raise ConfigError(f"unknown arm {a!r}")
        disp = d.get("displacement")
        cfg = ExperimentConfig(
            scenario=scenario,
            noise=NoiseModel.from_dict(d["noise"]) if "noise" in d else NoiseModel(),
            globalNoise=NoiseModel.from_dict({**GLOBAL_NOISE.to_dict(), **d["globalNoise"]}) if "globalNoise" in d else GLOBAL_NOISE,
            estimation=_estimation_from_dict(d.get("estimation", {})),
            fusion=FusionConfig.from_dict(d.get("fusion", {})),
            controller=ControllerConfig.from_dict(d.get("controller", {})),
            taskTag=str(d.get("taskTag", "box")),
            conditions=conds,
            arms=arms,
            episodes=int(d.get("episodes", 10)),
            seed=int(d.get("seed", 0)),
            displacement=None if disp is None else Displacement(**disp),
            benchTrials=int(d.get("benchTrials", 12)),
            benchFrames=int(d.get("benchFrames", 10)),
            raw=dict(d),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, InvalidBounds) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.episodes < 1:
        raise ConfigError("episodes must be >= 1")
    return cfg


def load_experiment(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return experiment_from_dict(d)


def displacement_pose(disp: Displacement, rng: np.random.Generator):
    from .geometry import Pose, rot_z

    phi = rng.uniform(0, 2 * np.pi)
    yaw = np.deg2rad(disp.rotationDeg) * rng.choice([-1.0, 1.0])
    t = disp.translationM * np.array([np.cos(phi), np.sin(phi), 0.0])
    return Pose.from_rt(rot_z(yaw), t)
