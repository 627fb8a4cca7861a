"""Run configuration: JSON schema with every constant materialized, plus builders."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gait import TROT_OFFSETS
from .model import RobotParams, make_robot
from .obs import NoiseConfig
from .ppo import PpoConfig
from .rewards import RewardWeights
from .sim import (
    CommandRanges,
    QuadrupedEnv,
    RandomizationRanges,
    SimParams,
    TerrainField,
    TerrainParams,
    make_terrain_levels,
)


class ConfigError(ValueError):
    pass


@dataclass
class RobotConfig:
    preset: str = "go1"
    # numeric RobotParams overrides, e.g. {"action_scale": 0.25}
    overrides: dict = field(default_factory=dict)


@dataclass
class TerrainConfig:
    kind: str = "flat"
    friction_mu: float = 1.0
    curriculum: bool = True
    levels: int = 6
    params: TerrainParams = field(default_factory=TerrainParams)


@dataclass
class GaitConfig:
    frequency_hz: float = 2.0
    stance_ratio: float = 0.5
    phase_offsets: tuple = TROT_OFFSETS
    body_height: float | None = None  # null -> robot nominal standing height
    kappa: float = 0.04


@dataclass
class RunSettings:
    num_envs: int = 256
    iterations: int = 500
    seed: int = 1
    output_dir: str = "runs/run"
    checkpoint_every: int = 100


@dataclass
class RunConfig:
    robot: RobotConfig = field(default_factory=RobotConfig)
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    gait: GaitConfig = field(default_factory=GaitConfig)
    commands: CommandRanges = field(default_factory=CommandRanges)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges)
    sim: SimParams = field(default_factory=SimParams)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    run: RunSettings = field(default_factory=RunSettings)


_SECTIONS = {
    "robot": RobotConfig,
    "terrain": TerrainConfig,
    "gait": GaitConfig,
    "commands": CommandRanges,
    "rewards": RewardWeights,
    "noise": NoiseConfig,
    "randomization": RandomizationRanges,
    "sim": SimParams,
    "ppo": PpoConfig,
    "run": RunSettings,
}


def _coerce_dataclass(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{where}' must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown key '{where}.{key}'")
        f = names[key]
        if dataclasses.is_dataclass(f.type) or f.name == "params":
            value = _coerce_dataclass(TerrainParams, value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid section '{where}': {e}") from e


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    kwargs = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section '{key}'")
        kwargs[key] = _coerce_dataclass(_SECTIONS[key], value, key)
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from e
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    """Write the fully resolved config (all defaults materialized) as JSON."""
    Path(path).write_text(
        json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def build_robot(cfg: RunConfig) -> RobotParams:
    overrides = dict(cfg.robot.overrides)
    for key in ("hip_offsets", "joint_lower", "joint_upper", "nominal_q"):
        if key in overrides:
            overrides[key] = np.asarray(overrides[key], dtype=np.float64)
    if "trunk_dims" in overrides:
        overrides["trunk_dims"] = tuple(overrides["trunk_dims"])
    return make_robot(cfg.robot.preset, **overrides)


def build_terrains(cfg: RunConfig) -> list[TerrainField]:
    return make_terrain_levels(cfg.terrain.kind, cfg.terrain.params, cfg.run.seed,
                               cfg.terrain.friction_mu, cfg.terrain.levels)


def build_env(cfg: RunConfig, num_envs: int | None = None, num_threads: int = 1,
              deterministic_eval: bool = False) -> QuadrupedEnv:
    """Construct the vectorized env from a resolved config.

    deterministic_eval disables observation noise, dynamics randomization, and
    spawn perturbations, and pins the terrain curriculum off.
    """
    robot = build_robot(cfg)
    noise = cfg.noise
    rand = cfg.randomization
    commands = cfg.commands
    curriculum = cfg.terrain.curriculum
    spawn_noise = 1.0
    if deterministic_eval:
        noise = dataclasses.replace(noise, enabled=False)
        rand = dataclasses.replace(rand, enabled=False)
        commands = dataclasses.replace(commands, resample_steps=0)
        curriculum = False
        spawn_noise = 0.0
    return QuadrupedEnv(
        robot=robot,
        num_envs=cfg.run.num_envs if num_envs is None else num_envs,
        terrains=build_terrains(cfg),
        seed=cfg.run.seed,
        command_ranges=commands,
        reward_weights=cfg.rewards,
        noise=noise,
        randomization=rand,
        sim_params=cfg.sim,
        gait_frequency=cfg.gait.frequency_hz,
        stance_ratio=cfg.gait.stance_ratio,
        phase_offsets=cfg.gait.phase_offsets,
        body_height_cmd=cfg.gait.body_height,
        gait_kappa=cfg.gait.kappa,
        curriculum=curriculum,
        num_threads=num_threads,
        spawn_noise_scale=spawn_noise,
    )
