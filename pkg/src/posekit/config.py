"""Run configuration: one dataclass, JSON overrides, deterministic seeds.

Seed precedence, strongest first: --seed on the command line, the
POSEKIT_SEED environment variable, the "seed" key of the config file,
the built-in default.  Every stochastic stage derives its generator from
the resolved seed through named SeedSequence spawns, so a run is fully
reproducible from (config, seed) alone.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

SEED_ENV_VAR = "POSEKIT_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # feature pyramid
    cell_size: int = 4
    levels: int = 5
    scale_step: float = 2 ** 0.25
    part_extent: int = 3
    padding: int = 3
    # part types and orientations
    num_types: int = 7
    orientation_count: int = 36
    rotated: bool = True
    # phraselet clustering
    sigma: float = 1.0
    overlap_radius: float = 0.25
    overlap_count: int | None = None     # None: scale with the training set
    # auxiliary lower-tree nodes
    pelvis_offset: float = 0.15
    head_offset: float = 0.5
    # training
    svm_c: float = 0.002
    epochs: int = 8
    cache_size: int = 500
    max_per_image: int = 20
    # misc
    seed: int = 0

    def __post_init__(self):
        if self.cell_size < 1 or self.levels < 1:
            raise ConfigError("cell_size and levels must be positive")
        if self.part_extent < 1:
            raise ConfigError("part_extent must be positive")
        if self.num_types < 1:
            raise ConfigError("num_types must be positive")
        if self.orientation_count < 1:
            raise ConfigError("orientation_count must be positive")
        if self.scale_step <= 1.0:
            raise ConfigError("scale_step must exceed 1")
        if self.sigma <= 0 or self.overlap_radius <= 0:
            raise ConfigError("sigma and overlap_radius must be positive")
        if self.svm_c <= 0:
            raise ConfigError("svm_c must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then explicit overrides."""
    values: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise ConfigError(f"config {path}: unknown keys {unknown}")
        values.update(loaded)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def resolve_seed(cli_seed: int | None, config: RunConfig) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(
                f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    return int(config.seed)


def stage_seed_sequence(seed: int, stage: str) -> np.random.SeedSequence:
    """Independent, named stream per pipeline stage."""
    stage_key = tuple(stage.encode("utf-8"))
    return np.random.SeedSequence(entropy=seed, spawn_key=stage_key)
