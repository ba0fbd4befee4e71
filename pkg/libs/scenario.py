"""SCENARIO
Reproducible worlds for the simulator: UAV placement, resources, targets
and the wireless channels of every negotiation round.

Every random stream is derived from (seed, purpose, round) so a round can
be regenerated alone and streams never overlap.

License: MIT
"""
from __future__ import annotations
import dataclasses
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from libs.beamforming import ChannelState
from libs.constants import Constants as c
from libs.domain import Behavior, DomainError, GameParams, ResourceVector, \
    TaskDescriptor, UavProfile, default_saturation, deadline_threshold, distance

logger = logging.getLogger('uavsim')

Range = Tuple[float, float]


class ScenarioConfigError(ValueError):
    pass


class Stream(enum.IntEnum):
    PLACEMENT = 0
    RESOURCES = 1
    TASKS = 2
    CHANNELS = 3


def rng_for(seed: int, stream: Stream, round_index: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, int(stream), round_index]))


def _as_range(value, name: str) -> Range:
    try:
        low, high = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ScenarioConfigError(f'{name} must be a [low, high] pair: {value}')
    if not 0 <= low <= high or math.isinf(high):
        raise ScenarioConfigError(f'{name} must satisfy 0 <= low <= high: {value}')
    return low, high


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = c.default_seed
    n_leaders: int = 2
    n_followers: int = 6
    n_resource_types: int = 5
    field_radius: float = 10.0
    resource_range: Union[Range, Sequence[Range]] = (0.3, 0.9)
    task_requirement_range: Range = (1.0, 2.0)
    selfish: Mapping[int, float] = field(default_factory=dict)
    channel_exponent: float = 1.0
    channel_scale: float = 1.0
    noise_variance: float = 1.0
    base_noise: float = 1.0
    base_position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    speeds: Union[float, Sequence[float]] = 1.0
    power_cap: float = 1.0
    non_consumable_types: Tuple[int, ...] = ()
    persistent_tasks: bool = False
    resource_depletion: bool = False
    game: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ScenarioConfigError(f'seed must be an unsigned 64-bit integer: {self.seed}')
        for name in ('n_leaders', 'n_followers', 'n_resource_types'):
            if int(getattr(self, name)) < 1:
                raise ScenarioConfigError(f'{name} must be at least 1')
        for name in ('field_radius', 'channel_exponent', 'channel_scale',
                     'noise_variance', 'base_noise', 'power_cap'):
            if not getattr(self, name) > 0:
                raise ScenarioConfigError(f'{name} must be positive')

        ranges = self.resource_range
        if len(ranges) == 2 and not isinstance(ranges[0], (list, tuple)):
            ranges = [ranges] * self.n_resource_types
        if len(ranges) != self.n_resource_types:
            raise ScenarioConfigError('resource_range needs one pair per type')
        object.__setattr__(self, 'resource_range', tuple(
            _as_range(r, 'resource_range') for r in ranges))
        object.__setattr__(self, 'task_requirement_range', _as_range(
            self.task_requirement_range, 'task_requirement_range'))
        if self.task_requirement_range[1] <= 0:
            raise ScenarioConfigError('Tasks must require a positive amount')

        speeds = self.speeds
        if isinstance(speeds, (int, float)):
            speeds = [speeds] * self.n_uavs
        if len(speeds) != self.n_uavs or any(not s > 0 for s in speeds):
            raise ScenarioConfigError('speeds must be positive, scalar or one per UAV')
        object.__setattr__(self, 'speeds', tuple(float(s) for s in speeds))

        selfish = {int(k): float(v) for k, v in dict(self.selfish).items()}
        for uav_id, fraction in selfish.items():
            if not 1 <= uav_id <= self.n_uavs:
                raise ScenarioConfigError(f'Unknown selfish UAV {uav_id}')
            if not 0 <= fraction < 1:
                raise ScenarioConfigError(f'Selfish fraction of {uav_id} not in [0, 1)')
        object.__setattr__(self, 'selfish', selfish)

        if any(not 0 <= j < self.n_resource_types for j in self.non_consumable_types):
            raise ScenarioConfigError('non_consumable_types out of range')
        object.__setattr__(self, 'non_consumable_types',
                           tuple(sorted(set(self.non_consumable_types))))
        if len(self.base_position) != 3:
            raise ScenarioConfigError('base_position must be 3D')

        unknown = set(self.game) - {f.name for f in dataclasses.fields(GameParams)}
        if unknown or 'field_radius' in self.game:
            raise ScenarioConfigError(
                f'Unknown game keys: {sorted(unknown | ({"field_radius"} & set(self.game)))}')
        self.params

    @classmethod
    def from_dict(cls, data: Mapping) -> ScenarioConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ScenarioConfigError(f'Unknown configuration keys: {sorted(unknown)}')
        values = dict(data)
        for key in ('base_position', 'non_consumable_types'):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)

    @classmethod
    def from_path(cls, path: Union[str, Path]) -> ScenarioConfig:
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioConfigError(f'Invalid configuration file {path}: {e}')
        if not isinstance(data, dict):
            raise ScenarioConfigError('The configuration must be a JSON object')
        return cls.from_dict(data)

    def with_seed(self, seed: Optional[int]) -> ScenarioConfig:
        return self if seed is None else dataclasses.replace(self, seed=seed)

    @property
    def n_uavs(self) -> int:
        return int(self.n_leaders) + int(self.n_followers)

    @property
    def leader_ids(self) -> Tuple[int, ...]:
        return tuple(range(1, self.n_leaders + 1))

    @property
    def uav_ids(self) -> Tuple[int, ...]:
        return tuple(range(1, self.n_uavs + 1))

    @property
    def params(self) -> GameParams:
        """
        Game parameters, L defaulting to a saturation that dominates every
        bounded term of the leader value
        """
        game = dict(self.game)
        try:
            defaults = GameParams(**{k: v for k, v in game.items() if k != 'big_L'})
            if 'big_L' not in game:
                game['big_L'] = default_saturation(
                    defaults.alpha1, defaults.alpha2, defaults.alpha3,
                    defaults.initial_credit, self.n_uavs, self.n_resource_types)
            return GameParams(field_radius=self.field_radius, **game)
        except (DomainError, TypeError) as e:
            raise ScenarioConfigError(f'Invalid game parameters: {e}')


@dataclass(frozen=True)
class World:
    config: ScenarioConfig
    params: GameParams
    uavs: Dict[int, UavProfile]
    tasks: Dict[int, TaskDescriptor]
    leader_of_task: Dict[int, int]

    @property
    def base_position(self) -> Tuple[float, float, float]:
        return tuple(self.config.base_position)

    @property
    def deadline(self) -> float:
        return deadline_threshold(self.params, float(np.mean(self.config.speeds)))

    @property
    def leaders(self):
        return [u for u in self.uavs.values() if u.is_leader_capable]

    @property
    def followers(self):
        return [u for u in self.uavs.values() if not u.is_leader_capable]

    def with_uavs(self, uavs: Mapping[int, UavProfile]) -> World:
        return dataclasses.replace(self, uavs=dict(sorted(uavs.items())))

    def with_tasks(self, tasks: Mapping[int, TaskDescriptor]) -> World:
        return dataclasses.replace(self, tasks=dict(sorted(tasks.items())))


def uniform_in_ball(rng: np.random.Generator, radius: float, n: int) -> np.ndarray:
    """
    n points uniformly distributed in the 3D ball
    """
    directions = rng.standard_normal((n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * radius * np.cbrt(rng.uniform(size=(n, 1)))


def _draw_resources(rng: np.random.Generator, config: ScenarioConfig) -> ResourceVector:
    amounts = [rng.uniform(low, high) for low, high in config.resource_range]
    for j in config.non_consumable_types:
        amounts[j] = c.infinite
    return ResourceVector(tuple(amounts))


def draw_requirements(config: ScenarioConfig, round_index: int
                      ) -> Dict[int, ResourceVector]:
    """
    Requirement vectors of every task for a round, task k belongs to leader k
    """
    rng = rng_for(config.seed, Stream.TASKS, round_index)
    low, high = config.task_requirement_range
    return {k: ResourceVector(tuple(rng.uniform(low, high, config.n_resource_types)))
            for k in config.leader_ids}


def generate_scenario(config: ScenarioConfig) -> World:
    """
    UAVs and targets uniformly placed in the ball of the field radius around
    the base station, UAVs 1..n_leaders being the leaders
    """
    placement = rng_for(config.seed, Stream.PLACEMENT)
    resources = rng_for(config.seed, Stream.RESOURCES)
    base = np.array(config.base_position, dtype=float)

    positions = base + uniform_in_ball(placement, config.field_radius, config.n_uavs)
    targets = base + uniform_in_ball(placement, config.field_radius, config.n_leaders)

    uavs = {}
    for uav_id, position, speed in zip(config.uav_ids, positions, config.speeds):
        behavior = Behavior.selfish_with(config.selfish[uav_id]) \
            if uav_id in config.selfish else Behavior.cooperative()
        uavs[uav_id] = UavProfile(
            id=uav_id, position=tuple(position), speed=speed,
            resources=_draw_resources(resources, config),
            power_cap=config.power_cap, behavior=behavior,
            is_leader_capable=uav_id in config.leader_ids)

    requirements = draw_requirements(config, 0)
    tasks = {k: TaskDescriptor(k, tuple(target), requirements[k])
             for k, target in zip(config.leader_ids, targets)}
    logger.debug(f'Scenario seed={config.seed}: {config.n_leaders} leaders, '
                 f'{config.n_followers} followers, {config.n_resource_types} types')
    return World(config, config.params, uavs, tasks,
                 {k: k for k in config.leader_ids})


def refresh_tasks(world: World, round_index: int) -> World:
    """
    Targets stay where they are. Requirements are redrawn every round unless
    tasks are persistent.
    """
    if world.config.persistent_tasks:
        return world
    requirements = draw_requirements(world.config, round_index)
    return world.with_tasks({
        k: dataclasses.replace(task, required=requirements[k],
                               appearance_round=round_index)
        for k, task in world.tasks.items()})


def channel_variance(d: float, config: ScenarioConfig) -> float:
    floor = c.distance_floor * config.field_radius
    return config.channel_scale * max(d, floor) ** -config.channel_exponent


def complex_gaussian(rng: np.random.Generator, variances: np.ndarray) -> np.ndarray:
    """
    Circularly symmetric zero mean gains with the given variances
    """
    variances = np.asarray(variances, dtype=float)
    draws = rng.standard_normal(variances.shape) + \
        1j * rng.standard_normal(variances.shape)
    return draws * np.sqrt(variances / 2)


def link_gains(positions: Sequence[Sequence[float]], endpoint: Sequence[float],
               config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """
    One gain per position for the links to a common endpoint, with the
    distance dependent variance
    """
    return complex_gaussian(rng, [channel_variance(distance(p, endpoint), config)
                                  for p in positions])


def sample_channels(positions: Sequence[Sequence[float]],
                    target: Sequence[float], base: Sequence[float],
                    config: ScenarioConfig,
                    rng: np.random.Generator) -> ChannelState:
    """
    Fresh target-to-relay and relay-to-base channels of a coalition
    """
    h_tu = link_gains(positions, target, config, rng)
    h_ub = link_gains(positions, base, config, rng)
    return ChannelState(tuple(h_tu), tuple(h_ub),
                        (config.noise_variance,) * len(positions),
                        config.base_noise)


class RoundChannels:
    """
    Channels frozen for one negotiation round: one relay-to-base gain per UAV
    and one target-to-relay gain per UAV and task
    """
    def __init__(self, world: World, round_index: int):
        config = world.config
        rng = rng_for(config.seed, Stream.CHANNELS, round_index)
        ids = list(world.uavs)
        positions = [world.uavs[i].position for i in ids]
        self.round = round_index
        self.noise_variance = config.noise_variance
        self.base_noise = config.base_noise

        self.h_ub = dict(zip(ids, link_gains(positions, world.base_position,
                                             config, rng)))
        self.h_tu: Dict[int, Dict[int, complex]] = {
            task_id: dict(zip(ids, link_gains(positions, task.location, config, rng)))
            for task_id, task in world.tasks.items()}

    def for_coalition(self, task_id: int, members: Sequence[int]) -> ChannelState:
        return ChannelState(tuple(self.h_tu[task_id][i] for i in members),
                            tuple(self.h_ub[i] for i in members),
                            (self.noise_variance,) * len(members),
                            self.base_noise)
