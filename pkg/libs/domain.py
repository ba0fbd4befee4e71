"""DOMAIN
Vocabulary of the simulator: resource vectors, UAVs, tasks, coalitions and
game parameters, together with the clamping function gamma used by the
valuation and credit formulas.

License: MIT
"""
from __future__ import annotations
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from libs.constants import Constants as c

INFINITE = c.infinite


class DomainError(ValueError):
    pass


def gamma(big_l: float, eps: float, x: float) -> float:
    """
    Clamping function: identity up to 1 + eps, constant big_l afterwards.
    :param big_l: saturation value L
    :param eps: knee tolerance, eps = 0 gives gamma_L
    :param x: positive finite argument
    :return: x or big_l
    """
    if not math.isfinite(x) or x <= 0:
        raise DomainError(f'gamma is defined for finite x > 0, got {x}')
    if eps < 0:
        raise DomainError(f'gamma eps must be nonnegative, got {eps}')
    return x if x <= 1 + eps else big_l


def gamma_ratio(big_l: float, eps: float, num: float, den: float) -> float:
    """
    Apply gamma to num / den taking the limits the formulas rely on:
    a zero denominator or an infinite numerator saturates, a zero numerator
    or an infinite denominator gives 0.
    """
    if num < 0 or den < 0:
        raise DomainError(f'Negative ratio operands: {num}/{den}')
    if num == 0 and den == 0:
        raise DomainError('Undefined ratio 0/0')
    if math.isinf(num) and math.isinf(den):
        raise DomainError('Undefined ratio inf/inf')
    if den == 0 or math.isinf(num):
        return big_l
    if num == 0 or math.isinf(den):
        return 0.0
    ratio = num / den
    if math.isinf(ratio):
        return big_l
    return gamma(big_l, eps, ratio)


@dataclass(frozen=True)
class ResourceVector:
    """
    Amounts of each resource type. INFINITE marks a non-consumable resource.
    """
    amounts: Tuple[float, ...]

    def __post_init__(self):
        amounts = tuple(float(a) for a in self.amounts)
        for a in amounts:
            if math.isnan(a) or a < 0:
                raise DomainError(f'Resource amounts must be >= 0: {amounts}')
        object.__setattr__(self, 'amounts', amounts)

    @classmethod
    def zeros(cls, n_types: int) -> ResourceVector:
        return cls((0.0,) * n_types)

    def __len__(self):
        return len(self.amounts)

    def __iter__(self):
        return iter(self.amounts)

    def __getitem__(self, j: int) -> float:
        return self.amounts[j]

    def __add__(self, other: ResourceVector) -> ResourceVector:
        self._check_length(other)
        return ResourceVector(tuple(a + b for a, b in zip(self, other)))

    def _check_length(self, other: ResourceVector):
        if len(self) != len(other):
            raise DomainError(
                f'Resource vector length mismatch: {len(self)} != {len(other)}')

    @property
    def total(self) -> float:
        return sum(self.amounts)

    def is_infinite(self, j: int) -> bool:
        return math.isinf(self.amounts[j])

    def covers(self, required: ResourceVector) -> bool:
        return covers(self, required)

    def minus(self, spent: ResourceVector) -> ResourceVector:
        """
        Deduct spent amounts, non-consumable entries are left untouched
        """
        self._check_length(spent)
        return ResourceVector(tuple(
            a if math.isinf(a) else max(a - (0.0 if math.isinf(s) else s), 0.0)
            for a, s in zip(self, spent)))


def covers(available: ResourceVector, required: ResourceVector) -> bool:
    """
    Componentwise sufficiency check
    """
    available._check_length(required)
    return all(a >= t for a, t in zip(available, required))


@dataclass(frozen=True)
class Behavior:
    """
    Execution policy of a UAV: cooperative agents expend everything they
    committed, selfish ones only a fraction of it.
    """
    selfish: bool = False
    contribution_fraction: float = 1.0

    def __post_init__(self):
        if self.selfish and not 0 <= self.contribution_fraction < 1:
            raise DomainError('Selfish contribution fraction must be in [0, 1)')
        if not self.selfish and self.contribution_fraction != 1.0:
            raise DomainError('Cooperative UAVs contribute everything')

    @classmethod
    def cooperative(cls) -> Behavior:
        return cls()

    @classmethod
    def selfish_with(cls, fraction: float) -> Behavior:
        return cls(selfish=True, contribution_fraction=fraction)

    def expend(self, committed: ResourceVector) -> ResourceVector:
        phi = self.contribution_fraction
        if phi == 1.0:
            return committed
        return ResourceVector(tuple(
            (a if phi > 0 else 0.0) if math.isinf(a) else a * phi
            for a in committed))

    def __str__(self):
        if self.selfish:
            return f'selfish({self.contribution_fraction:g})'
        return 'cooperative'


@dataclass(frozen=True)
class UavProfile:
    id: int
    position: Tuple[float, float, float]
    speed: float
    resources: ResourceVector
    power_cap: float
    behavior: Behavior = field(default_factory=Behavior)
    is_leader_capable: bool = False

    def __post_init__(self):
        if self.speed <= 0:
            raise DomainError(f'UAV {self.id}: speed must be positive')
        if self.power_cap <= 0:
            raise DomainError(f'UAV {self.id}: power cap must be positive')
        if len(self.position) != 3:
            raise DomainError(f'UAV {self.id}: position must be 3D')
        object.__setattr__(self, 'position',
                           tuple(float(p) for p in self.position))

    def with_resources(self, resources: ResourceVector) -> UavProfile:
        return replace(self, resources=resources)


@dataclass(frozen=True)
class TaskDescriptor:
    id: int
    location: Tuple[float, float, float]
    required: ResourceVector
    appearance_round: int = 0

    def __post_init__(self):
        if not any(t > 0 for t in self.required):
            raise DomainError(f'Task {self.id}: nothing is required')
        if any(math.isinf(t) for t in self.required):
            raise DomainError(f'Task {self.id}: requirements must be finite')
        if self.appearance_round < 0:
            raise DomainError(f'Task {self.id}: negative appearance round')
        object.__setattr__(self, 'location',
                           tuple(float(p) for p in self.location))

    @property
    def value(self) -> float:
        """
        Task value, sum of the required amounts
        """
        return self.required.total

    def required_types(self) -> Tuple[int, ...]:
        return tuple(j for j, t in enumerate(self.required) if t > 0)


@dataclass(frozen=True)
class Coalition:
    leader_id: int
    member_ids: frozenset
    task_id: int
    aggregate: ResourceVector
    snr_opt: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'member_ids', frozenset(self.member_ids))
        if self.leader_id not in self.member_ids:
            raise DomainError(
                f'Coalition for task {self.task_id} misses its leader')

    @classmethod
    def form(cls, leader_id: int, members: Iterable[UavProfile],
             task_id: int, snr_opt: Optional[float] = None) -> Coalition:
        members = list(members)
        return cls(leader_id=leader_id,
                   member_ids=frozenset(m.id for m in members),
                   task_id=task_id,
                   aggregate=aggregate_resources(members),
                   snr_opt=snr_opt)

    @property
    def followers(self) -> Tuple[int, ...]:
        return tuple(sorted(self.member_ids - {self.leader_id}))

    @property
    def ordered_members(self) -> Tuple[int, ...]:
        """
        Leader first, then followers by id. This is the relay order of the
        channel vectors.
        """
        return (self.leader_id,) + self.followers

    def with_snr(self, snr: float) -> Coalition:
        return replace(self, snr_opt=snr)

    def label(self) -> str:
        return f'{self.leader_id}:' + '-'.join(map(str, self.ordered_members))


@dataclass(frozen=True)
class GameParams:
    alpha1: float = c.alpha1
    alpha2: float = c.alpha2
    alpha3: float = c.alpha3
    alpha4: float = c.alpha4
    big_L: float = 1e4
    gamma_eps: float = c.gamma_eps
    snr_threshold: float = c.snr_threshold
    field_radius: float = 1.0
    deadline_factor: float = c.deadline_factor
    merge_split_eps: float = c.merge_split_eps
    initial_credit: float = c.initial_credit

    def __post_init__(self):
        for name in ('alpha1', 'alpha2', 'alpha3', 'alpha4', 'big_L',
                     'snr_threshold', 'field_radius', 'deadline_factor',
                     'merge_split_eps', 'initial_credit'):
            value = getattr(self, name)
            if not value > 0:
                raise DomainError(f'GameParams.{name} must be positive: {value}')
        if self.gamma_eps < 0:
            raise DomainError('GameParams.gamma_eps must be nonnegative')


def default_saturation(alpha1: float, alpha2: float, alpha3: float,
                       initial_credit: float, n_uavs: int,
                       n_resource_types: int) -> float:
    """
    Saturation magnitude L dominating every bounded term of the leader value
    """
    return c.saturation_scale * (alpha1 * initial_credit * n_uavs + alpha2 +
                                 alpha3 * n_resource_types + 1)


def aggregate_resources(members: Iterable[UavProfile]) -> ResourceVector:
    """
    Componentwise sum of the members' resources
    :param members: nonempty collection of UAVs
    :return: aggregate resource vector
    """
    members = list(members)
    if not members:
        raise DomainError('Cannot aggregate an empty member set')
    total = members[0].resources
    for member in members[1:]:
        total = total + member.resources
    return total


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.linalg.norm(np.subtract(a, b)))


def travel_time(uav: UavProfile, task: TaskDescriptor) -> float:
    """
    Euclidean distance to the target over the UAV speed
    """
    return distance(uav.position, task.location) / uav.speed


def deadline_threshold(params: GameParams, reference_speed: float) -> float:
    """
    Deadline of every task: time to cross deadline_factor field radii at
    the reference speed
    """
    if reference_speed <= 0:
        raise DomainError('Reference speed must be positive')
    return params.deadline_factor * params.field_radius / reference_speed
