"""CREDIT
Cumulative cooperation credit of the UAVs. Credits grow with the resources a
UAV actually expends on the tasks it joins and are min-max rescaled to
[0, C] over the whole network after every round.

License: MIT
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence

from libs.domain import Coalition, ResourceVector, gamma_ratio

logger = logging.getLogger('uavsim')


class CreditError(ValueError):
    pass


class DegenerateCoalitionError(CreditError):
    """
    No member of the coalition contributed anything
    """
    pass


@dataclass(frozen=True)
class ContributionReport:
    uav_id: int
    committed: ResourceVector
    actual: ResourceVector

    def is_well_formed(self) -> bool:
        return all(a <= m for a, m in zip(self.actual, self.committed))


def effective_contribution(actual: ResourceVector,
                           required: ResourceVector) -> float:
    """
    Sum over the required types of the expended to required ratio, capped
    at 1. Types with no requirement are skipped.
    """
    if len(actual) != len(required):
        raise CreditError(
            f'Resource vector length mismatch: {len(actual)} != {len(required)}')
    if not any(t > 0 for t in required):
        raise CreditError('Required vector has no positive component')
    return sum(gamma_ratio(1.0, 0.0, r, t)
               for r, t in zip(actual, required) if t > 0)


def contribution_deltas(coalition: Coalition, required: ResourceVector,
                        reports: Sequence[ContributionReport]
                        ) -> Dict[int, float]:
    """
    Credit increment of every member: the task value shared in proportion
    to the effective contributions
    :param coalition: coalition that executed the task
    :param required: task requirement
    :param reports: one report per member, carrying actual expenditure
    :return: uav id -> credit increment
    """
    by_id = {r.uav_id: r for r in reports}
    missing = coalition.member_ids - set(by_id)
    if missing:
        raise CreditError(f'Missing contribution reports for {sorted(missing)}')

    contributions = {i: effective_contribution(by_id[i].actual, required)
                     for i in sorted(coalition.member_ids)}
    total = sum(contributions.values())
    if total <= 0:
        raise DegenerateCoalitionError(
            f'Coalition {coalition.label()} expended no required resource')

    task_value = required.total
    return {i: task_value / total * a for i, a in contributions.items()}


class CreditLedger:
    """
    Immutable snapshot of every UAV credit at a given round. Updates return
    a new ledger.
    """
    def __init__(self, credits: Mapping[int, float], capacity: float,
                 round_index: int = 0):
        if capacity <= 0:
            raise CreditError('Initial credit C must be positive')
        self._credits = {int(k): float(v) for k, v in credits.items()}
        self.capacity = float(capacity)
        self.round = round_index

        for uav_id, value in self._credits.items():
            if not -1e-12 <= value <= self.capacity + 1e-12:
                raise CreditError(f'Credit of {uav_id} out of [0, C]: {value}')

    @classmethod
    def initial(cls, uav_ids: Iterable[int], capacity: float) -> CreditLedger:
        return cls({i: capacity for i in uav_ids}, capacity, 0)

    def __repr__(self):
        return f'CreditLedger(round={self.round}, credits={self._credits})'

    def __eq__(self, other):
        return isinstance(other, CreditLedger) and \
            self._credits == other._credits and \
            self.capacity == other.capacity and self.round == other.round

    @property
    def uav_ids(self) -> List[int]:
        return sorted(self._credits)

    @property
    def credits(self) -> Dict[int, float]:
        return dict(self._credits)

    def credit(self, uav_id: int) -> float:
        return self._credits[uav_id]

    def normalized(self) -> Dict[int, float]:
        return {i: v / self.capacity for i, v in self._credits.items()}

    def apply(self, deltas: Iterable[Mapping[int, float]]) -> CreditLedger:
        """
        Add the increments of every coalition of the round, then rescale all
        credits to [0, C] once.
        """
        intermediate = dict(self._credits)
        for batch in deltas:
            for uav_id, delta in batch.items():
                if uav_id not in intermediate:
                    raise CreditError(f'Unknown UAV {uav_id} in credit update')
                intermediate[uav_id] += delta

        low = min(intermediate.values())
        high = max(intermediate.values())
        if high - low <= 0:
            rescaled = {i: self.capacity for i in intermediate}
        else:
            rescaled = {i: self.capacity * (v - low) / (high - low)
                        for i, v in intermediate.items()}

        logger.debug(f'Credits after round {self.round + 1}: {rescaled}')
        return CreditLedger(rescaled, self.capacity, self.round + 1)

    def records(self) -> List[dict]:
        return [{'round': self.round, 'uav_id': i, 'credit': self._credits[i]}
                for i in self.uav_ids]


def update_after_task(ledger: CreditLedger, coalition: Coalition,
                      required: ResourceVector,
                      reports: Sequence[ContributionReport]) -> CreditLedger:
    """
    Credit update after one coalition completed its task: member increments
    followed by the network-wide rescale.
    """
    return ledger.apply([contribution_deltas(coalition, required, reports)])
