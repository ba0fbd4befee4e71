"""NEGOTIATION
Coalition formation protocol between the leaders that detected a task and
the followers bidding for it. Every leader searches its coalition with
merge-and-split, sends formation requests to the selected followers and
re-forms without the followers that answered No until every request it
sends is accepted. Pending leaders search at the same time, so two of them
may ask for the same follower.

License: MIT
"""
from __future__ import annotations
import enum
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, \
    Optional, Sequence, Set, Tuple

from libs.constants import Constants as c
from libs.domain import Coalition, TaskDescriptor, UavProfile, covers
from libs.valuation import ValuationContext, follower_utility, leader_value

logger = logging.getLogger('uavsim')


class NegotiationError(ValueError):
    pass


class Phase(enum.Enum):
    SEARCH = 'search'
    PROPOSAL = 'proposal'
    BID = 'bid'
    FORMATION = 'formation'
    EXECUTING = 'executing'


@dataclass
class NegotiationState:
    phases: Dict[int, Phase]
    pending_offers: Dict[int, Set[int]] = field(
        default_factory=lambda: defaultdict(set))
    refusals: Dict[int, Set[int]] = field(
        default_factory=lambda: defaultdict(set))

    @classmethod
    def initial(cls, uav_ids: Iterable[int]) -> NegotiationState:
        return cls({i: Phase.SEARCH for i in uav_ids})

    def phase(self, uav_id: int) -> Phase:
        return self.phases[uav_id]

    def set_phase(self, uav_ids: Iterable[int], phase: Phase):
        for i in uav_ids:
            self.phases[i] = phase

    def refuse(self, leader_id: int, follower_id: int):
        self.refusals[leader_id].add(follower_id)

    @property
    def refusal_count(self) -> int:
        """
        Number of (leader, follower) pairs that ended with a No
        """
        return sum(len(s) for s in self.refusals.values())

    @property
    def refusing_uavs(self) -> int:
        """
        Number of distinct followers that answered No at least once
        """
        return len(set().union(*self.refusals.values()))


@dataclass
class NegotiationOutcome:
    coalitions: Dict[int, Coalition]
    unserved: List[int]
    rounds: int
    state: NegotiationState
    events: List[dict]
    available: Dict[int, FrozenSet[int]]

    @property
    def refusal_count(self) -> int:
        return self.state.refusal_count

    @property
    def refusing_uavs(self) -> int:
        return self.state.refusing_uavs


def collect_bids(leader_id: int, task: TaskDescriptor,
                 uavs: Mapping[int, UavProfile],
                 state: NegotiationState) -> List[UavProfile]:
    """
    UAVs in Search phase holding a positive amount of at least one required
    type. Leaders never bid for another leader.
    :return: bidders sorted by id
    """
    required = task.required_types()
    return [uav for i, uav in sorted(uavs.items())
            if i != leader_id and not uav.is_leader_capable
            and state.phase(i) == Phase.SEARCH
            and any(uav.resources[j] > 0 for j in required)]


def _subsets(items: Sequence, max_size: int) -> Iterator[Tuple]:
    """
    Nonempty subsets of at most max_size items, smallest first
    """
    for size in range(1, min(max_size, len(items)) + 1):
        yield from itertools.combinations(items, size)


def _deficit(ctx: ValuationContext, member_ids: Iterable[int]) -> float:
    """
    Missing amount of every required type, relative to the requirement
    """
    aggregate = ctx.coalition(member_ids).aggregate
    required = ctx.task.required
    return sum(max(0.0, required[j] - aggregate[j]) / required[j]
               for j in ctx.task.required_types())


class _Valuer:
    """
    Leader value memoized by member set
    """
    def __init__(self, ctx: ValuationContext):
        self.ctx = ctx
        self._values: Dict[FrozenSet[int], float] = {}

    def __call__(self, member_ids: Iterable[int]) -> float:
        key = frozenset(member_ids) | {self.ctx.leader_id}
        if key not in self._values:
            self._values[key] = leader_value(self.ctx.coalition(key), self.ctx)
        return self._values[key]

    def coalition(self, member_ids: Iterable[int]) -> Coalition:
        coalition = self.ctx.coalition(member_ids)
        return coalition.with_snr(self.ctx.snr_provider(coalition.ordered_members))


def _best_merge(valuer: _Valuer, current: FrozenSet[int],
                blocks: List[FrozenSet[int]], eps: float
                ) -> Optional[Tuple[FrozenSet[int], float]]:
    """
    Collection of blocks whose union with the leader coalition gives the
    largest value increase above eps. Non-leader blocks are worth 0, so any
    collection may merge with the leader coalition. Every collection is tried
    up to max_merge_enumeration blocks, only single blocks and pairs beyond.
    Ties keep the smallest collection with the lowest ids.
    """
    ordered = sorted(blocks, key=lambda b: (min(b), sorted(b)))
    max_size = len(ordered) if len(ordered) <= c.max_merge_enumeration else 2
    base = valuer(current)
    best = None
    for group in _subsets(ordered, max_size):
        merged = frozenset().union(*group)
        gain = valuer(current | merged) - base
        if gain > eps and (best is None or gain > best[1]):
            best = (merged, gain)
    return best


def _cover_deficit(valuer: _Valuer, current: FrozenSet[int],
                   blocks: List[FrozenSet[int]], eps: float
                   ) -> Optional[Tuple[FrozenSet[int], float]]:
    """
    Blocks added one at a time, the one leaving the smallest deficit first,
    until the leader coalition covers its task. Only used when the remaining
    blocks can cover the deficit and the covering coalition is worth more.
    """
    ctx = valuer.ctx
    if not blocks or _deficit(ctx, current) == 0 or \
            _deficit(ctx, current.union(*blocks)) > 0:
        return None
    added: FrozenSet[int] = frozenset()
    while _deficit(ctx, current | added) > 0:
        block = min((b for b in blocks if not b <= added),
                    key=lambda b: (_deficit(ctx, current | added | b), sorted(b)))
        added = added | block
    gain = valuer(current | added) - valuer(current)
    return (added, gain) if gain > eps else None


def _best_split(valuer: _Valuer, current: FrozenSet[int], leader_id: int,
                eps: float) -> Optional[Tuple[FrozenSet[int], float]]:
    followers = sorted(current - {leader_id})
    if not followers:
        return None
    max_size = len(followers) if len(current) <= c.max_split_enumeration else 1
    base = valuer(current)
    best = None
    for removed in _subsets(followers, max_size):
        gain = valuer(current - set(removed)) - base
        if gain > eps and (best is None or gain > best[1]):
            best = (frozenset(removed), gain)
    return best


def _next_merge(valuer: _Valuer, current: FrozenSet[int],
                blocks: List[FrozenSet[int]], eps: float
                ) -> Optional[Tuple[FrozenSet[int], float]]:
    return _best_merge(valuer, current, blocks, eps) or \
        _cover_deficit(valuer, current, blocks, eps)


def merge_split(leader_id: int, candidates: Sequence[UavProfile],
                ctx: ValuationContext, eps: Optional[float] = None,
                trace: Optional[List[dict]] = None) -> Coalition:
    """
    Merge-and-split search of the leader coalition over the candidates.
    :param leader_id: constant member of the coalition
    :param candidates: bidders, initially singleton coalitions
    :param ctx: valuation context of the leader
    :param eps: minimum value change of a merge or a split
    :param trace: receives one dict per merge or split step
    :return: the leader coalition with its optimized SNR
    """
    if ctx.leader_id != leader_id:
        raise NegotiationError(
            f'Context of leader {ctx.leader_id} used by leader {leader_id}')
    eps = ctx.params.merge_split_eps if eps is None else eps
    valuer = _Valuer(ctx)

    current = frozenset({leader_id})
    blocks = [frozenset({u.id}) for u in candidates if u.id != leader_id]
    while True:
        start_value = valuer(current)
        merge = _next_merge(valuer, current, blocks, eps)
        while merge is not None:
            merged, gain = merge
            blocks = [b for b in blocks if not b <= merged]
            current = current | merged
            logger.debug(f'Leader {leader_id} merges {sorted(merged)}: +{gain:.6g}')
            if trace is not None:
                trace.append({'step': 'merge', 'members': sorted(merged),
                              'value': valuer(current)})
            merge = _next_merge(valuer, current, blocks, eps)

        split = _best_split(valuer, current, leader_id, eps)
        if split is None:
            break
        removed, gain = split
        current = current - removed
        blocks.extend(frozenset({i}) for i in removed)
        logger.debug(f'Leader {leader_id} splits off {sorted(removed)}: +{gain:.6g}')
        if trace is not None:
            trace.append({'step': 'split', 'members': sorted(removed),
                          'value': valuer(current)})
        if abs(valuer(current) - start_value) <= eps:
            break

    return valuer.coalition(current)


def exhaustive_best(leader_id: int, candidates: Sequence[UavProfile],
                    ctx: ValuationContext) -> Coalition:
    """
    Best leader coalition over all subsets of the candidates. Ties keep the
    smallest coalition found first.
    """
    valuer = _Valuer(ctx)
    ids = sorted(u.id for u in candidates if u.id != leader_id)
    best, best_value = frozenset({leader_id}), valuer(())
    for size in range(1, len(ids) + 1):
        for subset in itertools.combinations(ids, size):
            value = valuer(subset)
            if value > best_value:
                best, best_value = frozenset(subset) | {leader_id}, value
    return valuer.coalition(best)


def optimality_gap(found: Coalition, candidates: Sequence[UavProfile],
                   ctx: ValuationContext) -> float:
    """
    Value lost by a merge-and-split result against the exhaustive optimum
    over the same candidates. Gaps above the merge-and-split tolerance are
    logged.
    """
    best = exhaustive_best(found.leader_id, candidates, ctx)
    gap = leader_value(best, ctx) - leader_value(found, ctx)
    if gap > ctx.params.merge_split_eps:
        logger.warning(f'Leader {found.leader_id}: merge-and-split '
                       f'{sorted(found.member_ids)} is {gap:.6g} below the optimum '
                       f'{sorted(best.member_ids)}')
    return gap


def follower_select(follower: UavProfile, offers: Mapping[int, Coalition],
                    contexts: Mapping[int, ValuationContext]
                    ) -> Tuple[int, List[int]]:
    """
    :param follower: UAV that received the formation requests
    :param offers: leader id -> offered coalition
    :param contexts: leader id -> valuation context of its task
    :return: leader answered Yes, leaders answered No
    """
    if not offers:
        raise NegotiationError(f'UAV {follower.id} received no offer')
    leaders = sorted(offers)
    chosen, best = leaders[0], None
    if len(leaders) > 1:
        for leader_id in leaders:
            utility = follower_utility(follower, offers[leader_id],
                                       contexts[leader_id])
            if best is None or utility > best:
                chosen, best = leader_id, utility
    return chosen, [i for i in leaders if i != chosen]


def negotiate(uavs: Mapping[int, UavProfile],
              contexts: Sequence[ValuationContext],
              state: Optional[NegotiationState] = None,
              round_index: int = 0) -> NegotiationOutcome:
    """
    Multi-leader negotiation until every leader is either settled with a
    coalition whose followers all accepted, or gives up on its task.
    :param uavs: every UAV of the network
    :param contexts: one valuation context per leader and task
    :param state: phases carried over from a previous negotiation
    :param round_index: simulation round, only used to tag events
    :return: formed coalitions by leader id, unserved task ids and the trace
    """
    by_leader = {ctx.leader_id: ctx for ctx in contexts}
    if len(by_leader) != len(contexts):
        raise NegotiationError('A leader can negotiate only one task at a time')
    if len({ctx.task.id for ctx in contexts}) != len(contexts):
        raise NegotiationError('Each task must have exactly one leader')
    unknown = set(by_leader) - set(uavs)
    if unknown:
        raise NegotiationError(f'Unknown leaders {sorted(unknown)}')

    state = state or NegotiationState.initial(uavs)
    events: List[dict] = []
    settled: Dict[int, Coalition] = {}
    available: Dict[int, FrozenSet[int]] = {}
    unserved: List[int] = []

    def emit(event: str, **payload):
        events.append({'round': round_index, 'iteration': iteration,
                       'event': event, **payload})

    iteration = 0
    pending = []
    for leader_id, ctx in sorted(by_leader.items()):
        leader = uavs[leader_id]
        state.set_phase([leader_id], Phase.PROPOSAL)
        if covers(leader.resources, ctx.task.required):
            settled[leader_id] = ctx.coalition(()).with_snr(
                ctx.snr_provider((leader_id,)))
            available[leader_id] = frozenset()
            state.set_phase([leader_id], Phase.EXECUTING)
            emit('self_sufficient', leader=leader_id, task=ctx.task.id)
        else:
            pending.append(leader_id)

    max_iterations = len(uavs) * max(len(by_leader), 1) + 1
    while pending:
        iteration += 1
        if iteration > max_iterations:
            raise NegotiationError(f'No agreement after {max_iterations} iterations')

        # leaders search against the same Search phase snapshot
        proposals: Dict[int, Coalition] = {}
        for leader_id in pending:
            ctx = by_leader[leader_id]
            bids = [u for u in collect_bids(leader_id, ctx.task, uavs, state)
                    if u.id not in state.refusals[leader_id]]
            emit('proposal', leader=leader_id, task=ctx.task.id,
                 bids=[u.id for u in bids])
            if not bids:
                unserved.append(ctx.task.id)
                state.set_phase([leader_id], Phase.SEARCH)
                emit('unserved', leader=leader_id, task=ctx.task.id,
                     reason='no bids')
                continue

            steps: List[dict] = []
            coalition = merge_split(leader_id, bids, ctx, trace=steps)
            emit('coalition', leader=leader_id, task=ctx.task.id,
                 members=list(coalition.ordered_members), steps=steps,
                 value=leader_value(coalition, ctx), snr=coalition.snr_opt)
            if not covers(coalition.aggregate, ctx.task.required) or \
                    not coalition.followers:
                unserved.append(ctx.task.id)
                state.set_phase([leader_id], Phase.SEARCH)
                emit('unserved', leader=leader_id, task=ctx.task.id,
                     reason='resource deficit')
                continue

            proposals[leader_id] = coalition
            available[leader_id] = frozenset(u.id for u in bids)

        offers: Dict[int, Dict[int, Coalition]] = defaultdict(dict)
        for leader_id, coalition in sorted(proposals.items()):
            for follower_id in coalition.followers:
                offers[follower_id][leader_id] = coalition
                state.pending_offers[follower_id].add(leader_id)
            state.set_phase(coalition.followers, Phase.BID)

        accepted: Dict[int, Set[int]] = defaultdict(set)
        for follower_id in sorted(offers):
            state.set_phase([follower_id], Phase.FORMATION)
            chosen, refused = follower_select(uavs[follower_id],
                                              offers[follower_id], by_leader)
            accepted[chosen].add(follower_id)
            for leader_id in refused:
                state.refuse(leader_id, follower_id)
            state.pending_offers[follower_id].clear()
            emit('response', follower=follower_id, yes=chosen, no=refused)

        pending = []
        for leader_id, coalition in sorted(proposals.items()):
            if accepted[leader_id] == set(coalition.followers):
                settled[leader_id] = coalition
                state.set_phase(coalition.member_ids, Phase.EXECUTING)
                emit('formed', leader=leader_id, task=coalition.task_id,
                     members=list(coalition.ordered_members))
            else:
                state.set_phase(accepted[leader_id], Phase.SEARCH)
                pending.append(leader_id)

    committed = set().union(*(s.member_ids for s in settled.values())) \
        if settled else set()
    available = {i: frozenset(ids - committed) for i, ids in available.items()
                 if i in settled}
    logger.debug(f'Negotiation ended after {iteration} iterations with '
                 f'{state.refusal_count} refusals from {state.refusing_uavs} UAVs')
    for task_id in unserved:
        logger.warning(f'Round {round_index}: task {task_id} unserved')
    return NegotiationOutcome(dict(sorted(settled.items())), sorted(unserved),
                              iteration, state, events, available)


def stability_check(partition: Mapping[int, Coalition],
                    contexts: Mapping[int, ValuationContext],
                    available: Mapping[int, Iterable[int]],
                    eps: float = c.merge_split_eps) -> bool:
    """
    True when no leader coalition gains more than eps by adjoining one of
    its available singletons or by splitting off some of its followers
    :param partition: leader id -> formed coalition
    :param contexts: leader id -> valuation context
    :param available: leader id -> ids of the uncommitted UAVs it may merge
    """
    members = [s.member_ids for s in partition.values()]
    for a, b in itertools.combinations(members, 2):
        if a & b:
            return False

    for leader_id, coalition in partition.items():
        if coalition.leader_id != leader_id:
            return False
        valuer = _Valuer(contexts[leader_id])
        current = coalition.member_ids
        base = valuer(current)
        for uav_id in sorted(set(available.get(leader_id, ())) - current):
            if valuer(current | {uav_id}) > base + eps:
                return False
        if _best_split(valuer, current, leader_id, eps) is not None:
            return False
    return True
