"""VALUATION
Coalition value of a leader and offer utility of a follower.

License: MIT
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from libs.credit import ContributionReport, CreditLedger, contribution_deltas
from libs.domain import Coalition, GameParams, TaskDescriptor, UavProfile, \
    gamma_ratio, travel_time

SnrProvider = Callable[[Sequence[int]], float]


@dataclass(frozen=True)
class ValuationContext:
    """
    Everything a leader needs to value coalitions for one task during one
    negotiation round.
    :param leader_id: the evaluating leader
    :param uavs: profiles of every UAV that may appear in a coalition
    :param deadline: deadline threshold of the task
    :param snr_provider: optimized SNR of an ordered member tuple, leader first
    """
    params: GameParams
    ledger: CreditLedger
    task: TaskDescriptor
    leader_id: int
    uavs: Mapping[int, UavProfile]
    deadline: float
    snr_provider: SnrProvider

    def members(self, coalition: Coalition):
        return [self.uavs[i] for i in coalition.ordered_members]

    def coalition(self, member_ids) -> Coalition:
        """
        Leader-rooted coalition of the context task over the given ids
        """
        ids = set(member_ids) | {self.leader_id}
        return Coalition.form(self.leader_id,
                              [self.uavs[i] for i in sorted(ids)],
                              self.task.id)


def credit_term(coalition: Coalition, ctx: ValuationContext) -> float:
    return ctx.params.alpha1 * sum(ctx.ledger.credit(i)
                                   for i in coalition.followers)


def snr_term(snr: float, ctx: ValuationContext) -> float:
    p = ctx.params
    return p.alpha2 * gamma_ratio(-p.big_L, p.gamma_eps, p.snr_threshold, snr)


def resource_term(coalition: Coalition, ctx: ValuationContext) -> float:
    """
    Requirement over aggregate for every required type. A deficit saturates
    to -L, a surplus scores below 1.
    """
    p = ctx.params
    return p.alpha3 * sum(
        gamma_ratio(-p.big_L, p.gamma_eps, tau, r)
        for tau, r in zip(ctx.task.required, coalition.aggregate) if tau > 0)


def deadline_term(coalition: Coalition, ctx: ValuationContext) -> float:
    p = ctx.params
    slowest = max(travel_time(uav, ctx.task) for uav in ctx.members(coalition))
    return -gamma_ratio(p.big_L, p.gamma_eps, slowest, ctx.deadline)


def leader_value(coalition: Coalition, ctx: ValuationContext) -> float:
    """
    Value of a coalition for the leader of ctx. Coalitions without that
    leader are worth 0.
    """
    if ctx.leader_id not in coalition.member_ids:
        return 0.0
    snr = coalition.snr_opt
    if snr is None:
        snr = ctx.snr_provider(coalition.ordered_members)
    return (credit_term(coalition, ctx) + snr_term(snr, ctx) +
            resource_term(coalition, ctx) + deadline_term(coalition, ctx))


def expected_credit_delta(uav_id: int, offer: Coalition,
                          ctx: ValuationContext) -> float:
    """
    Credit increment the UAV would earn if every member of the offer
    expended all it commits
    """
    reports = [ContributionReport(m.id, m.resources, m.resources)
               for m in ctx.members(offer)]
    return contribution_deltas(offer, ctx.task.required, reports)[uav_id]


def follower_utility(uav: UavProfile, offer: Coalition,
                     ctx: ValuationContext) -> float:
    return expected_credit_delta(uav.id, offer, ctx) - \
        ctx.params.alpha4 * travel_time(uav, ctx.task)
