"""HARNESS
Multi-round simulation: tasks are refreshed, channels drawn, coalitions
negotiated and executed, credits updated and the metrics of every round
collected. The nearest-UAV assignment runs on the same worlds as a
baseline.

License: MIT
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd

from libs.beamforming import CoalitionSnr
from libs.constants import Constants as c
from libs.credit import ContributionReport, CreditLedger, \
    DegenerateCoalitionError, contribution_deltas
from libs.domain import Coalition, TaskDescriptor, covers, travel_time
from libs.negotiation import NegotiationOutcome, negotiate
from libs.scenario import RoundChannels, ScenarioConfig, World, \
    generate_scenario, refresh_tasks
from libs.utils import read_jsonl, write_jsonl
from libs.valuation import ValuationContext

logger = logging.getLogger('uavsim')

COALITION = 'coalition'
BASELINE = 'baseline'


class HarnessError(ValueError):
    pass


def efficiency_factor(coalition: Coalition, task: TaskDescriptor) -> float:
    """
    Mean over the required types of aggregate over requirement. Types with
    no requirement or a non-consumable aggregate are left out of the mean.
    """
    if not coalition.member_ids:
        raise HarnessError('Efficiency factor of an empty coalition')
    ratios = [r / t for r, t in zip(coalition.aggregate, task.required)
              if t > 0 and math.isfinite(r)]
    if not ratios:
        raise HarnessError(f'Task {task.id} has no finite requirement to measure')
    return sum(ratios) / len(ratios)


def baseline_nearest(world: World,
                     tasks: Optional[Mapping[int, TaskDescriptor]] = None
                     ) -> Dict[int, Coalition]:
    """
    Closest followers are assigned to each task, in task id order, until the
    coalition covers the requirement or no follower is left. Resources only
    decide when to stop.
    :return: task id -> coalition rooted at the task leader
    """
    tasks = world.tasks if tasks is None else tasks
    free = {u.id: u for u in world.followers}
    coalitions = {}
    for task_id, task in sorted(tasks.items()):
        leader = world.uavs[world.leader_of_task[task_id]]
        members = [leader]
        nearest = sorted(free.values(), key=lambda u: (travel_time(u, task), u.id))
        for uav in nearest:
            if covers(Coalition.form(leader.id, members, task_id).aggregate,
                      task.required):
                break
            members.append(uav)
            del free[uav.id]
        coalitions[task_id] = Coalition.form(leader.id, members, task_id)
    return coalitions


def execute(coalition: Coalition, world: World) -> List[ContributionReport]:
    """
    Every member commits its resources and expends what its behavior allows
    """
    reports = []
    for uav_id in coalition.ordered_members:
        uav = world.uavs[uav_id]
        reports.append(ContributionReport(
            uav_id, uav.resources, uav.behavior.expend(uav.resources)))
    return reports


def deplete(world: World, reports: Sequence[ContributionReport]) -> World:
    uavs = dict(world.uavs)
    for report in reports:
        uav = uavs[report.uav_id]
        uavs[report.uav_id] = uav.with_resources(uav.resources.minus(report.actual))
    return world.with_uavs(uavs)


@dataclass
class RoundReport:
    round: int
    coalitions: Dict[int, Coalition]
    efficiency: Dict[Tuple[int, str], float]
    credits: Dict[int, float]
    snr: List[dict]
    served: List[int]
    failed: List[int]
    negotiation_rounds: int = 0
    refusals: int = 0
    refusing_uavs: int = 0

    def summary_event(self, capacity: float) -> dict:
        return {'round': self.round, 'event': 'round',
                'served': self.served, 'failed': self.failed,
                'negotiation_rounds': self.negotiation_rounds,
                'refusals': self.refusals,
                'refusing_uavs': self.refusing_uavs,
                'coalitions': {task: list(s.ordered_members)
                               for task, s in self.coalitions.items()},
                'efficiency': [{'task_id': t, 'method': m, 'ef': ef}
                               for (t, m), ef in sorted(self.efficiency.items())],
                'credits': self.credits, 'capacity': capacity}


@dataclass
class SimulationResult:
    config: ScenarioConfig
    reports: List[RoundReport] = field(default_factory=list)
    events: List[dict] = field(default_factory=list)
    ledger: Optional[CreditLedger] = None
    credit_history: List[dict] = field(default_factory=list)

    def credits_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.credit_history, columns=c.credits_columns)

    def efficiency_frame(self) -> pd.DataFrame:
        rows = [{'round': r.round, 'task_id': task_id, 'method': method, 'ef': ef}
                for r in self.reports
                for (task_id, method), ef in sorted(r.efficiency.items())]
        return pd.DataFrame(rows, columns=c.efficiency_columns)

    def snr_frame(self) -> pd.DataFrame:
        rows = [row for r in self.reports for row in r.snr]
        return pd.DataFrame(rows, columns=c.snr_columns)


class Simulation:
    """
    State carried from one round to the next: the world (resources may be
    depleted) and the credit ledger
    """
    def __init__(self, config: ScenarioConfig,
                 relative_precision: float = c.relative_precision,
                 method: str = COALITION):
        if method not in (COALITION, BASELINE):
            raise HarnessError(f'Unknown method {method}')
        self.config = config
        self.method = method
        self.relative_precision = relative_precision
        self.world = generate_scenario(config)
        self.ledger = CreditLedger.initial(config.uav_ids,
                                           self.world.params.initial_credit)
        self.result = SimulationResult(config, ledger=self.ledger,
                                       credit_history=self.ledger.records())

    def contexts(self, world: World,
                 channels: RoundChannels) -> List[ValuationContext]:
        power_caps = {i: u.power_cap for i, u in world.uavs.items()}
        contexts = []
        for task_id, task in sorted(world.tasks.items()):
            leader_id = world.leader_of_task[task_id]
            provider = CoalitionSnr(
                lambda members, task_id=task_id: channels.for_coalition(task_id, members),
                power_caps, self.relative_precision)
            contexts.append(ValuationContext(
                world.params, self.ledger, task, leader_id, world.uavs,
                world.deadline, provider))
        return contexts

    def negotiate_round(self, round_index: int
                        ) -> Tuple[World, NegotiationOutcome, List[ValuationContext]]:
        world = refresh_tasks(self.world, round_index)
        channels = RoundChannels(world, round_index)
        contexts = self.contexts(world, channels)
        outcome = negotiate(world.uavs, contexts, round_index=round_index)
        return world, outcome, contexts

    def step(self, round_index: int) -> RoundReport:
        if self.method == COALITION:
            world, outcome, contexts = self.negotiate_round(round_index)
            providers = {ctx.leader_id: ctx.snr_provider for ctx in contexts}
            formed = {s.task_id: s for s in outcome.coalitions.values()}
            events = outcome.events
        else:
            world = refresh_tasks(self.world, round_index)
            outcome, providers, events = None, {}, []
            formed = baseline_nearest(world)

        served, failed, deltas, spent = [], [], [], []
        efficiency: Dict[Tuple[int, str], float] = {}
        snr_rows = []
        for task_id, coalition in sorted(formed.items()):
            task = world.tasks[task_id]
            if not covers(coalition.aggregate, task.required):
                failed.append(task_id)
                continue
            reports = execute(coalition, world)
            try:
                deltas.append(contribution_deltas(coalition, task.required, reports))
            except DegenerateCoalitionError as e:
                logger.warning(f'Round {round_index}: {e}')
                failed.append(task_id)
                continue
            spent.extend(reports)
            served.append(task_id)
            efficiency[(task_id, self.method)] = efficiency_factor(coalition, task)
            if coalition.leader_id in providers:
                solution = providers[coalition.leader_id].solve(
                    coalition.ordered_members)
                snr_rows.append({'round': round_index, 'coalition': coalition.label(),
                                 'snr': solution.snr, 't_up': solution.t_up,
                                 'iterations': solution.iterations})

        if outcome is not None:
            failed.extend(outcome.unserved)
            for task_id, coalition in baseline_nearest(world).items():
                if covers(coalition.aggregate, world.tasks[task_id].required):
                    efficiency[(task_id, BASELINE)] = efficiency_factor(
                        coalition, world.tasks[task_id])

        self.ledger = self.ledger.apply(deltas)
        if self.config.resource_depletion:
            world = deplete(world, spent)
        self.world = world

        report = RoundReport(
            round=round_index, coalitions=formed if outcome is None else
            {s.task_id: s for s in outcome.coalitions.values()},
            efficiency=efficiency, credits=self.ledger.credits, snr=snr_rows,
            served=sorted(served), failed=sorted(set(failed)),
            negotiation_rounds=outcome.rounds if outcome else 0,
            refusals=outcome.refusal_count if outcome else 0,
            refusing_uavs=outcome.refusing_uavs if outcome else 0)

        self.result.reports.append(report)
        self.result.events.extend(events)
        self.result.events.append(report.summary_event(self.ledger.capacity))
        self.result.credit_history.extend(
            {**record, 'round': round_index} for record in self.ledger.records())
        self.result.ledger = self.ledger
        logger.info(f'Round {round_index}: served {report.served} '
                    f'failed {report.failed} in {report.negotiation_rounds} '
                    f'negotiation rounds')
        return report


def run_simulation(config: ScenarioConfig, n_rounds: int,
                   relative_precision: float = c.relative_precision,
                   method: str = COALITION) -> SimulationResult:
    """
    :param config: scenario configuration
    :param n_rounds: number of operation rounds, numbered from 1
    :param relative_precision: bisection precision relative to t_up
    :param method: coalition formation or nearest-UAV baseline only
    :return: round reports, negotiation trace and credit history
    """
    if n_rounds < 1:
        raise HarnessError(f'At least one round is required: {n_rounds}')
    simulation = Simulation(config, relative_precision, method)
    for round_index in range(1, n_rounds + 1):
        simulation.step(round_index)
    return simulation.result


def write_outputs(result: SimulationResult, out_dir: Union[str, Path],
                  output_format: str = 'csv') -> List[Path]:
    """
    Tables as csv or jsonl and the negotiation trace as events.jsonl
    """
    if output_format not in c.output_formats:
        raise HarnessError(f'Unknown output format {output_format}')
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    tables = {'credits': result.credits_frame(),
              'efficiency': result.efficiency_frame(),
              'snr': result.snr_frame()}
    for name, df in tables.items():
        path = out_dir / f'{name}.{output_format}'
        if output_format == 'csv':
            df.to_csv(path, index=False, float_format=c.float_format)
        else:
            write_jsonl(df.to_dict(orient='records'), path)
        written.append(path)

    events_path = out_dir / 'events.jsonl'
    write_jsonl(result.events, events_path)
    written.append(events_path)
    return written


def summarize(out_dir: Union[str, Path]) -> pd.DataFrame:
    """
    Recompute the run metrics from events.jsonl and store them in
    summary.csv
    """
    out_dir = Path(out_dir)
    events_path = out_dir / 'events.jsonl'
    if not events_path.exists():
        raise HarnessError(f'No events.jsonl in {out_dir}')
    rounds = [e for e in read_jsonl(events_path) if e.get('event') == 'round']
    if not rounds:
        raise HarnessError(f'{events_path} holds no round summary')

    efficiency = pd.DataFrame(
        [row for e in rounds for row in e['efficiency']],
        columns=['task_id', 'method', 'ef'])
    rows = [{'metric': 'rounds', 'key': '', 'value': len(rounds)},
            {'metric': 'served', 'key': '',
             'value': sum(len(e['served']) for e in rounds)},
            {'metric': 'failed', 'key': '',
             'value': sum(len(e['failed']) for e in rounds)}]
    for method, ef in efficiency.groupby('method')['ef']:
        rows.append({'metric': 'mean_ef', 'key': method, 'value': ef.mean()})

    last = rounds[-1]
    for uav_id, credit in sorted(last['credits'].items(), key=lambda x: int(x[0])):
        rows.append({'metric': 'credit', 'key': uav_id, 'value': credit})
        rows.append({'metric': 'normalized_credit', 'key': uav_id,
                     'value': credit / last['capacity']})

    summary = pd.DataFrame(rows, columns=['metric', 'key', 'value'])
    summary.to_csv(out_dir / 'summary.csv', index=False,
                   float_format=c.float_format)
    return summary
