from django.test import SimpleTestCase
import logging

from libs import negotiation
from libs.domain import Coalition, covers
from libs.harness import Simulation
from libs.negotiation import NegotiationError, NegotiationState, Phase
from libs.scenario import ScenarioConfig
from libs.valuation import leader_value
from tests.testing_utils import make_context, make_task, make_uav

logger = logging.getLogger('uavsim')


class CollectBidsTest(SimpleTestCase):
    def setUp(self):
        self.uavs = {1: make_uav(1, (0.5, 0, 0), leader=True),
                     2: make_uav(2, (0, 1, 0), leader=True),
                     3: make_uav(3, (1, 0, 0)),
                     4: make_uav(4, (0, 0, 1)),
                     5: make_uav(5, (0, 2, 0))}
        self.task = make_task(1, (1, 1, 0))

    def test_overlap(self):
        state = NegotiationState.initial(self.uavs)
        bids = negotiation.collect_bids(1, self.task, self.uavs, state)
        self.assertEqual([u.id for u in bids], [3, 5])

    def test_executing_excluded(self):
        state = NegotiationState.initial(self.uavs)
        state.set_phase([5], Phase.EXECUTING)
        bids = negotiation.collect_bids(1, self.task, self.uavs, state)
        self.assertEqual([u.id for u in bids], [3])

    def test_no_shared_type(self):
        state = NegotiationState.initial(self.uavs)
        bids = negotiation.collect_bids(1, make_task(1, (0, 0, 5)), self.uavs, state)
        self.assertEqual([u.id for u in bids], [4])
        self.assertEqual(negotiation.collect_bids(
            1, make_task(1, (0, 0, 5)), {1: self.uavs[1], 3: self.uavs[3]},
            NegotiationState.initial([1, 3])), [])


class MergeSplitTest(SimpleTestCase):
    def setUp(self):
        self.leader = make_uav(1, (0.5, 0.5), leader=True)
        self.task = make_task(1, (1, 1))

    def test_merge_removes_deficit(self):
        helper = make_uav(3, (0.5, 0.5), position=(1, 0, 0))
        ctx = make_context(1, [self.leader, helper], self.task)
        trace = []
        coalition = negotiation.merge_split(1, [helper], ctx, trace=trace)
        self.assertEqual(coalition.member_ids, {1, 3})
        self.assertEqual(coalition.snr_opt, 1.0)
        self.assertEqual(trace[0]['step'], 'merge')
        singleton = ctx.coalition(())
        self.assertGreater(leader_value(coalition, ctx),
                           leader_value(singleton, ctx) + ctx.params.big_L / 2)

    def test_late_useless_candidate_ignored(self):
        leader = make_uav(1, (1, 1), leader=True)
        late = make_uav(3, (0.1, 0.1), position=(100, 0, 0))
        ctx = make_context(1, [leader, late], self.task)
        coalition = negotiation.merge_split(1, [late], ctx)
        self.assertEqual(coalition.member_ids, {1})
        self.assertEqual(negotiation.exhaustive_best(1, [late], ctx).member_ids, {1})

    def test_nearest_equal_candidate_chosen(self):
        near = make_uav(3, (0.5, 0.5), position=(1, 0, 0))
        far = make_uav(4, (0.5, 0.5), position=(6, 0, 0))
        ctx = make_context(1, [self.leader, near, far], self.task)
        coalition = negotiation.merge_split(1, [near, far], ctx)
        self.assertEqual(coalition.member_ids, {1, 3})

    def test_low_credit_ranked_below(self):
        cooperative = make_uav(3, (0.5, 0.5))
        selfish = make_uav(4, (0.5, 0.5))
        ctx = make_context(1, [self.leader, cooperative, selfish], self.task,
                           credits={1: 1.0, 3: 0.8, 4: 0.0})
        coalition = negotiation.merge_split(1, [selfish, cooperative], ctx)
        self.assertEqual(coalition.member_ids, {1, 3})

    def test_matches_exhaustive_optimum(self):
        big = make_uav(3, (1, 1))
        small = make_uav(4, (0.5, 0.5))
        ctx = make_context(1, [self.leader, big, small], self.task,
                           credits={1: 1.0, 3: 1.0, 4: 1.0})
        coalition = negotiation.merge_split(1, [big, small], ctx)
        best = negotiation.exhaustive_best(1, [big, small], ctx)
        self.assertAlmostEqual(leader_value(coalition, ctx), leader_value(best, ctx))
        self.assertLessEqual(negotiation.optimality_gap(coalition, [big, small], ctx),
                             ctx.params.merge_split_eps)

    def test_pair_covers_where_no_single_helps(self):
        leader = make_uav(1, (0.25, 0.25), leader=True)
        first = make_uav(3, (0.5, 0.5), position=(6, 0, 0))
        second = make_uav(4, (0.5, 0.5), position=(0, 6, 0))
        ctx = make_context(1, [leader, first, second], self.task)
        trace = []
        coalition = negotiation.merge_split(1, [first, second], ctx, trace=trace)
        self.assertEqual(coalition.member_ids, {1, 3, 4})
        self.assertTrue(covers(coalition.aggregate, self.task.required))
        self.assertEqual([(s['step'], s['members']) for s in trace],
                         [('merge', [3, 4])])

    def test_deficit_covered_beyond_enumeration(self):
        leader = make_uav(1, (0.25, 0.25), leader=True)
        helpers = [make_uav(i, (0.125, 0.125), position=(6, 0, 0))
                   for i in range(3, 12)]
        credits = {1: 1.0, **{u.id: 0.0 for u in helpers}}
        ctx = make_context(1, [leader] + helpers, self.task, credits=credits)
        coalition = negotiation.merge_split(1, helpers, ctx)
        self.assertEqual(coalition.member_ids, {1, 3, 4, 5, 6, 7, 8})
        self.assertTrue(covers(coalition.aggregate, self.task.required))

    def test_context_of_another_leader(self):
        ctx = make_context(1, [self.leader], self.task)
        with self.assertRaises(NegotiationError):
            negotiation.merge_split(2, [], ctx)


class FollowerSelectTest(SimpleTestCase):
    def setUp(self):
        self.follower = make_uav(3, (1, 0))
        self.leaders = {1: make_uav(1, (1, 1), leader=True),
                        2: make_uav(2, (1, 1), leader=True)}

    def offer(self, leader_id, location):
        members = [self.leaders[leader_id], self.follower]
        ctx = make_context(leader_id, members,
                           make_task(leader_id, (1, 1), location=location))
        return Coalition.form(leader_id, members, leader_id), ctx

    def test_single_offer(self):
        offer, ctx = self.offer(2, (50, 0, 0))
        self.assertEqual(negotiation.follower_select(self.follower, {2: offer}, {2: ctx}),
                         (2, []))

    def test_best_utility(self):
        far, far_ctx = self.offer(1, (3.2, 0, 0))
        near, near_ctx = self.offer(2, (2, 0, 0))
        chosen, refused = negotiation.follower_select(
            self.follower, {1: far, 2: near}, {1: far_ctx, 2: near_ctx})
        self.assertEqual((chosen, refused), (2, [1]))

    def test_tie_lowest_leader(self):
        first, first_ctx = self.offer(1, (2, 0, 0))
        second, second_ctx = self.offer(2, (0, 2, 0))
        chosen, refused = negotiation.follower_select(
            self.follower, {2: second, 1: first}, {1: first_ctx, 2: second_ctx})
        self.assertEqual((chosen, refused), (1, [2]))

    def test_no_offer(self):
        with self.assertRaises(NegotiationError):
            negotiation.follower_select(self.follower, {}, {})


class NegotiateTest(SimpleTestCase):
    def contexts(self, uavs, tasks, credits=None):
        return [make_context(leader_id, uavs, task, credits=credits)
                for leader_id, task in tasks.items()]

    def test_no_contention(self):
        uavs = [make_uav(1, (0.5, 0.5), leader=True),
                make_uav(2, (0.5, 0.5), position=(5, 0, 0), leader=True),
                make_uav(3, (0.5, 0.5)),
                make_uav(4, (0.5, 0.5), position=(5, 0, 0))]
        tasks = {1: make_task(1, (1, 1)), 2: make_task(2, (1, 1), (5, 0, 0))}
        contexts = self.contexts(uavs, tasks)
        outcome = negotiation.negotiate({u.id: u for u in uavs}, contexts)
        self.assertEqual(outcome.rounds, 1)
        self.assertEqual(outcome.refusal_count, 0)
        self.assertEqual(outcome.coalitions[1].member_ids, {1, 3})
        self.assertEqual(outcome.coalitions[2].member_ids, {2, 4})
        self.assertEqual(outcome.state.phase(3), Phase.EXECUTING)
        self.assertTrue(negotiation.stability_check(
            outcome.coalitions, {c.leader_id: c for c in contexts},
            outcome.available))

    def test_contested_follower(self):
        uavs = [make_uav(1, (0.5, 0.5), leader=True),
                make_uav(2, (0.5, 0.5), position=(2, 0, 0), leader=True),
                make_uav(3, (0.5, 0.5), position=(1, 0, 0)),
                make_uav(4, (0.5, 0.5), position=(-6, 0, 0))]
        tasks = {1: make_task(1, (1, 1)), 2: make_task(2, (1, 1), (2, 0, 0))}
        contexts = self.contexts(uavs, tasks)
        outcome = negotiation.negotiate({u.id: u for u in uavs}, contexts)

        self.assertEqual(outcome.rounds, 2)
        self.assertEqual(outcome.refusal_count, 1)
        self.assertEqual(outcome.refusing_uavs, 1)
        self.assertEqual(outcome.state.refusals[2], {3})
        self.assertEqual(outcome.coalitions[1].member_ids, {1, 3})
        self.assertEqual(outcome.coalitions[2].member_ids, {2, 4})
        responses = [e for e in outcome.events if e['event'] == 'response']
        self.assertEqual(responses[0], {'round': 0, 'iteration': 1,
                                        'event': 'response', 'follower': 3,
                                        'yes': 1, 'no': [2]})
        first_bids = {e['leader']: e['bids'] for e in outcome.events
                      if e['event'] == 'proposal' and e['iteration'] == 1}
        self.assertEqual(first_bids, {1: [3, 4], 2: [3, 4]})

    def test_unserved_without_bids(self):
        uavs = [make_uav(1, (0.5, 0.5), leader=True), make_uav(3, (0, 0))]
        contexts = self.contexts(uavs, {1: make_task(1, (1, 1))})
        outcome = negotiation.negotiate({u.id: u for u in uavs}, contexts)
        self.assertEqual(outcome.unserved, [1])
        self.assertEqual(outcome.coalitions, {})
        self.assertEqual(outcome.state.phase(1), Phase.SEARCH)

    def test_unserved_with_deficit(self):
        uavs = [make_uav(1, (0.2, 0.2), leader=True), make_uav(3, (0.2, 0.2))]
        contexts = self.contexts(uavs, {1: make_task(1, (1, 1))})
        outcome = negotiation.negotiate({u.id: u for u in uavs}, contexts)
        self.assertEqual(outcome.unserved, [1])
        self.assertEqual(outcome.state.phase(3), Phase.SEARCH)
        self.assertFalse(any(e['event'] == 'response' for e in outcome.events))

    def test_self_sufficient_leader(self):
        uavs = [make_uav(1, (2, 2), leader=True), make_uav(3, (1, 1))]
        contexts = self.contexts(uavs, {1: make_task(1, (1, 1))})
        outcome = negotiation.negotiate({u.id: u for u in uavs}, contexts)
        self.assertEqual(outcome.coalitions[1].member_ids, {1})
        self.assertEqual(outcome.rounds, 0)
        self.assertEqual(outcome.events[0]['event'], 'self_sufficient')

    def test_one_task_per_leader(self):
        uavs = [make_uav(1, (1, 1), leader=True)]
        contexts = self.contexts(uavs, {1: make_task(1, (1, 1))}) * 2
        with self.assertRaises(NegotiationError):
            negotiation.negotiate({1: uavs[0]}, contexts)


class StabilityTest(SimpleTestCase):
    def setUp(self):
        self.uavs = [make_uav(1, (0.5, 0.5), leader=True),
                     make_uav(3, (0.5, 0.5), position=(1, 0, 0)),
                     make_uav(4, (0.5, 0.5), position=(2, 0, 0))]
        self.ctx = make_context(1, self.uavs, make_task(1, (1, 1)))

    def test_singleton_with_profitable_merge(self):
        partition = {1: self.ctx.coalition(())}
        self.assertFalse(negotiation.stability_check(partition, {1: self.ctx},
                                                     {1: [3, 4]}))

    def test_removable_member(self):
        partition = {1: self.ctx.coalition((3, 4))}
        self.assertFalse(negotiation.stability_check(partition, {1: self.ctx}, {1: []}))

    def test_overlap(self):
        other = make_context(2, self.uavs + [make_uav(2, (1, 1), leader=True)],
                             make_task(2, (1, 1)))
        partition = {1: self.ctx.coalition((3,)), 2: other.coalition((3,))}
        self.assertFalse(negotiation.stability_check(
            partition, {1: self.ctx, 2: other}, {}))

    def test_stable(self):
        partition = {1: self.ctx.coalition((3,))}
        self.assertTrue(negotiation.stability_check(partition, {1: self.ctx},
                                                    {1: [4]}))


class SeededNegotiationTest(SimpleTestCase):
    """
    Termination, stability and merge-and-split quality on generated worlds
    """
    def test_seeded_negotiations(self):
        matches = instances = 0
        for seed in range(100):
            simulation = Simulation(ScenarioConfig(seed=seed))
            world, outcome, contexts = simulation.negotiate_round(1)
            by_leader = {ctx.leader_id: ctx for ctx in contexts}

            self.assertLessEqual(outcome.rounds, outcome.refusing_uavs + 1)
            self.assertTrue(negotiation.stability_check(
                outcome.coalitions, by_leader, outcome.available))
            members = [s.member_ids for s in outcome.coalitions.values()]
            self.assertEqual(sum(len(m) for m in members), len(set().union(*members)))
            for leader_id, coalition in outcome.coalitions.items():
                self.assertIn(leader_id, coalition.member_ids)

            for ctx in contexts:
                bids = negotiation.collect_bids(
                    ctx.leader_id, ctx.task, world.uavs,
                    NegotiationState.initial(world.uavs))
                if not bids:
                    continue
                found = negotiation.merge_split(ctx.leader_id, bids, ctx)
                gap = negotiation.optimality_gap(found, bids, ctx)
                best = negotiation.exhaustive_best(ctx.leader_id, bids, ctx)
                if covers(best.aggregate, ctx.task.required):
                    self.assertTrue(covers(found.aggregate, ctx.task.required))
                self.assertGreaterEqual(gap, -ctx.params.merge_split_eps)
                self.assertGreaterEqual(leader_value(found, ctx),
                                        leader_value(ctx.coalition(()), ctx))
                instances += 1
                if gap <= ctx.params.merge_split_eps:
                    matches += 1
        logger.info(f'Merge-and-split reached the optimum on {matches}/{instances}')
        self.assertGreater(instances, 0)
        self.assertGreaterEqual(matches / instances, 0.9)
