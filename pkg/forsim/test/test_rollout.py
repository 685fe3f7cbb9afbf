import math
import unittest
from unittest import mock

import numpy as np

from forsim import agents
from forsim.agents import PredictorParams
from forsim.config import SimConfig
from forsim.metrics import episode_metrics
from forsim.policy import LatticePolicy, generate_candidates
from forsim.rollout import (OthersParadigm, RealTimeLoop, TooFewBranches, branch_dispersion,
                            forward_simulate, modality_drift, simulate_episode, worker_count)
from forsim.selection import Paradigm
from forsim.test.test_agents import arc_scenario, yaw_memory
from forsim.test.test_world import static
from forsim.world import AgentState, CandidateSet, WorldState, load_scenario

def setup_world(name, cfg):
    scenario = load_scenario(static(name))
    world = WorldState.from_scenario(scenario, cfg.history)
    policy = LatticePolicy.from_config(cfg)
    return world, policy, generate_candidates(world, policy, cfg)

class BranchTests(unittest.TestCase):
    def setUp(self):
        self.cfg = SimConfig(horizon=8)
        self.world, self.policy, self.cands = setup_world('follow-brake.json', self.cfg)
        self.predictor = PredictorParams.zeros(self.cfg)

    def simulate(self, center, others):
        return forward_simulate(self.world, self.cands, center, others, self.predictor,
                                self.policy, self.cfg)

    def test_one_branch_per_candidate(self):
        branches = self.simulate(Paradigm.TRAJECTORY_ALIGNED, OthersParadigm.STEPWISE_PREDICTION)
        self.assertEqual(len(branches), 12)
        self.assertEqual([b.seed_index for b in branches],
                         [(i, j) for i in range(3) for j in range(4)])
        for branch in branches:
            self.assertFalse(branch.failed)
            self.assertEqual(len(branch.states), self.cfg.horizon + 2)
            self.assertEqual(len(branch.selected), self.cfg.horizon + 1)
            self.assertIs(branch.states[0], self.world)
            self.assertEqual(branch.selected[:2], (branch.seed_index,) * 2)
            self.assertEqual([w.step for w in branch.states], list(range(self.cfg.horizon + 2)))

    def test_threads_do_not_change_results(self):
        cfg = SimConfig(horizon=8, candidate_noise=0.5)
        noisy = LatticePolicy.from_config(cfg)
        runs = [forward_simulate(self.world, self.cands, Paradigm.MAX_LIKELIHOOD,
                                 OthersParadigm.STEPWISE_PREDICTION, self.predictor, noisy, cfg,
                                 seed=4, threads=threads) for threads in (1, 3)]
        one, many = runs
        for a, b in zip(one, many):
            np.testing.assert_array_equal(a.center_array(), b.center_array())
            self.assertEqual(a.selected, b.selected)

    def test_same_seed_same_branches(self):
        cfg = SimConfig(horizon=8, candidate_noise=0.5)
        noisy = LatticePolicy.from_config(cfg)
        runs = [forward_simulate(self.world, self.cands, Paradigm.TRAJECTORY_ALIGNED,
                                 OthersParadigm.STEPWISE_PREDICTION, self.predictor, noisy, cfg,
                                 seed=7, threads=1) for _ in range(2)]
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a.center_array(), b.center_array())
            self.assertEqual(a.selected, b.selected)
            self.assertEqual(a.lines, b.lines)

    def count_predictions(self, others):
        cfg = SimConfig(horizon=8, n_ref=1, n_lon=1)
        world, policy, cands = setup_world('follow-brake.json', cfg)
        with mock.patch('forsim.agents.predict', wraps=agents.predict) as predict:
            branches = forward_simulate(world, cands, Paradigm.TRAJECTORY_TRACKING, others,
                                        PredictorParams.zeros(cfg), policy, cfg, threads=1)
        self.assertEqual(len(branches), 1)
        self.assertFalse(branches[0].failed)
        return predict.call_count

    def test_single_prediction_predicts_once(self):
        self.assertEqual(self.count_predictions(OthersParadigm.SINGLE_PREDICTION), 1)
        self.assertEqual(self.count_predictions(OthersParadigm.CONSTANT_ACTION), 0)

    def test_stepwise_prediction_predicts_every_step(self):
        self.assertEqual(self.count_predictions(OthersParadigm.STEPWISE_PREDICTION), 9)

    def test_perfect_tracking_replays_seed(self):
        branches = self.simulate(Paradigm.PERFECT_TRACKING, OthersParadigm.CONSTANT_ACTION)
        for branch in branches:
            seed = self.cands.trajectory(*branch.seed_index)
            for k in range(1, self.cfg.horizon):
                np.testing.assert_allclose(branch.states[k].center.state.as_array(),
                                           seed.points[k], atol=1e-12)

    def test_constant_action_others(self):
        branch = self.simulate(Paradigm.PERFECT_TRACKING, OthersParadigm.CONSTANT_ACTION)[0]
        speeds = [w.others[1].state.speed for w in branch.states]
        np.testing.assert_allclose(speeds[:6], 8.0 - 0.4 * np.arange(6))
        np.testing.assert_allclose([w.others[0].state.speed for w in branch.states], 8.0)

    def test_single_prediction_others(self):
        branch = self.simulate(Paradigm.PERFECT_TRACKING, OthersParadigm.SINGLE_PREDICTION)[5]
        xs = [w.others[0].state.x for w in branch.states]
        np.testing.assert_allclose(xs, 10.0 + 0.8 * np.arange(self.cfg.horizon + 2))

    def test_history_windows_follow_branch(self):
        branch = self.simulate(Paradigm.TRAJECTORY_TRACKING, OthersParadigm.STEPWISE_PREDICTION)[3]
        last = branch.states[-1]
        np.testing.assert_array_equal(last.histories[0][-1], last.others[0].state.as_array())
        np.testing.assert_array_equal(last.histories[0][-2],
                                      branch.states[-2].others[0].state.as_array())

    def test_lost_center_fails_branch(self):
        cfg = SimConfig(horizon=8, reach=0.2)
        scenario = load_scenario(static('minimal.json'))
        north = AgentState.from_angle(0.0, 0.0, math.pi / 2, 5.0)
        world = WorldState(scenario.map, scenario.center.moved(north))
        points = np.array([AgentState.from_angle(0.0, 0.5 * k, math.pi / 2, 5.0).as_array()
                           for k in range(8)])
        cands = CandidateSet(points[None, None], np.zeros((1, 1)), 0.1, lines=[0])
        policy = LatticePolicy(n_ref=1, n_lon=1, reach=0.2)
        branches = forward_simulate(world, cands, Paradigm.MAX_LIKELIHOOD,
                                    OthersParadigm.CONSTANT_ACTION, self.predictor, policy, cfg)
        self.assertEqual(len(branches), 1)
        self.assertTrue(branches[0].failed)
        self.assertEqual(len(branches[0].states), 2)
        self.assertEqual(len(branches[0].selected), 1)
        self.assertIn('No reference line', branches[0].error)

    def test_dispersion_needs_two_branches(self):
        branches = self.simulate(Paradigm.TRAJECTORY_TRACKING, OthersParadigm.CONSTANT_ACTION)
        with self.assertRaises(TooFewBranches):
            branch_dispersion(branches[:1])
        self.assertGreater(branch_dispersion(branches), 0.0)

class ModalityTests(unittest.TestCase):
    def setUp(self):
        self.cfg = SimConfig(horizon=20)
        self.world, self.policy, self.cands = setup_world('multimodal.json', self.cfg)
        self.predictor = PredictorParams.zeros(self.cfg)

    def simulate(self, center):
        return forward_simulate(self.world, self.cands, center, OthersParadigm.CONSTANT_ACTION,
                                self.predictor, self.policy, self.cfg)

    def test_max_likelihood_collapses(self):
        ml = self.simulate(Paradigm.MAX_LIKELIHOOD)
        ta = self.simulate(Paradigm.TRAJECTORY_ALIGNED)
        self.assertLess(branch_dispersion(ml), branch_dispersion(ta))

    def test_aligned_branches_keep_their_line(self):
        ta = self.simulate(Paradigm.TRAJECTORY_ALIGNED)
        for branch in ta:
            self.assertFalse(branch.failed)
            self.assertEqual(modality_drift(branch), 0, branch.seed_index)
            self.assertEqual(set(branch.lines), {branch.lines[0]}, branch.seed_index)

    def test_fixed_index_drifts(self):
        mc = self.simulate(Paradigm.MODE_CONSISTENT)
        self.assertTrue(any(modality_drift(b) > 0 for b in mc))

class SingleCandidateTests(unittest.TestCase):
    def test_one_branch_tracks_its_seed(self):
        cfg = SimConfig(horizon=20, n_ref=1, n_lon=1)
        world, policy, cands = setup_world('minimal.json', cfg)
        branches = forward_simulate(world, cands, Paradigm.TRAJECTORY_TRACKING,
                                    OthersParadigm.STEPWISE_PREDICTION,
                                    PredictorParams.zeros(cfg), policy, cfg)
        self.assertEqual(len(branches), 1)
        seed = cands.trajectory(0, 0)
        reached = branches[0].states[cfg.horizon - 1].center.state.position
        self.assertLess(np.hypot(*(reached - seed.points[-1, :2])), 0.5)
        with self.assertRaises(TooFewBranches):
            branch_dispersion(branches)

class CurvedRoadTests(unittest.TestCase):
    def test_stepwise_prediction_stays_on_road(self):
        cfg = SimConfig(horizon=30, n_ref=1, n_lon=1)
        predictor = yaw_memory(cfg, cfg.horizon + 1)
        policy = LatticePolicy.from_config(cfg)
        rates = {paradigm: [] for paradigm in OthersParadigm}
        for radius in (18.0, 20.0, 22.0, 24.0, 26.0):
            for speed in (7.0, 9.0):
                scenario = arc_scenario(radius, speed, cfg.horizon, cfg.dt)
                world = WorldState.from_scenario(scenario, cfg.history)
                cands = generate_candidates(world, policy, cfg)
                for paradigm in OthersParadigm:
                    branch = forward_simulate(world, cands, Paradigm.TRAJECTORY_TRACKING,
                                              paradigm, predictor, policy, cfg)[0]
                    self.assertFalse(branch.failed)
                    rates[paradigm].append(episode_metrics(branch.states, cfg=cfg).orr_agents)
        stepwise = np.mean(rates[OthersParadigm.STEPWISE_PREDICTION])
        single = np.mean(rates[OthersParadigm.SINGLE_PREDICTION])
        constant = np.mean(rates[OthersParadigm.CONSTANT_ACTION])
        self.assertEqual(stepwise, 0.0)
        self.assertLess(stepwise, single)
        self.assertLess(single, constant)

class RealTimeTests(unittest.TestCase):
    def test_episode(self):
        cfg = SimConfig(horizon=10)
        scenario = load_scenario(static('lead-brake.json'))
        episode = simulate_episode(scenario, LatticePolicy.from_config(cfg), cfg, steps=6)
        self.assertEqual(episode.name, 'lead-brake')
        self.assertEqual(len(episode.states), 7)
        self.assertEqual(len(episode.selected), 6)
        self.assertEqual(episode.dt, scenario.dt)

    def test_autopilot(self):
        cfg = SimConfig(horizon=10)
        loop = RealTimeLoop(load_scenario(static('follow-brake.json')), cfg)
        policy = LatticePolicy.from_config(cfg)
        for _ in range(10):
            cands = loop.candidates(policy)
            loop.execute(cands, (0, 1))
        follower, lead = loop.world.others
        for vehicle in (follower, lead):
            self.assertLess(abs(vehicle.state.y), 1e-9)
        self.assertAlmostEqual(follower.state.speed, 8.0)
        self.assertAlmostEqual(lead.state.speed, 4.0)

    def test_scripted_lead_brakes(self):
        cfg = SimConfig(horizon=10)
        episode = simulate_episode(load_scenario(static('lead-brake.json')),
                                   LatticePolicy.from_config(cfg), cfg, steps=30)
        speeds = np.array([w.others[0].state.speed for w in episode.states])
        np.testing.assert_allclose(speeds[:21], 8.0 - 0.4 * np.arange(21), atol=1e-9)
        np.testing.assert_allclose(speeds[20:], 0.0, atol=1e-9)

    def test_degenerate_grid_warns_once(self):
        cfg = SimConfig(horizon=10)
        with self.assertLogs('forsim.rollout', 'DEBUG') as logs:
            simulate_episode(load_scenario(static('lead-brake.json')),
                             LatticePolicy.from_config(cfg), cfg, steps=6)
        warnings = [r for r in logs.records if r.levelname == 'WARNING']
        self.assertEqual(len(warnings), 1)
        self.assertIn('Degenerate candidate grid from step 0', warnings[0].getMessage())
        self.assertIn('6 step(s)', logs.records[-1].getMessage())

class WorkerCountTests(unittest.TestCase):
    def test_environment(self):
        import os
        from unittest import mock
        with mock.patch.dict(os.environ, {'FORSIM_THREADS': '4'}):
            self.assertEqual(worker_count(), 4)
        with mock.patch.dict(os.environ, {'FORSIM_THREADS': 'many'}):
            with self.assertLogs('forsim.rollout', 'WARNING'):
                self.assertEqual(worker_count(), 1)
        with mock.patch.dict(os.environ, {'FORSIM_THREADS': '0'}):
            self.assertEqual(worker_count(), 1)
