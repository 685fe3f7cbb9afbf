import unittest

import numpy as np

from forsim.config import SimConfig
from forsim.policy import (FEATURE_NAMES, LatticePolicy, NoReferenceLine, ScoringParams,
                           generate_candidates, lane_keeping_target, likelihood,
                           likelihood_grad, log_likelihood, probabilities, speed_profiles)
from forsim.test.test_world import static
from forsim.world import AgentState, CandidateSet, WorldState, load_scenario

class CandidateTests(unittest.TestCase):
    def setUp(self):
        self.cfg = SimConfig(horizon=20)
        self.policy = LatticePolicy.from_config(self.cfg)

    def world(self, name):
        return WorldState.from_scenario(load_scenario(static(name)), self.cfg.history)

    def test_grid_shape_and_order(self):
        world = self.world('multimodal.json')
        cands = generate_candidates(world, self.policy, self.cfg)
        self.assertEqual(cands.trajectories.shape, (3, 4, 20, 6))
        self.assertFalse(cands.degenerate)
        np.testing.assert_array_equal(cands.lines, [1, 0, 2])
        for i in range(3):
            for j in range(4):
                np.testing.assert_array_equal(cands.trajectories[i, j, 0],
                                              world.center.state.as_array())
        self.assertEqual(cands.features.shape, (3, 4, len(FEATURE_NAMES)))

    def test_rows_end_on_their_lines(self):
        world = self.world('multimodal.json')
        cands = generate_candidates(world, self.policy, self.cfg)
        for i, y in enumerate([0.0, -3.5, 3.5]):
            np.testing.assert_allclose(cands.trajectories[i, 1:, -1, 1], y, atol=1e-6)

    def test_candidates_are_plausible(self):
        world = self.world('multimodal.json')
        cands = generate_candidates(world, self.policy, self.cfg)
        for i in range(3):
            for j in range(4):
                self.assertTrue(cands.trajectory(i, j).is_plausible(self.cfg.v_max,
                                                                    self.cfg.plausibility_slack))

    def test_degenerate_grid_is_padded(self):
        cands = generate_candidates(self.world('minimal.json'), self.policy, self.cfg)
        self.assertTrue(cands.degenerate)
        np.testing.assert_array_equal(cands.lines, [0, 0, 0])
        np.testing.assert_array_equal(cands.trajectories[0], cands.trajectories[2])

    def test_no_reference_line(self):
        world = self.world('minimal.json')
        lost = WorldState(world.map, world.center.moved(AgentState(0.0, 50.0, 1.0, 0.0, 5.0, 0.0)))
        with self.assertRaises(NoReferenceLine):
            generate_candidates(lost, self.policy, self.cfg)
        self.assertIsNone(lane_keeping_target(lost.center.state, lost.map, self.cfg))

    def test_speed_profiles_respect_limits(self):
        rows = speed_profiles(8.0, [0.0, 5.0, 10.0, 15.0], 40, 0.1, 4.0)
        np.testing.assert_array_equal(rows[:, 0], 8.0)
        np.testing.assert_allclose(rows[:, -1], [0.0, 5.0, 10.0, 15.0])
        self.assertLessEqual(np.max(np.abs(np.diff(rows, axis=1))) / 0.1, 4.0 + 1e-9)

    def test_speed_profile_shape(self):
        rows = speed_profiles(8.0, [12.0], 40, 0.1, 3.0)
        self.assertAlmostEqual(rows[0, 10], 10.0)
        np.testing.assert_allclose(rows[0, 20:], 12.0)
        steps = np.diff(rows[0, :21])
        np.testing.assert_allclose(steps, steps[::-1], atol=1e-12)
        self.assertAlmostEqual(np.max(steps) / 0.1, 3.0, places=1)

    def test_short_horizon_still_reaches_target(self):
        rows = speed_profiles(8.0, [0.0], 5, 0.1, 4.0)
        self.assertAlmostEqual(rows[0, -1], 0.0)
        self.assertGreater(np.max(np.abs(np.diff(rows[0]))) / 0.1, 4.0)

    def test_lane_keeping_holds_speed(self):
        world = self.world('multimodal.json')
        target = lane_keeping_target(world.center.state, world.map, self.cfg)
        np.testing.assert_allclose(target.speeds, 8.0)
        np.testing.assert_allclose(target.points[:, 1], 0.0, atol=1e-12)

class LikelihoodTests(unittest.TestCase):
    def setUp(self):
        cfg = SimConfig(horizon=20)
        self.world = WorldState.from_scenario(load_scenario(static('lead-brake.json')))
        self.cfg = cfg

    def grid(self, scores, features=None):
        scores = np.asarray(scores, dtype=float)
        trajs = np.zeros(scores.shape + (3, 6))
        trajs[..., 2] = 1.0
        return CandidateSet(trajs, scores, 0.1, features=features)

    def test_two_candidate_softmax(self):
        p = probabilities(self.grid([[0.0, np.log(3.0)]]))
        np.testing.assert_allclose(p, [[0.25, 0.75]], rtol=0, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            scores = rng.normal(0.0, 3.0, (3, 4))
            shift = rng.uniform(-50.0, 50.0)
            np.testing.assert_allclose(probabilities(self.grid(scores + shift)),
                                       probabilities(self.grid(scores)), rtol=0, atol=1e-12)
            self.assertAlmostEqual(float(probabilities(self.grid(scores)).sum()), 1.0, places=12)

    def test_single_candidate_has_zero_gradient(self):
        feats = np.array([[[0.3, 1.0, -0.2, 0.0, 0.8]]])
        cands = self.grid([[0.7]], feats)
        self.assertEqual(likelihood(cands, (0, 0)), 1.0)
        np.testing.assert_array_equal(likelihood_grad(cands, (0, 0), ScoringParams((1.0,) * 5)),
                                      np.zeros(5))

    def test_probabilities_sum_to_one(self):
        policy = LatticePolicy.from_config(self.cfg)
        cands = generate_candidates(self.world, policy, self.cfg)
        p = probabilities(cands)
        self.assertAlmostEqual(float(p.sum()), 1.0)
        self.assertAlmostEqual(likelihood(cands, (0, 1)), float(p[0, 1]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        policy = LatticePolicy.from_config(self.cfg)
        base = generate_candidates(self.world, policy, self.cfg)
        feats = base.features.reshape(-1, len(FEATURE_NAMES))
        h = 1e-6
        for _ in range(50):
            theta = rng.normal(0.0, 1.0, len(FEATURE_NAMES))
            index = (int(rng.integers(3)), int(rng.integers(4)))
            flat = base.flat_index(index)
            cands = base.with_scores((feats @ theta).reshape(base.shape))
            grad = likelihood_grad(cands, index, ScoringParams(theta))
            numeric = np.empty_like(theta)
            for d in range(len(theta)):
                step = np.zeros_like(theta)
                step[d] = h
                numeric[d] = (log_likelihood(feats @ (theta + step), flat)
                              - log_likelihood(feats @ (theta - step), flat)) / (2 * h)
            scale = max(np.max(np.abs(numeric)), 1e-3)
            self.assertLess(np.max(np.abs(grad - numeric)) / scale, 1e-4)

    def test_score_is_linear_in_features(self):
        policy = LatticePolicy.from_config(self.cfg)
        cands = generate_candidates(self.world, policy, self.cfg)
        np.testing.assert_allclose(cands.scores, cands.features @ np.asarray(self.cfg.policy_theta))
