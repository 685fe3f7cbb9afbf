import unittest

import numpy as np
from scipy.stats import spearmanr

from forsim.config import RewardConfig, SimConfig
from forsim.optimization import (GroupTooSmall, RolloutBuffer, Transition, branch_return,
                                 discounted_return, dual_clip, dual_clip_grad, group_advantages,
                                 policy_objective, step_reward, train)
from forsim.policy import FEATURE_NAMES
from forsim.rollout import RolloutBranch
from forsim.test.test_world import static
from forsim.world import AgentState, CandidateSet, WorldState, load_scenario

def ppo_clip(ratio, adv, epsilon):
    return min(ratio * adv, min(max(ratio, 1 - epsilon), 1 + epsilon) * adv)

def dual_clip_scalar(ratio, adv, epsilon, c):
    base = ppo_clip(ratio, adv, epsilon)
    if adv < 0:
        return max(base, c * adv)
    return base

class RewardTests(unittest.TestCase):
    def setUp(self):
        scenario = load_scenario(static('minimal.json'))
        self.world = WorldState.from_scenario(scenario)
        self.rc = RewardConfig()

    def at(self, x, y=0.0, speed=5.0):
        return WorldState(self.world.map, self.world.center.moved(AgentState(x, y, 1.0, 0.0, speed, 0.0)))

    def test_progress(self):
        self.assertAlmostEqual(step_reward(self.at(1.0), self.at(0.0), self.rc), 1.0)
        self.assertAlmostEqual(step_reward(self.at(0.0), self.at(1.0), self.rc), -1.0)

    def test_penalties(self):
        self.assertAlmostEqual(step_reward(self.at(0.0, 3.0), self.at(0.0, 3.0), self.rc), -2.0)
        self.assertAlmostEqual(step_reward(self.at(0.0, speed=5.5), self.at(0.0), self.rc), -0.5)
        other = self.world.center.moved(AgentState(1.0, 0.0, 1.0, 0.0, 0.0, 0.0))
        crash = WorldState(self.world.map, self.world.center, (other,))
        self.assertAlmostEqual(step_reward(crash, self.world, self.rc), -10.0)

    def test_returns(self):
        self.assertEqual(discounted_return([1.0, 1.0, 1.0], 0.5), 1.75)
        self.assertEqual(discounted_return([], 0.9), 0.0)
        branch = RolloutBranch((0, 0), (self.world,), (), (), failed=True, error='lost')
        self.assertEqual(branch_return(branch, self.rc, 0.9), self.rc.failure)
        ok = RolloutBranch((0, 0), (self.at(0.0), self.at(1.0), self.at(2.0)), ((0, 0),) * 2, (0, 0))
        self.assertAlmostEqual(branch_return(ok, self.rc, 0.5), 1.5)
        stored = ok.with_rewards([2.0, 2.0])
        self.assertAlmostEqual(branch_return(stored, self.rc, 0.5), 3.0)

class AdvantageTests(unittest.TestCase):
    def test_standardised(self):
        group = group_advantages([1.0, 2.0, 3.0])
        self.assertEqual(group.mean, 2.0)
        np.testing.assert_allclose(group.advantages, [-1.5 ** 0.5, 0.0, 1.5 ** 0.5])

    def test_constant_group(self):
        np.testing.assert_array_equal(group_advantages([4.0] * 12).advantages, 0.0)

    def test_random_groups_are_standardised(self):
        rng = np.random.default_rng(21)
        for _ in range(10000):
            size = int(rng.integers(2, 30))
            returns = rng.normal(rng.normal(0.0, 10.0), rng.uniform(0.1, 20.0), size)
            adv = group_advantages(returns).advantages
            self.assertLess(abs(adv.mean()), 1e-9)
            self.assertLess(abs(adv.std() - 1.0), 1e-9)

    def test_affine_invariance(self):
        rng = np.random.default_rng(22)
        for _ in range(1000):
            returns = rng.normal(0.0, 1.0, 12)
            scale = rng.uniform(0.1, 10.0)
            shift = rng.uniform(-100.0, 100.0)
            np.testing.assert_allclose(group_advantages(scale * returns + shift).advantages,
                                       group_advantages(returns).advantages, rtol=0, atol=1e-9)

    def test_group_of_one(self):
        with self.assertRaises(GroupTooSmall):
            group_advantages([1.0])

class DualClipTests(unittest.TestCase):
    def test_matches_scalar_definition(self):
        rng = np.random.default_rng(8)
        count = 100000
        ratios = rng.uniform(0.0, 8.0, count)
        advs = rng.normal(0.0, 2.0, count)
        epsilons = rng.uniform(0.0, 1.0, count)
        cs = 1.0 + epsilons + rng.uniform(0.0, 5.0, count)
        got = dual_clip(ratios, advs, epsilons, cs)
        expected = [dual_clip_scalar(*args) for args in zip(ratios, advs, epsilons, cs)]
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)
        ppo = np.array([ppo_clip(*args) for args in zip(ratios, advs, epsilons)])
        below = (advs >= 0) | (ratios <= cs)
        np.testing.assert_allclose(got[below], ppo[below], rtol=0, atol=1e-12)
        self.assertTrue(np.all(got[advs < 0] >= cs[advs < 0] * advs[advs < 0]))

    def test_examples(self):
        self.assertAlmostEqual(dual_clip(1.5, 1.0, 0.2, 3.0), 1.2)
        self.assertAlmostEqual(dual_clip(5.0, -1.0, 0.2, 3.0), -3.0)
        self.assertAlmostEqual(dual_clip(0.5, -1.0, 0.2, 3.0), -0.8)
        self.assertAlmostEqual(dual_clip(0.5, 1.0, 0.2, 3.0), 0.5)

    def test_agrees_with_ppo_below_bound(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            ratio = rng.uniform(0.0, 3.0)
            adv = rng.normal()
            self.assertAlmostEqual(dual_clip(ratio, adv, 0.2, 3.0), ppo_clip(ratio, adv, 0.2))

    def test_gradient(self):
        rng = np.random.default_rng(10)
        h = 1e-7
        for _ in range(300):
            ratio = rng.uniform(0.0, 5.0)
            adv = rng.normal()
            if min(abs(ratio - 0.8), abs(ratio - 1.2), abs(ratio - 3.0)) < 1e-3:
                continue
            numeric = (dual_clip(ratio + h, adv, 0.2, 3.0) - dual_clip(ratio - h, adv, 0.2, 3.0)) / (2 * h)
            self.assertAlmostEqual(dual_clip_grad(ratio, adv, 0.2, 3.0), numeric, places=5)

def transitions(rng, count=4, world=None):
    out = []
    for _ in range(count):
        feats = rng.normal(0.0, 1.0, (3, 4, len(FEATURE_NAMES)))
        cands = CandidateSet(np.zeros((3, 4, 2, 6)), np.zeros((3, 4)), 0.1, features=feats)
        group = group_advantages(rng.normal(0.0, 1.0, 12))
        out.append(Transition(world, cands, (0, 0), group, np.zeros(12)))
    return out

class ObjectiveTests(unittest.TestCase):
    def test_zero_at_old_policy(self):
        rng = np.random.default_rng(13)
        batch = transitions(rng)
        theta = rng.normal(0.0, 1.0, len(FEATURE_NAMES))
        value, grad = policy_objective(batch, theta, theta)
        self.assertAlmostEqual(value, 0.0)
        expected = np.zeros_like(theta)
        for tr in batch:
            feats = tr.features
            logits = feats @ theta
            pi = np.exp(logits - logits.max())
            pi /= pi.sum()
            expected += tr.group.advantages @ (feats - pi @ feats) / 12
        np.testing.assert_allclose(grad, expected / len(batch), atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        batch = transitions(rng)
        theta_old = rng.normal(0.0, 1.0, len(FEATURE_NAMES))
        h = 1e-6
        for _ in range(20):
            theta = theta_old + rng.normal(0.0, 0.1, len(FEATURE_NAMES))
            _, grad = policy_objective(batch, theta, theta_old)
            numeric = np.empty_like(theta)
            for d in range(len(theta)):
                step = np.zeros_like(theta)
                step[d] = h
                numeric[d] = (policy_objective(batch, theta + step, theta_old)[0]
                              - policy_objective(batch, theta - step, theta_old)[0]) / (2 * h)
            np.testing.assert_allclose(grad, numeric, atol=1e-5)

    def test_empty_batch(self):
        value, grad = policy_objective([], np.ones(5))
        self.assertEqual(value, 0.0)
        np.testing.assert_array_equal(grad, 0.0)

class BufferTests(unittest.TestCase):
    def test_capacity_and_sampling(self):
        rng = np.random.default_rng(15)
        buffer = RolloutBuffer(capacity=5)
        items = transitions(rng, count=8)
        for tr in items:
            buffer.add(tr)
        self.assertEqual(len(buffer), 5)
        self.assertIs(buffer.items[0], items[3])
        picked = buffer.sample(3, rng)
        self.assertEqual(len(picked), 3)
        order = [items.index(tr) for tr in picked]
        self.assertEqual(order, sorted(order))
        self.assertEqual(len(buffer.sample(10, rng)), 5)
        buffer.clear()
        self.assertEqual(len(buffer), 0)

class TrainingTests(unittest.TestCase):
    def bandit_config(self, iterations):
        return SimConfig(horizon=10, gamma=1.0, iterations=iterations, warmup_steps=0,
                         policy_theta=(0.0,) * 5, reward=RewardConfig(comfort=0.0))

    def test_best_branch_becomes_likely(self):
        cfg = self.bandit_config(15)
        result = train([load_scenario(static('bandit.json'))], cfg, seed=0)
        self.assertEqual([row.iteration for row in result.log], list(range(1, 16)))
        probs = [row.best_probability for row in result.log]
        self.assertGreater(probs[-1], 1 / 12)
        self.assertGreater(probs[-1], probs[0] + 0.1)
        self.assertGreater(spearmanr(range(len(probs)), probs)[0], 0.5)

    def test_no_iterations(self):
        cfg = self.bandit_config(0)
        result = train([load_scenario(static('bandit.json'))], cfg, start_iteration=3)
        self.assertEqual(result.iteration, 3)
        self.assertEqual(result.log, [])
        np.testing.assert_array_equal(result.scoring.theta, 0.0)

    def test_resume_counts_on(self):
        cfg = self.bandit_config(2)
        result = train([load_scenario(static('bandit.json'))], cfg, start_iteration=3)
        self.assertEqual([row.iteration for row in result.log], [4, 5])
        self.assertEqual(result.iteration, 5)

    def test_needs_scenarios(self):
        with self.assertRaises(ValueError):
            train([], self.bandit_config(1))
