import unittest

import numpy as np

from forsim.selection import (EmptyOverlap, Paradigm, SelectionParadigm, ade_aligned,
                              select_max_likelihood, select_mode_consistent,
                              select_trajectory_aligned)
from forsim.world import CandidateSet, Trajectory, ValidationError

def random_grid(rng, n_ref=3, n_lon=4, horizon=8):
    trajs = rng.normal(0.0, 1.0, (n_ref, n_lon, horizon, 6))
    # duplicated cells tie exactly
    trajs[-1, -1] = trajs[0, 0]
    trajs[1, 2] = trajs[1, 0]
    scores = np.round(rng.normal(0.0, 1.0, (n_ref, n_lon)))
    return CandidateSet(trajs, scores, 0.1)

def loop_ade(cand, ref, step):
    total = 0.0
    count = len(ref) - step
    for k in range(count):
        dx = cand[k, 0] - ref[step + k, 0]
        dy = cand[k, 1] - ref[step + k, 1]
        total += np.hypot(dx, dy)
    return total / count

class SelectionTests(unittest.TestCase):
    def test_max_likelihood_takes_first_maximum(self):
        scores = np.array([[0.0, 2.0], [2.0, 1.0]])
        cands = CandidateSet(np.zeros((2, 2, 3, 6)), scores, 0.1)
        self.assertEqual(select_max_likelihood(cands), (0, 1))

    def test_max_likelihood_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            cands = random_grid(rng)
            best = None
            for i in range(3):
                for j in range(4):
                    if best is None or cands.scores[i, j] > cands.scores[best]:
                        best = (i, j)
            self.assertEqual(select_max_likelihood(cands), best)

    def test_mode_consistent_keeps_seed(self):
        rng = np.random.default_rng(2)
        cands = random_grid(rng)
        par = SelectionParadigm.seeded(Paradigm.MODE_CONSISTENT, cands, (2, 1))
        self.assertEqual(select_mode_consistent(par), (2, 1))

    def test_seed_outside_grid(self):
        cands = random_grid(np.random.default_rng(3))
        with self.assertRaises(ValidationError):
            SelectionParadigm.seeded(Paradigm.TRAJECTORY_ALIGNED, cands, (3, 0))

    def test_ade_matches_loop(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            horizon = int(rng.integers(2, 10))
            cand = rng.normal(0.0, 1.0, (horizon, 6))
            ref = rng.normal(0.0, 1.0, (horizon, 6))
            step = int(rng.integers(0, horizon))
            self.assertAlmostEqual(ade_aligned(Trajectory(cand, 0.1), Trajectory(ref, 0.1), step),
                                   loop_ade(cand, ref, step), places=12)

    def test_ade_of_shifted_reference_is_zero(self):
        pts = np.zeros((10, 6))
        pts[:, 0] = np.arange(10.0)
        pts[:, 2] = 1.0
        ref = Trajectory(pts, 0.1)
        shifted = Trajectory(np.vstack([pts[3:], pts[-1:].repeat(3, 0)]), 0.1)
        self.assertEqual(ade_aligned(shifted, ref, 3), 0.0)

    def test_ade_kinematic_terms(self):
        pts = np.zeros((4, 6))
        pts[:, 2] = 1.0
        other = pts.copy()
        other[:, 4] = 1.0
        a = Trajectory(pts, 0.1)
        b = Trajectory(other, 0.1)
        self.assertEqual(ade_aligned(a, b, 0), 0.0)
        self.assertEqual(ade_aligned(a, b, 0, include_kinematics=True), 1.0)

    def test_empty_overlap(self):
        ref = Trajectory(np.tile([0, 0, 1, 0, 0, 0], (5, 1)), 0.1)
        with self.assertRaises(EmptyOverlap):
            ade_aligned(ref, ref, 5)

    def test_trajectory_aligned_matches_brute_force(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            seeds = random_grid(rng)
            seed = (int(rng.integers(3)), int(rng.integers(4)))
            par = SelectionParadigm.seeded(Paradigm.TRAJECTORY_ALIGNED, seeds, seed)
            cands = random_grid(rng)
            step = int(rng.integers(0, 12))
            got = select_trajectory_aligned(cands, par, step)
            if step <= 1:
                self.assertEqual(got, seed)
                continue
            offset = min(step, seeds.horizon - 1)
            errors = [loop_ade(cands.trajectories[i, j], seeds.trajectories[seed], offset)
                      for i in range(3) for j in range(4)]
            best = min(errors)
            # ties go to the lowest flat index
            first = [k for k, e in enumerate(errors) if abs(e - best) < 1e-9][0]
            self.assertEqual(cands.flat_index(got), first)

    def test_reselection_flags(self):
        self.assertTrue(Paradigm.TRAJECTORY_ALIGNED.reselects)
        self.assertFalse(Paradigm.PERFECT_TRACKING.reselects)
        self.assertFalse(Paradigm.TRAJECTORY_TRACKING.reselects)

    def test_trajectory_aligned_prefers_previous_line(self):
        pts = np.zeros((6, 6))
        pts[:, 0] = np.arange(6.0)
        pts[:, 2] = 1.0
        seeds = CandidateSet(pts[None, None], np.zeros((1, 1)), 0.1)
        par = SelectionParadigm.seeded(Paradigm.TRAJECTORY_ALIGNED, seeds, (0, 0))
        grid = np.stack([pts[2:], pts[2:]])[:, None].copy()
        grid[0, 0, :, 1] = 0.3
        cands = CandidateSet(grid, np.zeros((2, 1)), 0.1, lines=[7, 4])
        self.assertEqual(select_trajectory_aligned(cands, par, 2), (1, 0))
        self.assertEqual(select_trajectory_aligned(cands, par, 2, 7, 0.5), (0, 0))
        self.assertEqual(select_trajectory_aligned(cands, par, 2, 7, 0.1), (1, 0))
        self.assertEqual(select_trajectory_aligned(cands, par, 2, 5, 0.5), (1, 0))
        self.assertEqual(select_trajectory_aligned(cands, par, 1, 7, 0.5), (0, 0))
