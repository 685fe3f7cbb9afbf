#!/usr/bin/env python3

'''
Stepwise forward simulation. Every seed candidate of a real-time step
starts one branch; the branch advances the whole world T + 1 times,
reselecting the center agent's candidate according to the chosen
paradigm and moving the other agents according to theirs.
'''

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
import enum
import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from forsim import agents
from forsim.dynamics import ControlInput, PidState, bicycle_step, propagate
from forsim.policy import LatticePolicy, NoReferenceLine, generate_candidates, lane_keeping_target
from forsim.selection import (EmptyOverlap, Paradigm, SelectionParadigm, select_max_likelihood,
                              select_mode_consistent, select_trajectory_aligned)
from forsim.world import CandidateSet, Scenario, Vehicle, WorldState

logger = logging.getLogger('forsim.rollout')

class TooFewBranches(ValueError):
    pass

class OthersParadigm(enum.Enum):
    CONSTANT_ACTION = 'constant-action'
    SINGLE_PREDICTION = 'single-prediction'
    STEPWISE_PREDICTION = 'stepwise-prediction'

def worker_count() -> int:
    '''Thread cap from FORSIM_THREADS (default 1).'''
    raw = os.environ.get('FORSIM_THREADS', '1')
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"Ignoring FORSIM_THREADS={raw!r}; it is not an integer.")
        return 1

@dataclass(frozen=True, eq=False)
class RolloutBranch:
    '''
    One simulated future. `states` runs from the real state x_0 to
    x_{T+1}; `selected[k]` and `lines[k]` describe the candidate executed
    on the transition x_k -> x_{k+1}. A failed branch keeps the states it
    reached.
    '''

    seed_index: Tuple[int, int]
    states: tuple
    selected: tuple
    lines: tuple
    failed: bool = False
    error: str = ''
    rewards: tuple = ()

    def with_rewards(self, rewards) -> 'RolloutBranch':
        return replace(self, rewards=tuple(float(r) for r in rewards))

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1].center.state.position

    def center_array(self) -> np.ndarray:
        return np.array([w.center.state.as_array() for w in self.states])

def _step_others_constant(world: WorldState, cfg) -> list:
    out = []
    for vehicle in world.others:
        u = ControlInput.clamp(vehicle.control[0], vehicle.control[1], cfg)
        state = bicycle_step(vehicle.state, u, vehicle.wheelbase, cfg.dt, cfg.v_max)
        out.append(vehicle.moved(state))
    return out

def _extend(state, vehicle: Vehicle, cfg):
    return bicycle_step(state, ControlInput(), vehicle.wheelbase, cfg.dt, cfg.v_max)

def _simulate_branch(real_state: WorldState, cands: CandidateSet, seed_index,
                     center_paradigm: Paradigm, others_paradigm: OthersParadigm,
                     predictor, policy: LatticePolicy, cfg, rng) -> RolloutBranch:
    horizon = cfg.horizon
    par = SelectionParadigm.seeded(center_paradigm, cands, seed_index, cfg.ade_kinematics)
    seed = par.reference
    world = real_state
    states = [world]
    selected = []
    lines = []
    pid = PidState()
    plan = None
    try:
        for k in range(horizon + 1):
            index = seed_index
            line = int(cands.lines[seed_index[0]])
            target = seed
            if k > 0 and center_paradigm.reselects:
                virtual = generate_candidates(world, policy, cfg, rng)
                if center_paradigm is Paradigm.MAX_LIKELIHOOD:
                    index = select_max_likelihood(virtual)
                elif center_paradigm is Paradigm.MODE_CONSISTENT:
                    index = select_mode_consistent(par)
                else:
                    index = select_trajectory_aligned(virtual, par, k, lines[-1],
                                                      cfg.reselect_margin)
                target = virtual.trajectory(*index)
                line = int(virtual.lines[index[0]])

            center = world.center
            if center_paradigm is Paradigm.PERFECT_TRACKING:
                if k + 1 < len(seed):
                    state = seed.state(k + 1)
                else:
                    state = _extend(center.state, center, cfg)
                center = center.moved(state)
            else:
                state, pid = propagate(center.state, target, pid, cfg, center.wheelbase)
                center = center.moved(state, pid.control)

            if others_paradigm is OthersParadigm.CONSTANT_ACTION:
                others = _step_others_constant(world, cfg)
            elif others_paradigm is OthersParadigm.SINGLE_PREDICTION:
                if plan is None:
                    plan = agents.predict(world.others, world.histories or None, predictor,
                                          horizon, cfg.dt, (world.center,), steps=horizon + 1)
                others = [v.moved(plan[n].state(k)) for n, v in enumerate(world.others)]
            else:
                preds = agents.predict(world.others, world.histories or None, predictor,
                                       horizon, cfg.dt, (world.center,), steps=1)
                others = [v.moved(preds[n].state(0)) for n, v in enumerate(world.others)]

            world = world.advance(center, others, cfg.history)
            states.append(world)
            selected.append(index)
            lines.append(line)
    except (NoReferenceLine, EmptyOverlap, ValueError, ArithmeticError) as err:
        logger.warning(f'Branch {seed_index} failed at virtual step {len(states) - 1}: {err}')
        return RolloutBranch(tuple(seed_index), tuple(states), tuple(selected), tuple(lines),
                             failed=True, error=str(err))
    return RolloutBranch(tuple(seed_index), tuple(states), tuple(selected), tuple(lines))

def forward_simulate(real_state: WorldState, cands: CandidateSet, center_paradigm: Paradigm,
                     others_paradigm: OthersParadigm, predictor, policy: LatticePolicy,
                     cfg, seed: int = 0, threads: Optional[int] = None) -> List[RolloutBranch]:
    '''
    Unroll one branch per candidate of `cands`, in flat index order.
    Branch i draws from its own generator seeded with (seed, i), so the
    result does not depend on the number of worker threads.
    '''

    n_ref, n_lon = cands.shape
    jobs = [(cands.unflatten(i), np.random.default_rng([seed, i])) for i in range(n_ref * n_lon)]

    def run(job):
        index, rng = job
        return _simulate_branch(real_state, cands, index, center_paradigm, others_paradigm,
                                predictor, policy, cfg, rng)

    threads = worker_count() if threads is None else threads
    if threads <= 1:
        return [run(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))

def branch_dispersion(branches: Sequence[RolloutBranch]) -> float:
    '''Mean pairwise distance between branch terminal center positions.'''
    if len(branches) < 2:
        raise TooFewBranches(f'Dispersion needs at least 2 branches, got {len(branches)}.')
    return float(pdist(np.array([b.terminal for b in branches])).mean())

def modality_drift(branch: RolloutBranch) -> int:
    '''Number of transitions whose selected candidate follows a different
    reference line than the previous one.'''
    return sum(1 for a, b in zip(branch.lines, branch.lines[1:]) if a != b)

@dataclass(frozen=True, eq=False)
class Episode:
    name: str
    states: tuple
    selected: tuple = ()
    dt: float = 0.1

class Autopilot:
    '''Drives the other agents of a real-time episode. An agent given a
    nonzero control by its scenario replays that control, clamped; the
    rest track their nearest reference line at their current speed and
    keep their last control when off the map.'''

    def __init__(self, world: WorldState):
        self.pids = [PidState() for _ in world.others]
        self.scripted = [any(c != 0.0 for c in v.control) for v in world.others]

    def step(self, world: WorldState, cfg) -> list:
        out = []
        for n, vehicle in enumerate(world.others):
            target = None
            if not self.scripted[n]:
                target = lane_keeping_target(vehicle.state, world.map, cfg)
            if target is None:
                u = ControlInput.clamp(vehicle.control[0], vehicle.control[1], cfg)
                out.append(vehicle.moved(bicycle_step(vehicle.state, u, vehicle.wheelbase,
                                                      cfg.dt, cfg.v_max)))
            else:
                state, self.pids[n] = propagate(vehicle.state, target, self.pids[n], cfg,
                                                vehicle.wheelbase)
                out.append(vehicle.moved(state, self.pids[n].control))
        return out

class RealTimeLoop:
    '''Real-time execution: the center agent tracks the candidate chosen
    at each step, the others follow the autopilot.'''

    def __init__(self, scenario: Scenario, cfg):
        self.cfg = cfg.with_dt(scenario.dt)
        self.world = WorldState.from_scenario(scenario, self.cfg.history)
        self.pid = PidState()
        self.autopilot = Autopilot(self.world)
        self.degenerate_steps = 0

    def candidates(self, policy: LatticePolicy, rng=None) -> CandidateSet:
        cands = generate_candidates(self.world, policy, self.cfg, rng)
        if cands.degenerate:
            if not self.degenerate_steps:
                logger.warning(f'Degenerate candidate grid from step {self.world.step}: fewer than {policy.n_ref} reachable reference lines, duplicating the nearest.')
            self.degenerate_steps += 1
        return cands

    def execute(self, cands: CandidateSet, index) -> WorldState:
        center = self.world.center
        state, self.pid = propagate(center.state, cands.trajectory(*index), self.pid,
                                    self.cfg, center.wheelbase)
        others = self.autopilot.step(self.world, self.cfg)
        self.world = self.world.advance(center.moved(state, self.pid.control), others,
                                        self.cfg.history)
        return self.world

def simulate_episode(scenario: Scenario, policy: LatticePolicy, cfg,
                     steps: Optional[int] = None) -> Episode:
    '''Run `steps` real-time steps (default the scenario horizon), always
    executing the highest-score candidate.'''
    loop = RealTimeLoop(scenario, cfg)
    states = [loop.world]
    selected = []
    for _ in range(scenario.horizon if steps is None else steps):
        try:
            cands = loop.candidates(policy)
        except NoReferenceLine as err:
            logger.warning(f"Episode '{scenario.name}' stopped at step {loop.world.step}: {err}")
            break
        index = select_max_likelihood(cands)
        states.append(loop.execute(cands, index))
        selected.append(index)
    if loop.degenerate_steps:
        logger.debug(f"Episode '{scenario.name}' ran {loop.degenerate_steps} step(s) on a degenerate grid.")
    return Episode(scenario.name, tuple(states), tuple(selected), loop.cfg.dt)
