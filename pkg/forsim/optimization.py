#!/usr/bin/env python3

'''
Group-relative fine-tuning of the scoring head. Each real-time step
unrolls one branch per candidate; branch returns are standardised within
the group and the dual-clip surrogate is maximised over the stored
transitions, while the predictor is fitted to the realised futures.
'''

from collections import deque
from dataclasses import dataclass, field
import logging
import time
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from forsim import agents
from forsim.metrics import center_offroad, collides, route_station
from forsim.policy import FEATURE_NAMES, LatticePolicy, NoReferenceLine, ScoringParams
from forsim.rollout import (OthersParadigm, RealTimeLoop, RolloutBranch, branch_dispersion,
                            forward_simulate)
from forsim.selection import Paradigm, select_max_likelihood
from forsim.world import CandidateSet, WorldState

logger = logging.getLogger('forsim.optimization')

STD_EPSILON = 1e-8

class GroupTooSmall(ValueError):
    pass

def step_reward(world: WorldState, prev: WorldState, rc, dt: float = 0.1) -> float:
    '''Reward of the transition prev -> world for the center agent.'''
    route = world.map.route(0)
    progress = route_station(route, world.center.state) - route_station(route, prev.center.state)
    accel = (world.center.state.speed - prev.center.state.speed) / dt
    reward = rc.progress * progress
    if collides(world):
        reward -= rc.collision
    if center_offroad(world):
        reward -= rc.offroad
    if abs(accel) > rc.comfort_limit:
        reward -= rc.comfort
    return float(reward)

def discounted_return(rewards, gamma: float) -> float:
    rewards = np.asarray(rewards, dtype=float)
    return float(np.sum(rewards * gamma ** np.arange(len(rewards))))

def branch_rewards(branch: RolloutBranch, rc, dt: float) -> List[float]:
    return [step_reward(b, a, rc, dt) for a, b in zip(branch.states, branch.states[1:])]

def branch_return(branch: RolloutBranch, rc, gamma: float, dt: float = 0.1) -> float:
    if branch.failed:
        return float(rc.failure)
    rewards = branch.rewards if branch.rewards else branch_rewards(branch, rc, dt)
    return discounted_return(rewards, gamma)

@dataclass(frozen=True, eq=False)
class GroupEvaluation:
    returns: np.ndarray
    advantages: np.ndarray
    mean: float
    std: float

def group_advantages(returns) -> GroupEvaluation:
    returns = np.asarray(returns, dtype=float)
    if len(returns) < 2:
        raise GroupTooSmall(f'Advantages need a group of at least 2, got {len(returns)}.')
    mean = float(returns.mean())
    std = float(returns.std())
    if std < STD_EPSILON:
        adv = np.zeros_like(returns)
    else:
        adv = (returns - mean) / std
    return GroupEvaluation(returns, adv, mean, std)

def dual_clip(ratio, adv, epsilon: float, c: float):
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    base = np.minimum(ratio * adv, np.clip(ratio, 1 - epsilon, 1 + epsilon) * adv)
    out = np.where(adv < 0, np.maximum(base, c * adv), base)
    return float(out) if out.ndim == 0 else out

def dual_clip_grad(ratio, adv, epsilon: float, c: float):
    '''Derivative of `dual_clip` with respect to the ratio. Flat clipped
    regions and their boundaries give 0.'''
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    active = np.where(adv >= 0, ratio < 1 + epsilon,
                      (ratio > 1 - epsilon) & (ratio < c))
    out = np.where(active, adv, 0.0)
    return float(out) if out.ndim == 0 else out

@dataclass(frozen=True, eq=False)
class Transition:
    '''A real-time step: candidate features, scores and log-probabilities
    under the policy that produced them, the executed index and the
    group evaluation of the branches.'''

    state: WorldState
    cands: CandidateSet
    executed: tuple
    group: GroupEvaluation
    old_log_probs: np.ndarray

    @property
    def features(self) -> np.ndarray:
        return self.cands.features.reshape(-1, len(FEATURE_NAMES))

class RolloutBuffer:
    def __init__(self, capacity: int = 2048):
        self.items = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def add(self, transition: Transition):
        self.items.append(transition)

    def clear(self):
        self.items.clear()

    def sample(self, size: int, rng: np.random.Generator) -> List[Transition]:
        if size >= len(self.items):
            return list(self.items)
        picks = np.sort(rng.choice(len(self.items), size=size, replace=False))
        return [self.items[i] for i in picks]

def policy_objective(batch: Sequence[Transition], theta, theta_old=None,
                     epsilon: float = 0.2, c: float = 3.0):
    '''
    Mean over transitions of (1/G) sum_i psi(rho_i, A_i) and its gradient
    with respect to theta. Old log-probabilities come from `theta_old`
    when given, otherwise from the transition.
    '''

    theta = np.asarray(theta, dtype=float)
    value = 0.0
    grad = np.zeros_like(theta)
    if not batch:
        return value, grad
    for tr in batch:
        feats = tr.features
        logits = feats @ theta
        log_p = log_softmax(logits)
        if theta_old is None:
            old = tr.old_log_probs
        else:
            old = log_softmax(feats @ np.asarray(theta_old, dtype=float))
        ratio = np.exp(log_p - old)
        adv = tr.group.advantages
        size = len(adv)
        value += float(np.sum(dual_clip(ratio, adv, epsilon, c))) / size
        weight = dual_clip_grad(ratio, adv, epsilon, c) * ratio
        score_grad = feats - softmax(logits) @ feats
        grad += weight @ score_grad / size
    return value / len(batch), grad / len(batch)

class LogRow(NamedTuple):
    iteration: int
    mean_return: float
    objective: float
    pred_loss: float
    collapse_dispersion: float
    best_probability: float

LOG_COLUMNS = LogRow._fields

@dataclass
class TrainingResult:
    scoring: ScoringParams
    predictor: agents.PredictorParams
    log: List[LogRow] = field(default_factory=list)
    iteration: int = 0

def _branch_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])

def collect(scenarios, cfg, scoring: ScoringParams, predictor, buffer: RolloutBuffer,
            center_paradigm: Paradigm, others_paradigm: OthersParadigm, seed: int,
            iteration: int):
    '''Run one real-time episode per scenario, storing a transition per
    step. Returns the logged episodes and the branch dispersions.'''
    policy = LatticePolicy.from_config(cfg, scoring)
    episodes = []
    dispersions = []
    for s_idx, scenario in enumerate(scenarios):
        loop = RealTimeLoop(scenario, cfg)
        states = [loop.world]
        for t in range(scenario.horizon):
            try:
                cands = loop.candidates(policy)
            except NoReferenceLine as err:
                logger.warning(f"Episode '{scenario.name}' stopped at step {t}: {err}")
                break
            branches = forward_simulate(loop.world, cands, center_paradigm, others_paradigm,
                                        predictor, policy, loop.cfg,
                                        _branch_seed(seed, iteration, s_idx, t))
            failed = sum(b.failed for b in branches)
            if failed:
                logger.warning(f'{failed} of {len(branches)} branches failed in {scenario.name!r} at step {t}.')
            returns = [branch_return(b, cfg.reward, cfg.gamma, loop.cfg.dt) for b in branches]
            index = select_max_likelihood(cands)
            if len(branches) >= 2:
                group = group_advantages(returns)
                dispersions.append(branch_dispersion(branches))
                buffer.add(Transition(loop.world, cands, index, group,
                                      log_softmax(cands.scores.ravel())))
            states.append(loop.execute(cands, index))
        episodes.append(states)
    return episodes, dispersions

def train(scenarios, cfg, scoring: Optional[ScoringParams] = None,
          predictor: Optional[agents.PredictorParams] = None, start_iteration: int = 0,
          seed: int = 0, center_paradigm: Paradigm = Paradigm.TRAJECTORY_ALIGNED,
          others_paradigm: OthersParadigm = OthersParadigm.STEPWISE_PREDICTION) -> TrainingResult:
    '''
    Alternate collection and update for `cfg.iterations` iterations.
    Collection executes the highest-score candidate at every real step;
    the update runs `cfg.epochs` ascent steps on the surrogate objective
    and as many predictor descent steps on the realised futures.
    '''

    if not scenarios:
        raise ValueError('Training needs at least one scenario.')
    scoring = ScoringParams(cfg.policy_theta) if scoring is None else scoring
    predictor = agents.PredictorParams.zeros(cfg) if predictor is None else predictor
    result = TrainingResult(scoring, predictor, [], start_iteration)
    buffer = RolloutBuffer(cfg.buffer_capacity)
    rng = np.random.default_rng([seed, start_iteration])

    for it in range(cfg.iterations):
        start = time.time()
        iteration = start_iteration + it + 1
        theta_old = result.scoring.theta.copy()
        buffer.clear()
        episodes, dispersions = collect(scenarios, cfg, result.scoring, result.predictor, buffer,
                                        center_paradigm, others_paradigm, seed, iteration)

        theta = theta_old.copy()
        objective = 0.0
        if len(buffer):
            for _ in range(cfg.epochs):
                batch = buffer.sample(cfg.minibatch, rng)
                objective, grad = policy_objective(batch, theta, None, cfg.epsilon, cfg.dual_clip)
                theta = theta + cfg.policy_lr * grad
            objective, _ = policy_objective(list(buffer.items), theta, None,
                                            cfg.epsilon, cfg.dual_clip)
        scoring = ScoringParams(theta)

        samples = [s for states in episodes for t in range(len(states))
                   for s in [agents.sample_from_states(states, t, cfg, result.predictor.history)]
                   if s is not None]
        predictor = result.predictor
        pred_loss = 0.0
        if samples:
            predictor = agents.train_predictor(samples, predictor, cfg)
            pred_loss = agents.predictor_loss(samples, predictor, cfg)[0].total

        returns = [r for tr in buffer.items for r in tr.group.returns]
        best = [float(softmax(tr.features @ theta)[int(np.argmax(tr.group.returns))])
                for tr in buffer.items]
        row = LogRow(iteration,
                     float(np.mean(returns)) if returns else 0.0,
                     float(objective), float(pred_loss),
                     float(np.mean(dispersions)) if dispersions else 0.0,
                     float(np.mean(best)) if best else 0.0)
        result = TrainingResult(scoring, predictor, result.log + [row], iteration)
        logger.info(f'Iteration {iteration}: mean return {row.mean_return:.4f}, '
                    f'objective {row.objective:.4f}, predictor loss {row.pred_loss:.4f}, '
                    f'best-branch probability {row.best_probability:.4f} '
                    f'({time.time() - start:.2f} seconds).')
    return result
