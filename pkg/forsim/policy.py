#!/usr/bin/env python3

'''
Candidate generation and scoring. The lattice crosses up to N_ref
reachable reference lines with N_lon speed ramps; a linear head over five
features turns each candidate into a logit, and the softmax of the logits
is the trajectory-level likelihood used during fine-tuning.
'''

from dataclasses import dataclass, field, replace
import logging
import math
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from forsim.world import AgentState, CandidateSet, Trajectory, WorldState

logger = logging.getLogger('forsim.policy')

FEATURE_NAMES = ('progress', 'clearance', 'mean_abs_accel', 'offroad', 'terminal_speed')
CLEARANCE_CAP = 2.0

class NoReferenceLine(RuntimeError):
    pass

@dataclass(frozen=True, eq=False)
class ScoringParams:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (len(FEATURE_NAMES),) or not np.all(np.isfinite(theta)):
            raise ValueError(f'Scoring weights must be {len(FEATURE_NAMES)} finite numbers, got {self.theta!r}.')
        theta.flags.writeable = False
        object.__setattr__(self, 'theta', theta)

    @classmethod
    def zeros(cls):
        return cls(np.zeros(len(FEATURE_NAMES)))

@dataclass(frozen=True)
class LatticePolicy:
    n_ref: int = 3
    n_lon: int = 4
    v_max: float = 15.0
    a_max: float = 4.0
    reach: float = 10.0
    noise: float = 0.0
    scoring: ScoringParams = field(default_factory=ScoringParams.zeros)

    @classmethod
    def from_config(cls, cfg, scoring: Optional[ScoringParams] = None):
        if scoring is None:
            scoring = ScoringParams(cfg.policy_theta)
        return cls(cfg.n_ref, cfg.n_lon, cfg.v_max, cfg.a_max, cfg.reach,
                   cfg.candidate_noise, scoring)

    def with_scoring(self, scoring: ScoringParams) -> 'LatticePolicy':
        return replace(self, scoring=scoring)

    def target_speeds(self, current: float) -> np.ndarray:
        if self.n_lon == 1:
            return np.array([current])
        return np.linspace(0.0, self.v_max, self.n_lon)

def reachable_lines(world_map, xy, reach: float):
    '''Indices of reference lines within `reach` of `xy`, nearest first.'''
    dist = np.array([float(line.distance(xy)[0]) for line in world_map.lines])
    order = sorted((d, n) for n, d in enumerate(dist) if d <= reach)
    return [n for _, n in order]

def speed_profiles(v0: float, targets, horizon: int, dt: float, a_max: float) -> np.ndarray:
    '''
    (L, T) speeds easing from v0 to each target along a cubic smoothstep
    v0 + dv (3u^2 - 2u^3), u = t / tau. The acceleration is a parabola
    that is zero at both ends and peaks at 1.5 |dv| / tau at the midpoint,
    so tau = 1.5 |dv| / a_max keeps it within a_max; when that ramp does
    not fit in the horizon tau is cut to (T - 1) dt and the peak exceeds
    a_max so that every row still reaches its target.
    '''

    t = np.arange(horizon) * dt
    rows = []
    for target in targets:
        dv = target - v0
        tau = min(max(1.5 * abs(dv) / a_max, dt), max((horizon - 1) * dt, dt))
        u = np.clip(t / tau, 0.0, 1.0)
        rows.append(v0 + dv * (3 * u ** 2 - 2 * u ** 3))
    return np.array(rows)

def _stations(speeds, dt):
    travel = 0.5 * (speeds[..., 1:] + speeds[..., :-1]) * dt
    return np.concatenate([np.zeros(speeds.shape[:-1] + (1,)), np.cumsum(travel, axis=-1)], axis=-1)

def _row(line, state, s0, d0, rel, stations, speed):
    horizon = len(speed)
    xy, tangent = line.point_at(s0 + stations)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    half = min(horizon // 2, horizon - 1)
    span = stations[half]
    if span < 0.1:
        offset = np.full(horizon, d0)
        heading_c = np.full(horizon, state.cos_h)
        heading_s = np.full(horizon, state.sin_h)
    else:
        slope = min(max(math.tan(rel), -1.0), 1.0) * span
        c3 = -10 * d0 - 6 * slope
        c4 = 15 * d0 + 8 * slope
        c5 = -6 * d0 - 3 * slope
        u = np.clip(stations / span, 0.0, 1.0)
        offset = d0 + slope * u + c3 * u ** 3 + c4 * u ** 4 + c5 * u ** 5
        d_du = slope + 3 * c3 * u ** 2 + 4 * c4 * u ** 3 + 5 * c5 * u ** 4
        angle = np.arctan2(tangent[:, 1], tangent[:, 0]) + np.arctan(d_du / span)
        heading_c = np.cos(angle)
        heading_s = np.sin(angle)
    pos = xy + offset[:, None] * normal
    return np.stack([pos[:, 0], pos[:, 1], heading_c, heading_s,
                     speed * heading_c, speed * heading_s], axis=1)

def candidate_features(trajectories: np.ndarray, world: WorldState, dt: float) -> np.ndarray:
    '''Feature tensor of shape trajectories.shape[:-2] + (5,).'''
    lead = trajectories.shape[:-2]
    horizon = trajectories.shape[-2]
    flat = trajectories.reshape(-1, horizon, 6)
    route = world.map.route(0)
    start, _ = route.locate(flat[:, 0, :2])
    end, _ = route.locate(flat[:, -1, :2])
    progress = (end - start) / 10.0

    if world.others:
        steps = np.arange(horizon) * dt
        others = np.array([v.state.as_array() for v in world.others])
        future = others[:, None, :2] + steps[None, :, None] * others[:, None, 4:6]
        gap = flat[:, None, :, :2] - future[None]
        clearance = np.hypot(gap[..., 0], gap[..., 1]).min(axis=(1, 2)) / 10.0
        clearance = np.minimum(clearance, CLEARANCE_CAP)
    else:
        clearance = np.full(len(flat), CLEARANCE_CAP)

    speeds = flat[..., 4] * flat[..., 2] + flat[..., 5] * flat[..., 3]
    if horizon > 1:
        accel = np.abs(np.diff(speeds, axis=1)).mean(axis=1) / dt
    else:
        accel = np.zeros(len(flat))
    inside = world.map.on_road(flat[..., :2].reshape(-1, 2)).reshape(len(flat), horizon)
    offroad = 1.0 - inside.mean(axis=1)
    terminal = speeds[:, -1] / 10.0
    feats = np.stack([progress, clearance, accel, offroad, terminal], axis=1)
    return feats.reshape(lead + (len(FEATURE_NAMES),))

def score_candidates(cands: CandidateSet, world: WorldState, p: ScoringParams) -> CandidateSet:
    feats = candidate_features(cands.trajectories, world, cands.dt)
    return cands.with_scores(feats @ p.theta, feats)

def generate_candidates(world: WorldState, pol: LatticePolicy, cfg,
                        rng: Optional[np.random.Generator] = None) -> CandidateSet:
    '''
    Build and score the N_ref x N_lon grid for the center agent of
    `world`. Raises NoReferenceLine when no reference line lies within
    the reach radius.
    '''

    state = world.center.state
    lines = reachable_lines(world.map, state.position, pol.reach)
    if not lines:
        raise NoReferenceLine(f'No reference line within {pol.reach} m of ({state.x:.2f}, {state.y:.2f}).')
    degenerate = len(lines) < pol.n_ref
    if degenerate:
        logger.debug(f'Only {len(lines)} reference line(s) reachable, padding to {pol.n_ref}.')
        lines = lines + [lines[0]] * (pol.n_ref - len(lines))
    lines = lines[:pol.n_ref]

    v0 = max(state.speed, 0.0)
    targets = pol.target_speeds(v0)
    if pol.noise > 0 and rng is not None:
        targets = np.clip(targets + rng.normal(0.0, pol.noise, len(targets)), 0.0, pol.v_max)
    speeds = speed_profiles(v0, targets, cfg.horizon, cfg.dt, pol.a_max)
    stations = _stations(speeds, cfg.dt)

    grid = np.empty((pol.n_ref, pol.n_lon, cfg.horizon, 6))
    rows = {}
    for i, n in enumerate(lines):
        if n not in rows:
            rows[n] = _lattice(world.map.lines[n], state, stations, speeds)
        grid[i] = rows[n]
    cands = CandidateSet(grid, np.zeros((pol.n_ref, pol.n_lon)), cfg.dt,
                         lines=np.array(lines), degenerate=degenerate)
    return score_candidates(cands, world, pol.scoring)

def _lattice(line, state, stations, speeds):
    s0, d0 = line.locate(state.position)
    s0 = float(s0[0])
    d0 = float(d0[0])
    _, tangent0 = line.point_at(s0)
    rel = math.atan2(state.sin_h, state.cos_h) - math.atan2(tangent0[1], tangent0[0])
    rel = (rel + math.pi) % (2 * math.pi) - math.pi
    out = np.stack([_row(line, state, s0, d0, rel, stations[r], speeds[r])
                    for r in range(len(speeds))])
    out[:, 0] = state.as_array()
    return out

def lane_keeping_target(state: AgentState, world_map, cfg) -> Optional[Trajectory]:
    '''Constant-speed trajectory along the nearest reference line, or
    None when the agent is off the map.'''
    lines = reachable_lines(world_map, state.position, cfg.reach)
    if not lines:
        return None
    v0 = max(state.speed, 0.0)
    speeds = np.full((1, cfg.horizon), v0)
    row = _lattice(world_map.lines[lines[0]], state, _stations(speeds, cfg.dt), speeds)
    return Trajectory(row[0], cfg.dt)

def probabilities(cands: CandidateSet) -> np.ndarray:
    return softmax(cands.scores.ravel()).reshape(cands.shape)

def likelihood(cands: CandidateSet, index) -> float:
    return float(probabilities(cands)[tuple(index)])

def log_likelihood(scores: np.ndarray, flat: int) -> float:
    scores = np.ravel(scores)
    return float(scores[flat] - logsumexp(scores))

def likelihood_grad(cands: CandidateSet, index, p: ScoringParams) -> np.ndarray:
    '''Gradient of log pi_theta(index) with respect to theta.'''
    if cands.features is None:
        raise ValueError('Candidate set carries no features; score it first.')
    feats = cands.features.reshape(-1, len(FEATURE_NAMES))
    pi = softmax(feats @ p.theta)
    return feats[cands.flat_index(index)] - pi @ feats
