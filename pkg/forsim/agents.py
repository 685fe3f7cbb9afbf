#!/usr/bin/env python3

'''
Other-agent rollouts and the trainable predictor.

The predictor is a linear map from a short kinematic history (plus the
gap to the nearest agent ahead) to a sequence of (acceleration, yaw rate)
controls, which are clamped and rolled through the kinematic model. The
composite loss and its gradient with respect to the weights are computed
here by reverse accumulation through the unroll.
'''

from dataclasses import dataclass, replace
import logging
import math
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from forsim.dynamics import ControlInput, bicycle_step, kinematic_update
from forsim.world import Trajectory, ValidationError, Vehicle, initial_history

logger = logging.getLogger('forsim.agents')

LEAD_CORRIDOR = 2.0
LEAD_RANGE = 50.0
MAX_HALVINGS = 10

class HorizonTooShort(ValueError):
    pass

def feature_count(history: int) -> int:
    return 2 * history + 2

def _wrap(angle):
    return (angle + np.pi) % (2 * np.pi) - np.pi

def history_features(window, dt: float, lead=(0.0, 0.0)) -> np.ndarray:
    '''
    Feature vector of one agent: bias, current speed / 10, then for each
    lag the acceleration / 4 and the yaw rate estimated from consecutive
    history states, then the inverse gap and closing rate to the agent
    ahead.
    '''

    window = np.asarray(window, dtype=float)
    size = len(window)
    speed = window[:, 4] * window[:, 2] + window[:, 5] * window[:, 3]
    angle = np.arctan2(window[:, 3], window[:, 2])
    feats = np.zeros(feature_count(size))
    feats[0] = 1.0
    feats[1] = speed[-1] / 10.0
    for h in range(1, size):
        feats[2 * h] = (speed[size - h] - speed[size - h - 1]) / dt / 4.0
        feats[2 * h + 1] = _wrap(angle[size - h] - angle[size - h - 1]) / dt
    feats[2 * size] = lead[0]
    feats[2 * size + 1] = lead[1]
    return feats

def lead_features(vehicle: Vehicle, pool) -> tuple:
    '''(1/gap, closing speed/gap) to the nearest vehicle of `pool` ahead
    within the lane corridor, gaps floored at 1 m; zeros when none.'''
    s = vehicle.state
    best = None
    for other in pool:
        if other is vehicle:
            continue
        dx = other.state.x - s.x
        dy = other.state.y - s.y
        lon = dx * s.cos_h + dy * s.sin_h
        lat = s.cos_h * dy - s.sin_h * dx
        if 0 < lon <= LEAD_RANGE and abs(lat) < LEAD_CORRIDOR:
            if best is None or lon < best[0]:
                best = (lon, other)
    if best is None:
        return (0.0, 0.0)
    gap, lead = best
    lead_speed = lead.state.vx * s.cos_h + lead.state.vy * s.sin_h
    floor = max(gap, 1.0)
    return (1.0 / floor, max(0.0, s.speed - lead_speed) / floor)

def _window(vehicle: Vehicle, window, history: int) -> np.ndarray:
    if window is None:
        return initial_history(vehicle, history)
    window = np.asarray(window, dtype=float)[-history:]
    if len(window) < history:
        window = np.vstack([np.repeat(window[:1], history - len(window), axis=0), window])
    return window

def agent_features(agents, histories, dt: float, history: int, neighbours=()) -> np.ndarray:
    agents = list(agents)
    if histories is None:
        histories = [None] * len(agents)
    pool = agents + list(neighbours)
    if not agents:
        return np.zeros((0, feature_count(history)))
    return np.array([history_features(_window(v, w, history), dt, lead_features(v, pool))
                     for v, w in zip(agents, histories)])

@dataclass(frozen=True, eq=False)
class PredictorParams:
    '''Weights `w` of shape (2 * T, 2 * H + 2); row 2k gives the
    acceleration and row 2k + 1 the yaw rate of step k.'''

    w: np.ndarray
    history: int = 5
    a_max: float = 4.0
    yaw_max: float = 1.0
    v_max: float = 15.0

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] < 2 or w.shape[0] % 2 or w.shape[1] != feature_count(self.history):
            raise ValidationError(f'Predictor weights must have shape (2T, {feature_count(self.history)}), got {w.shape}.')
        if not np.all(np.isfinite(w)):
            raise ValidationError('Predictor weights must be finite.')
        w.flags.writeable = False
        object.__setattr__(self, 'w', w)

    @classmethod
    def zeros(cls, cfg, horizon: Optional[int] = None):
        horizon = cfg.horizon if horizon is None else horizon
        return cls(np.zeros((2 * horizon, feature_count(cfg.history))),
                   cfg.history, cfg.a_max, 1.0, cfg.v_max)

    @property
    def horizon(self) -> int:
        return self.w.shape[0] // 2

    def with_w(self, w) -> 'PredictorParams':
        return replace(self, w=w)

    def step_index(self, steps: int) -> np.ndarray:
        '''Weight row used by each step; steps past the trained horizon
        repeat the last control.'''
        return np.minimum(np.arange(steps), self.horizon - 1)

    def raw_controls(self, features: np.ndarray, steps: int):
        u = (features @ self.w.T).reshape(len(features), self.horizon, 2)
        u = u[:, self.step_index(steps)]
        return u[..., 0], u[..., 1]

def predict(agents, history, p: PredictorParams, T: int, dt: float,
            neighbours=(), steps: Optional[int] = None) -> List[Trajectory]:
    '''
    Predicted trajectories (states 1..steps, default T) for every agent.
    `history` holds one window of past states per agent (or None to use
    the vehicle's own history); short windows are padded with the oldest
    state. `neighbours` are extra vehicles considered as leads.
    '''

    steps = T if steps is None else steps
    agents = list(agents)
    feats = agent_features(agents, history, dt, p.history, neighbours)
    accel, yaw = p.raw_controls(feats, steps)
    accel = np.clip(accel, -p.a_max, p.a_max)
    yaw = np.clip(yaw, -p.yaw_max, p.yaw_max)
    out = []
    for n, vehicle in enumerate(agents):
        s = vehicle.state
        state = (s.x, s.y, s.cos_h, s.sin_h, s.vx, s.vy)
        rows = []
        for k in range(steps):
            state = kinematic_update(state, accel[n, k], yaw[n, k] * dt, dt, p.v_max)
            rows.append(state)
        out.append(Trajectory(np.array(rows), dt))
    return out

def rollout_constant_action(agents, T: int, dt: float, v_max: float = math.inf,
                            cfg=None) -> List[Trajectory]:
    out = []
    for vehicle in agents:
        u = ControlInput(*vehicle.control)
        if cfg is not None:
            u = ControlInput.clamp(u.accel, u.steer, cfg)
        s = vehicle.state
        rows = []
        for _ in range(T):
            s = bicycle_step(s, u, vehicle.wheelbase, dt, v_max)
            rows.append(s.as_array())
        out.append(Trajectory(np.array(rows), dt))
    return out

def rollout_single_prediction(agents, history, p: PredictorParams, T: int, dt: float,
                              neighbours=()) -> List[Trajectory]:
    return predict(agents, history, p, T, dt, neighbours)

def rollout_stepwise_prediction(agents, history, p: PredictorParams, T: int, dt: float,
                                neighbours=()) -> List[Trajectory]:
    '''Re-predict from the current virtual state at every step and execute
    only the first predicted step.'''
    vehicles = list(agents)
    if history is None:
        history = [None] * len(vehicles)
    windows = [_window(v, w, p.history) for v, w in zip(vehicles, history)]
    rows = [[] for _ in vehicles]
    for _ in range(T):
        preds = predict(vehicles, windows, p, T, dt, neighbours, steps=1)
        for n, traj in enumerate(preds):
            state = traj.state(0)
            vehicles[n] = vehicles[n].moved(state)
            windows[n] = np.vstack([windows[n], state.as_array()])[-p.history:]
            rows[n].append(state.as_array())
    return [Trajectory(np.array(r), dt) for r in rows]

class LossTerms(NamedTuple):
    total: float
    anchor: float
    kin: float
    smooth: float

@dataclass(frozen=True, eq=False)
class PredictionBatch:
    predictions: np.ndarray
    targets: np.ndarray
    dt: float

    def __post_init__(self):
        pred = _stack(self.predictions)
        target = _stack(self.targets)
        if pred.ndim != 3 or target.ndim != 3 or pred.shape[-1] != 6 or target.shape[-1] != 6:
            raise ValidationError('Predictions and targets must be (N, T, 6) arrays.')
        if len(pred) != len(target):
            raise ValidationError(f'Agent counts differ: {len(pred)} predictions, {len(target)} targets.')
        if target.shape[1] > pred.shape[1]:
            raise ValidationError(f'Target length {target.shape[1]} exceeds prediction length {pred.shape[1]}.')
        object.__setattr__(self, 'predictions', pred)
        object.__setattr__(self, 'targets', target)

def _stack(trajs):
    if isinstance(trajs, np.ndarray):
        return trajs.astype(float)
    return np.array([t.points if isinstance(t, Trajectory) else t for t in trajs], dtype=float)

def smooth_l1(x):
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)

def _loss_and_grad(pred, target, cfg, dt):
    n_agents, horizon, _ = pred.shape
    if horizon < 3:
        raise HorizonTooShort(f'The kinematic term needs at least 3 predicted steps, got {horizon}.')
    grad = np.zeros_like(pred)
    if n_agents == 0:
        return LossTerms(0.0, 0.0, 0.0, 0.0), grad

    future = target.shape[1]
    err = pred[:, :future] - target
    anchor = float(smooth_l1(err).mean())
    grad_anchor = np.zeros_like(pred)
    grad_anchor[:, :future] = np.clip(err, -1.0, 1.0) / err.size

    vel = pred[:, :, 4:6]
    pos = pred[:, :, :2]
    resid = vel[:, 1:-1] - (pos[:, 2:] - pos[:, :-2]) / (2 * dt)
    kin = float(smooth_l1(resid).mean())
    g = np.clip(resid, -1.0, 1.0) / resid.size
    grad_kin = np.zeros_like(pred)
    grad_kin[:, 1:-1, 4:6] += g
    grad_kin[:, 2:, :2] -= g / (2 * dt)
    grad_kin[:, :-2, :2] += g / (2 * dt)

    d1 = np.diff(vel, axis=1)
    d2 = np.diff(vel, n=2, axis=1)
    smooth = float(np.abs(d1).mean() + np.abs(d2).mean())
    g1 = np.sign(d1) / d1.size
    g2 = np.sign(d2) / d2.size
    grad_smooth = np.zeros_like(pred)
    grad_smooth[:, 1:, 4:6] += g1
    grad_smooth[:, :-1, 4:6] -= g1
    grad_smooth[:, 2:, 4:6] += g2
    grad_smooth[:, 1:-1, 4:6] -= 2 * g2
    grad_smooth[:, :-2, 4:6] += g2

    total = cfg.w_anchor * anchor + cfg.w_kin * kin + cfg.w_smooth * smooth
    grad = cfg.w_anchor * grad_anchor + cfg.w_kin * grad_kin + cfg.w_smooth * grad_smooth
    return LossTerms(total, anchor, kin, smooth), grad

def prediction_loss(batch: PredictionBatch, cfg) -> LossTerms:
    terms, _ = _loss_and_grad(batch.predictions, batch.targets, cfg, batch.dt)
    return terms

@dataclass(frozen=True, eq=False)
class PredictorSample:
    '''One supervised example: features and current states of N agents
    and their realised next T_f states.'''

    features: np.ndarray
    states: np.ndarray
    targets: np.ndarray

def _unroll(states, accel_raw, yaw_raw, p: PredictorParams, dt):
    '''Batched unroll in heading-angle form; returns predictions (N, T, 6)
    and what the backward pass needs.'''
    n_agents, horizon = accel_raw.shape
    accel = np.clip(accel_raw, -p.a_max, p.a_max)
    yaw = np.clip(yaw_raw, -p.yaw_max, p.yaw_max)
    theta = np.empty((n_agents, horizon + 1))
    speed = np.empty((n_agents, horizon + 1))
    x = np.empty((n_agents, horizon + 1))
    y = np.empty((n_agents, horizon + 1))
    free = np.empty((n_agents, horizon))
    theta[:, 0] = np.arctan2(states[:, 3], states[:, 2])
    speed[:, 0] = np.maximum(states[:, 4] * states[:, 2] + states[:, 5] * states[:, 3], 0.0)
    x[:, 0] = states[:, 0]
    y[:, 0] = states[:, 1]
    for k in range(horizon):
        x[:, k + 1] = x[:, k] + speed[:, k] * np.cos(theta[:, k]) * dt
        y[:, k + 1] = y[:, k] + speed[:, k] * np.sin(theta[:, k]) * dt
        theta[:, k + 1] = theta[:, k] + yaw[:, k] * dt
        raw = speed[:, k] + accel[:, k] * dt
        speed[:, k + 1] = np.clip(raw, 0.0, p.v_max)
        free[:, k] = (raw > 0.0) & (raw < p.v_max)
    c = np.cos(theta[:, 1:])
    s = np.sin(theta[:, 1:])
    v = speed[:, 1:]
    out = np.stack([x[:, 1:], y[:, 1:], c, s, v * c, v * s], axis=-1)
    cache = (theta, speed, free,
             np.abs(accel_raw) < p.a_max, np.abs(yaw_raw) < p.yaw_max)
    return out, cache

def _unroll_backward(cache, grad_out, dt):
    theta, speed, free, accel_free, yaw_free = cache
    n_agents, horizon, _ = grad_out.shape
    lam_x = np.zeros(n_agents)
    lam_y = np.zeros(n_agents)
    lam_th = np.zeros(n_agents)
    lam_v = np.zeros(n_agents)
    g_accel = np.zeros((n_agents, horizon))
    g_yaw = np.zeros((n_agents, horizon))
    for k in range(horizon - 1, -1, -1):
        j = k + 1
        c = np.cos(theta[:, j])
        s = np.sin(theta[:, j])
        v = speed[:, j]
        g = grad_out[:, k]
        lam_x = lam_x + g[:, 0]
        lam_y = lam_y + g[:, 1]
        lam_th = lam_th - s * g[:, 2] + c * g[:, 3] - v * s * g[:, 4] + v * c * g[:, 5]
        lam_v = lam_v + c * g[:, 4] + s * g[:, 5]
        g_yaw[:, k] = lam_th * dt
        g_accel[:, k] = lam_v * free[:, k] * dt
        cp = np.cos(theta[:, k])
        sp = np.sin(theta[:, k])
        vp = speed[:, k]
        lam_th = lam_th - lam_x * vp * sp * dt + lam_y * vp * cp * dt
        lam_v = lam_v * free[:, k] + lam_x * cp * dt + lam_y * sp * dt
    return g_accel * accel_free, g_yaw * yaw_free

def predictor_loss(samples: Sequence[PredictorSample], p: PredictorParams, cfg):
    '''Mean loss over samples and its gradient with respect to `p.w`.'''
    totals = np.zeros(4)
    grad = np.zeros_like(p.w)
    used = 0
    for sample in samples:
        if len(sample.states) == 0:
            continue
        accel_raw, yaw_raw = p.raw_controls(sample.features, cfg.horizon)
        pred, cache = _unroll(sample.states, accel_raw, yaw_raw, p, cfg.dt)
        terms, g_pred = _loss_and_grad(pred, sample.targets, cfg, cfg.dt)
        g_accel, g_yaw = _unroll_backward(cache, g_pred, cfg.dt)
        g_u = np.zeros((len(sample.states), p.horizon, 2))
        index = p.step_index(cfg.horizon)
        np.add.at(g_u, (slice(None), index, 0), g_accel)
        np.add.at(g_u, (slice(None), index, 1), g_yaw)
        grad += g_u.reshape(len(sample.states), -1).T @ sample.features
        totals += terms
        used += 1
    if used:
        totals /= used
        grad /= used
    return LossTerms(*map(float, totals)), grad

def train_predictor(buffer: Sequence[PredictorSample], p: PredictorParams, cfg,
                    epochs: Optional[int] = None) -> PredictorParams:
    '''
    Full-batch gradient descent on the composite loss over a fixed set of
    samples, one step of `cfg.predictor_lr` per epoch. With
    `cfg.predictor_line_search` each epoch instead halves the step from
    `cfg.predictor_lr` until the loss does not increase, and an epoch
    that finds no such step ends training.
    '''

    samples = [s for s in buffer if len(s.states)]
    if not samples:
        return p
    epochs = cfg.epochs if epochs is None else epochs
    loss, grad = predictor_loss(samples, p, cfg)
    for epoch in range(epochs):
        if not cfg.predictor_line_search:
            p = p.with_w(p.w - cfg.predictor_lr * grad)
            loss, grad = predictor_loss(samples, p, cfg)
            continue
        lr = cfg.predictor_lr
        for _ in range(MAX_HALVINGS + 1):
            trial = p.with_w(p.w - lr * grad)
            trial_loss, trial_grad = predictor_loss(samples, trial, cfg)
            if trial_loss.total <= loss.total:
                p, loss, grad = trial, trial_loss, trial_grad
                break
            lr *= 0.5
        else:
            logger.debug(f'Predictor training stalled after {epoch} epochs at loss {loss.total:.6g}.')
            break
    logger.debug(f'Predictor loss after training: {loss.total:.6g}.')
    return p

def sample_from_states(states, t: int, cfg, history: Optional[int] = None) -> Optional[PredictorSample]:
    '''Supervised sample for the other agents of `states[t]`, or None when
    fewer than T_f future states were logged.'''
    history = cfg.history if history is None else history
    future = cfg.future_steps
    world = states[t]
    if not world.others or t + future >= len(states):
        return None
    feats = agent_features(world.others, world.histories or None, cfg.dt, history,
                           (world.center,))
    current = np.array([v.state.as_array() for v in world.others])
    targets = np.array([[states[t + k].others[n].state.as_array() for k in range(1, future + 1)]
                        for n in range(len(world.others))])
    return PredictorSample(feats, current, targets)

def pretrain_predictor(episodes, p: PredictorParams, cfg) -> PredictorParams:
    '''Warm up the predictor on logged real-time episodes.'''
    samples = []
    for states in episodes:
        for t in range(len(states)):
            sample = sample_from_states(states, t, cfg, p.history)
            if sample is not None:
                samples.append(sample)
    if not samples:
        logger.warning('No logged futures long enough to pre-train the predictor.')
        return p
    logger.info(f'Pre-training the predictor on {len(samples)} samples for {cfg.warmup_steps} steps.')
    return train_predictor(samples, p, cfg, epochs=cfg.warmup_steps)
