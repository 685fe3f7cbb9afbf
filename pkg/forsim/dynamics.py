#!/usr/bin/env python3

'''
Kinematic bicycle model and the PID tracking controller. `propagate` is
the one place where a tracked agent advances by one step.
'''

from dataclasses import dataclass
import math
from typing import Optional, Tuple

import numpy as np

from forsim.world import AgentState, Trajectory

@dataclass(frozen=True)
class ControlInput:
    accel: float = 0.0
    steer: float = 0.0

    @classmethod
    def clamp(cls, accel: float, steer: float, cfg) -> 'ControlInput':
        return cls(min(max(accel, -cfg.a_max), cfg.a_max),
                   min(max(steer, -cfg.steer_max), cfg.steer_max))

    def as_tuple(self):
        return (self.accel, self.steer)

@dataclass(frozen=True)
class PidState:
    '''Controller memory of one tracked agent. `prev_lateral_error` holds
    the combined cross-track and heading error of the previous call;
    `control` is the last output.'''

    speed_integral: float = 0.0
    lateral_integral: float = 0.0
    prev_speed_error: Optional[float] = None
    prev_lateral_error: Optional[float] = None
    control: Tuple[float, float] = (0.0, 0.0)

def kinematic_update(state, accel: float, dtheta: float, dt: float,
                     v_max: float = math.inf):
    '''
    One forward Euler step on a raw (x, y, cos, sin, vx, vy) sequence.
    The position moves along the old heading at the old speed, then the
    heading is rotated by `dtheta` and renormalised and the speed becomes
    clamp(v + accel*dt, 0, v_max).
    '''

    x, y, c, s, vx, vy = state
    v = max(vx * c + vy * s, 0.0)
    nx = x + v * c * dt
    ny = y + v * s * dt
    cd = math.cos(dtheta)
    sd = math.sin(dtheta)
    nc = c * cd - s * sd
    ns = s * cd + c * sd
    norm = math.hypot(nc, ns)
    nc /= norm
    ns /= norm
    nv = min(max(v + accel * dt, 0.0), v_max)
    return (nx, ny, nc, ns, nv * nc, nv * ns)

def bicycle_step(s: AgentState, u: ControlInput, wheelbase: float, dt: float,
                 v_max: float = math.inf) -> AgentState:
    v = max(s.speed, 0.0)
    dtheta = v / wheelbase * math.tan(u.steer) * dt
    return AgentState(*kinematic_update(
        (s.x, s.y, s.cos_h, s.sin_h, s.vx, s.vy), u.accel, dtheta, dt, v_max))

def _wrap(angle):
    return (angle + math.pi) % (2 * math.pi) - math.pi

def _nearest_segment(points, xy):
    '''Index of the nearest segment start, the foot point and the unit
    direction of that segment. Zero-length segments fall back to the
    heading stored in the trajectory.'''
    pos = points[:, :2]
    if len(pos) == 1:
        return 0, pos[0], points[0, 2:4]
    seg = np.diff(pos, axis=0)
    sq = np.einsum('ij,ij->i', seg, seg)
    rel = xy - pos[:-1]
    with np.errstate(invalid='ignore', divide='ignore'):
        t = np.where(sq > 0, np.einsum('ij,ij->i', rel, seg) / sq, 0.0)
    t = np.clip(t, 0.0, 1.0)
    foot = pos[:-1] + t[:, None] * seg
    dist = np.hypot(xy[0] - foot[:, 0], xy[1] - foot[:, 1])
    k = int(np.argmin(dist))
    if sq[k] > 0:
        direction = seg[k] / math.sqrt(sq[k])
    else:
        direction = points[k, 2:4]
    return k, foot[k], direction

def pid_control(s: AgentState, target: Trajectory, pid: PidState, cfg
                ) -> Tuple[ControlInput, PidState]:
    '''
    Speed loop on the error to the lookahead point's speed and lateral
    loop on cross-track plus weighted heading error. Positive lateral
    error (agent left of the target) produces a right (negative) steer.
    '''

    gains = cfg.pid
    dt = cfg.dt
    points = target.points
    k, foot, direction = _nearest_segment(points, np.array([s.x, s.y]))
    m = min(k + gains.lookahead, len(points) - 1)

    ref = points[m]
    target_speed = ref[4] * ref[2] + ref[5] * ref[3]
    speed_error = target_speed - s.speed
    speed_integral = min(max(pid.speed_integral + speed_error * dt,
                             -gains.windup), gains.windup)
    speed_deriv = 0.0
    if pid.prev_speed_error is not None:
        speed_deriv = (speed_error - pid.prev_speed_error) / dt
    accel = (gains.speed_kp * speed_error + gains.speed_ki * speed_integral
             + gains.speed_kd * speed_deriv)

    dx = s.x - foot[0]
    dy = s.y - foot[1]
    cross_track = direction[0] * dy - direction[1] * dx
    heading_error = _wrap(math.atan2(s.sin_h, s.cos_h) - math.atan2(ref[3], ref[2]))
    lateral_error = cross_track + gains.heading_gain * heading_error
    lateral_integral = min(max(pid.lateral_integral + lateral_error * dt,
                               -gains.windup), gains.windup)
    lateral_deriv = 0.0
    if pid.prev_lateral_error is not None:
        lateral_deriv = (lateral_error - pid.prev_lateral_error) / dt
    steer = -(gains.lateral_kp * lateral_error + gains.lateral_ki * lateral_integral
              + gains.lateral_kd * lateral_deriv)

    u = ControlInput.clamp(accel, steer, cfg)
    return u, PidState(speed_integral, lateral_integral, speed_error,
                       lateral_error, u.as_tuple())

def propagate(s: AgentState, target: Trajectory, pid: PidState, cfg,
              wheelbase: float = 2.8) -> Tuple[AgentState, PidState]:
    u, pid = pid_control(s, target, pid, cfg)
    return bicycle_step(s, u, wheelbase, cfg.dt, cfg.v_max), pid
