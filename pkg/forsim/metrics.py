#!/usr/bin/env python3

'''
Episode metrics: kinematic realism (Shapiro-Wilk on speed and
acceleration, Wasserstein distance to a reference speed sample),
interaction (collisions per kilometre, route progress, time to collision,
anticipated collision time), map compliance and comfort.
'''

from dataclasses import dataclass
import functools
import json
import logging
import math
from typing import NamedTuple, Optional, Sequence

import numpy as np
import shapely
from scipy import stats

from forsim.config import COMFORT_ACCEL
from forsim.world import AgentState, ValidationError, Vehicle, WorldState

logger = logging.getLogger('forsim.metrics')

CPK_DISTANCE_FLOOR = 1.0
ACT_STEP = 1e-3

class DegenerateSample(ValueError):
    pass

class EpisodeTooShort(ValueError):
    pass

@dataclass(frozen=True)
class ObbShape:
    x: float
    y: float
    half_length: float
    half_width: float
    cos_h: float = 1.0
    sin_h: float = 0.0

    def __post_init__(self):
        if not (self.half_length > 0 and self.half_width > 0):
            raise ValidationError('Box half dimensions must be positive.')
        norm = math.hypot(self.cos_h, self.sin_h)
        if norm == 0:
            raise ValidationError('Box heading must not be zero.')
        object.__setattr__(self, 'cos_h', self.cos_h / norm)
        object.__setattr__(self, 'sin_h', self.sin_h / norm)

    @classmethod
    def from_state(cls, state: AgentState, length: float, width: float) -> 'ObbShape':
        return cls(state.x, state.y, length / 2, width / 2, state.cos_h, state.sin_h)

    @classmethod
    def from_vehicle(cls, vehicle: Vehicle) -> 'ObbShape':
        return cls.from_state(vehicle.state, vehicle.length, vehicle.width)

    @property
    def axes(self):
        return ((self.cos_h, self.sin_h), (-self.sin_h, self.cos_h))

    def corners(self) -> np.ndarray:
        return box_corners(np.array([[self.x, self.y, self.cos_h, self.sin_h]]),
                           2 * self.half_length, 2 * self.half_width)[0]

    def radius(self, axis) -> float:
        (ux, uy), (vx, vy) = self.axes
        return (self.half_length * abs(ux * axis[0] + uy * axis[1])
                + self.half_width * abs(vx * axis[0] + vy * axis[1]))

    def polygon(self):
        return shapely.Polygon(self.corners())

    def moved(self, dx: float, dy: float) -> 'ObbShape':
        return ObbShape(self.x + dx, self.y + dy, self.half_length, self.half_width,
                        self.cos_h, self.sin_h)

def box_corners(states: np.ndarray, length: float, width: float) -> np.ndarray:
    '''(n, 4, 2) corners, counter-clockwise, of boxes at the given rows of
    [x, y, cos, sin, ...].'''
    states = np.atleast_2d(states)
    c = states[:, 2:3]
    s = states[:, 3:4]
    lon = np.array([1, -1, -1, 1]) * (length / 2)
    lat = np.array([1, 1, -1, -1]) * (width / 2)
    x = states[:, 0:1] + lon * c - lat * s
    y = states[:, 1:2] + lon * s + lat * c
    return np.stack([x, y], axis=-1)

def obb_overlap(a: ObbShape, b: ObbShape) -> bool:
    '''Separating-axis test; touching boxes count as overlapping.'''
    dx = b.x - a.x
    dy = b.y - a.y
    for axis in a.axes + b.axes:
        if abs(dx * axis[0] + dy * axis[1]) > a.radius(axis) + b.radius(axis):
            return False
    return True

def shapiro_wilk(samples) -> float:
    '''
    Shapiro-Wilk W with Royston's approximation of the coefficients.
    Raises DegenerateSample for fewer than 3 samples or zero variance.
    '''

    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 3:
        raise DegenerateSample(f'Shapiro-Wilk needs at least 3 samples, got {n}.')
    if n > 5000:
        raise ValueError(f'Shapiro-Wilk coefficients are only valid up to 5000 samples, got {n}.')
    ss = float(np.sum((x - x.mean()) ** 2))
    if x[-1] - x[0] == 0 or ss == 0:
        raise DegenerateSample('Shapiro-Wilk is undefined for a sample with zero variance.')

    if n == 3:
        a = np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    else:
        m = stats.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
        mm = float(m @ m)
        u = 1.0 / math.sqrt(n)
        c = m / math.sqrt(mm)
        a = np.empty(n)
        a_n = c[-1] + np.polyval([-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, 0.0], u)
        if n > 5:
            a_n1 = c[-2] + np.polyval([-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0], u)
            phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * a_n ** 2 - 2 * a_n1 ** 2)
            a[2:-2] = m[2:-2] / math.sqrt(phi)
            a[-2], a[1] = a_n1, -a_n1
        else:
            phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * a_n ** 2)
            a[1:-1] = m[1:-1] / math.sqrt(phi)
        a[-1], a[0] = a_n, -a_n
    w = float((a @ x) ** 2 / ss)
    return min(w, 1.0)

def wasserstein_1d(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError('Wasserstein distance needs two non-empty samples.')
    return float(stats.wasserstein_distance(a, b))

def ttc_2d(ego: ObbShape, ego_velocity, other: ObbShape, other_velocity,
           horizon: float = 20.0) -> float:
    '''
    Earliest t >= 0 at which the two boxes, each moving at constant
    velocity without rotating, overlap; inf when that happens after
    `horizon` seconds or never. Each separating axis contributes the time
    interval during which the projections overlap, and the boxes overlap
    on the intersection of the four intervals.
    '''

    d0 = (other.x - ego.x, other.y - ego.y)
    w = (other_velocity[0] - ego_velocity[0], other_velocity[1] - ego_velocity[1])
    lo, hi = 0.0, math.inf
    for axis in ego.axes + other.axes:
        reach = ego.radius(axis) + other.radius(axis)
        p = d0[0] * axis[0] + d0[1] * axis[1]
        q = w[0] * axis[0] + w[1] * axis[1]
        if q == 0:
            if abs(p) > reach:
                return math.inf
            continue
        t1 = (-reach - p) / q
        t2 = (reach - p) / q
        lo = max(lo, min(t1, t2))
        hi = min(hi, max(t1, t2))
        if lo > hi:
            return math.inf
    if lo > horizon:
        return math.inf
    return lo

def act(ego: ObbShape, ego_velocity, other: ObbShape, other_velocity) -> float:
    '''Boundary distance between the boxes divided by its closing rate
    under the current velocities; inf when the distance does not shrink.'''
    gap = shapely.distance(ego.polygon(), other.polygon())
    if gap <= 0:
        return 0.0
    h = ACT_STEP
    later = shapely.distance(ego.moved(ego_velocity[0] * h, ego_velocity[1] * h).polygon(),
                             other.moved(other_velocity[0] * h, other_velocity[1] * h).polygon())
    rate = (later - gap) / h
    if rate >= -1e-12:
        return math.inf
    return float(gap / -rate)

class MetricReport(NamedTuple):
    s_sw: float
    s_wd: float
    a_sw: float
    cpk: float
    rp: float
    ttc_2d: float
    act: float
    orr: float
    uc: float
    br: float
    orr_agents: float

METRIC_COLUMNS = MetricReport._fields

@functools.lru_cache(maxsize=8)
def reference_speeds(path: Optional[str] = None, v_max: float = 15.0) -> np.ndarray:
    '''Reference speed sample for S-WD: a JSON array at `path`, or a fixed
    sample of a normal(6, 2) truncated to [0, v_max].'''
    if path:
        with open(path) as fin:
            data = json.load(fin)
        try:
            sample = np.asarray(data, dtype=float)
        except (TypeError, ValueError):
            sample = np.empty(0)
        if sample.ndim != 1 or sample.size == 0 or not np.all(np.isfinite(sample)):
            raise ValidationError(f"'{path}' must hold a non-empty array of speeds.")
        return sample
    mu, sigma = 6.0, 2.0
    dist = stats.truncnorm((0.0 - mu) / sigma, (v_max - mu) / sigma, loc=mu, scale=sigma)
    return dist.rvs(size=1000, random_state=np.random.default_rng(0))

def route_station(route, state: AgentState) -> float:
    station, _ = route.locate(state.position)
    return float(station[0])

def collides(world: WorldState) -> bool:
    box = ObbShape.from_vehicle(world.center)
    return any(obb_overlap(box, ObbShape.from_vehicle(v)) for v in world.others)

def center_offroad(world: WorldState) -> bool:
    c = world.center
    corners = box_corners(c.state.as_array()[None], c.length, c.width)
    return not bool(world.map.boxes_on_road(corners)[0])

def _normality(samples, name) -> float:
    try:
        return shapiro_wilk(samples)
    except DegenerateSample as err:
        logger.warning(f'{name} normality is undefined ({err}); reporting 1.0.')
        return 1.0

def episode_metrics(episode: Sequence[WorldState], world_map=None, cfg=None,
                    reference=None) -> MetricReport:
    '''
    Metrics of one episode given as consecutive world states. `reference`
    overrides the reference speed sample configured in `cfg`.
    '''

    states = list(episode)
    if len(states) < 3:
        raise EpisodeTooShort(f'Episode metrics need at least 3 states, got {len(states)}.')
    world_map = states[0].map if world_map is None else world_map
    dt = 0.1 if cfg is None else cfg.dt
    ttc_horizon = 20.0 if cfg is None else cfg.ttc_horizon
    comfort = COMFORT_ACCEL if cfg is None else cfg.comfort_accel
    block = 0.1 if cfg is None else cfg.block_speed
    if reference is None:
        reference = reference_speeds(None if cfg is None else cfg.reference_speeds,
                                     15.0 if cfg is None else cfg.v_max)

    center = np.array([w.center.state.as_array() for w in states])
    speeds = center[:, 4] * center[:, 2] + center[:, 5] * center[:, 3]
    accel = (speeds[2:] - speeds[:-2]) / (2 * dt)

    s_sw = _normality(speeds, 'Speed')
    a_sw = _normality(accel, 'Acceleration')
    s_wd = wasserstein_1d(speeds, reference)

    collisions = 0
    ttc = math.inf
    anticipated = math.inf
    n_others = max(len(w.others) for w in states)
    prev = [False] * n_others
    for w in states:
        box = ObbShape.from_vehicle(w.center)
        ego_v = (w.center.state.vx, w.center.state.vy)
        for j, other in enumerate(w.others):
            obox = ObbShape.from_vehicle(other)
            hit = obb_overlap(box, obox)
            if hit and not prev[j]:
                collisions += 1
            prev[j] = hit
            other_v = (other.state.vx, other.state.vy)
            ttc = min(ttc, ttc_2d(box, ego_v, obox, other_v, ttc_horizon))
            anticipated = min(anticipated, act(box, ego_v, obox, other_v))

    steps = np.diff(center[:, :2], axis=0)
    travelled = float(np.hypot(steps[:, 0], steps[:, 1]).sum())
    cpk = collisions / (max(travelled, CPK_DISTANCE_FLOOR) / 1000.0)

    route = world_map.route(0)
    stations, _ = route.locate(center[:, :2])
    rp = float(max(0.0, np.max(stations - stations[0])))

    c = states[0].center
    inside = world_map.boxes_on_road(box_corners(center, c.length, c.width))
    orr = 100.0 * float(np.mean(~inside))
    uc = 100.0 * float(np.mean(np.abs(accel) > comfort))
    br = 100.0 * float(np.mean(speeds < block))

    corners = [box_corners(v.state.as_array()[None], v.length, v.width)[0]
               for w in states for v in w.others]
    if corners:
        orr_agents = 100.0 * float(np.mean(~world_map.boxes_on_road(np.array(corners))))
    else:
        orr_agents = 0.0

    return MetricReport(s_sw, s_wd, a_sw, cpk, rp, ttc, anticipated, orr, uc, br, orr_agents)

def mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    '''Field-wise mean; TTC and ACT take the minimum.'''
    if not reports:
        raise ValueError('No metric reports to aggregate.')
    values = []
    for name in METRIC_COLUMNS:
        column = [getattr(r, name) for r in reports]
        if name in ('ttc_2d', 'act'):
            values.append(min(column))
        else:
            values.append(float(np.mean(column)))
    return MetricReport(*values)
