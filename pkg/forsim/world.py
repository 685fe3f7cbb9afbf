#!/usr/bin/env python3

'''
Domain types shared by every stage of the simulator: agent states,
trajectories, candidate grids, the vector map and scenarios. All of them
are immutable once built, so they can be handed to concurrent rollout
branches without copying.
'''

from dataclasses import dataclass, replace
from functools import cached_property
import math
from typing import Optional, Tuple

import numpy as np
import shapely

class ParseError(ValueError):
    pass

class ValidationError(ValueError):
    pass

def _frozen(array, dtype=float):
    arr = np.array(array, dtype=dtype)
    arr.flags.writeable = False
    return arr

@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    cos_h: float
    sin_h: float
    vx: float
    vy: float

    def __post_init__(self):
        values = (self.x, self.y, self.cos_h, self.sin_h, self.vx, self.vy)
        if not all(map(math.isfinite, values)):
            raise ValidationError(f'AgentState must be finite, got {values}.')
        norm = math.hypot(self.cos_h, self.sin_h)
        if norm < 1e-12:
            raise ValidationError('AgentState heading (cos, sin) must not be zero.')
        if norm != 1.0:
            object.__setattr__(self, 'cos_h', self.cos_h / norm)
            object.__setattr__(self, 'sin_h', self.sin_h / norm)

    @classmethod
    def from_angle(cls, x: float, y: float, heading: float, speed: float = 0.0):
        c = math.cos(heading)
        s = math.sin(heading)
        return cls(x, y, c, s, speed * c, speed * s)

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def speed(self) -> float:
        '''Signed speed along the heading.'''
        return self.vx * self.cos_h + self.vy * self.sin_h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.cos_h, self.sin_h, self.vx, self.vy])

def heading_angle(s: AgentState) -> float:
    '''Heading in (-pi, pi].'''
    angle = math.atan2(s.sin_h, s.cos_h)
    if angle == -math.pi:
        return math.pi
    return angle

@dataclass(frozen=True, eq=False)
class Trajectory:
    '''
    A sequence of T states sampled every `dt` seconds. Points are stored
    as a (T, 6) array in the order [x, y, cos, sin, vx, vy].
    '''

    points: np.ndarray
    dt: float

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 6 or len(pts) == 0:
            raise ValidationError(f'Trajectory points must have shape (T, 6) with T > 0, got {pts.shape}.')
        if not self.dt > 0:
            raise ValidationError(f'Trajectory dt must be positive, got {self.dt}.')
        if not np.all(np.isfinite(pts)):
            raise ValidationError('Trajectory points must be finite.')
        object.__setattr__(self, 'points', pts)

    def __len__(self):
        return len(self.points)

    def state(self, k: int) -> AgentState:
        return AgentState.from_array(self.points[k])

    @property
    def positions(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def speeds(self) -> np.ndarray:
        return self.points[:, 4] * self.points[:, 2] + self.points[:, 5] * self.points[:, 3]

    def is_plausible(self, v_max: float, slack: float = 0.5) -> bool:
        steps = np.diff(self.positions, axis=0)
        return bool(np.all(np.hypot(steps[:, 0], steps[:, 1]) <= v_max * self.dt + slack))

@dataclass(frozen=True, eq=False)
class CandidateSet:
    '''
    Dense grid of N_ref x N_lon candidate trajectories with their
    pre-softmax scores. `features` holds the scoring features used to
    produce the scores, `lines` the map index of the reference line each
    lateral row follows.
    '''

    trajectories: np.ndarray
    scores: np.ndarray
    dt: float
    features: Optional[np.ndarray] = None
    lines: Optional[np.ndarray] = None
    degenerate: bool = False

    def __post_init__(self):
        trajs = _frozen(self.trajectories)
        scores = _frozen(self.scores)
        if trajs.ndim != 4 or trajs.shape[-1] != 6:
            raise ValidationError(f'Candidate trajectories must have shape (N_ref, N_lon, T, 6), got {trajs.shape}.')
        if scores.shape != trajs.shape[:2]:
            raise ValidationError(f'Candidate scores must have shape {trajs.shape[:2]}, got {scores.shape}.')
        if not np.all(np.isfinite(scores)):
            raise ValidationError('Candidate scores must be finite.')
        object.__setattr__(self, 'trajectories', trajs)
        object.__setattr__(self, 'scores', scores)
        if self.features is not None:
            feats = _frozen(self.features)
            if feats.shape[:2] != scores.shape:
                raise ValidationError('Candidate features must share the score grid.')
            object.__setattr__(self, 'features', feats)
        lines = self.lines
        if lines is None:
            lines = np.arange(scores.shape[0])
        object.__setattr__(self, 'lines', _frozen(lines, dtype=int))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.scores.shape

    @property
    def group_size(self) -> int:
        return self.scores.size

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[2]

    def trajectory(self, i: int, j: int) -> Trajectory:
        return Trajectory(self.trajectories[i, j], self.dt)

    def flat_index(self, index) -> int:
        i, j = index
        return i * self.shape[1] + j

    def unflatten(self, flat: int) -> Tuple[int, int]:
        i, j = divmod(int(flat), self.shape[1])
        return (i, j)

    def with_scores(self, scores, features=None) -> 'CandidateSet':
        return replace(self, scores=scores,
                       features=self.features if features is None else features)

class Polyline:
    '''
    A piecewise-linear curve parameterised by arc length. Stations before
    the start or past the end are extended along the first or last segment.
    '''

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValidationError(f'A polyline needs at least 2 points, got shape {pts.shape}.')
        seg = np.diff(pts, axis=0)
        keep = np.concatenate([[True], np.hypot(seg[:, 0], seg[:, 1]) > 0])
        pts = pts[keep]
        if len(pts) < 2:
            raise ValidationError('A polyline needs at least 2 distinct points.')
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        self.points = pts
        self.stations = np.concatenate([[0.0], np.cumsum(lengths)])
        self.length = float(self.stations[-1])
        self.tangents = seg / lengths[:, None]
        self.geometry = shapely.LineString(pts)

    def _segment(self, stations):
        idx = np.searchsorted(self.stations, stations, side='right') - 1
        return np.clip(idx, 0, len(self.tangents) - 1)

    def point_at(self, stations):
        '''Return positions and unit tangents at the given stations.'''
        s = np.asarray(stations, dtype=float)
        idx = self._segment(s)
        tangent = self.tangents[idx]
        xy = self.points[idx] + (s - self.stations[idx])[..., None] * tangent
        return xy, tangent

    def locate(self, xy):
        '''Return (station, signed lateral offset) of each point, left of
        the direction of travel being positive.'''
        p = np.atleast_2d(np.asarray(xy, dtype=float))
        rel = p[:, None, :] - self.points[None, :-1, :]
        seg_len = np.diff(self.stations)
        along = np.einsum('mnk,nk->mn', rel, self.tangents)
        clipped = np.clip(along, 0.0, seg_len)
        foot = self.points[None, :-1, :] + clipped[..., None] * self.tangents[None]
        dist = np.hypot(p[:, None, 0] - foot[..., 0], p[:, None, 1] - foot[..., 1])
        idx = np.argmin(dist, axis=1)
        rows = np.arange(len(p))
        a = along[rows, idx]
        last = len(seg_len) - 1
        a = np.where((idx == 0) & (a < 0), a,
                     np.where((idx == last) & (a > seg_len[last]), a, clipped[rows, idx]))
        station = self.stations[idx] + a
        base, tangent = self.point_at(station)
        d = p - base
        offset = tangent[:, 0] * d[:, 1] - tangent[:, 1] * d[:, 0]
        return station, offset

    def distance(self, xy) -> np.ndarray:
        p = np.atleast_2d(np.asarray(xy, dtype=float))
        return shapely.distance(self.geometry, shapely.points(p))

@dataclass(frozen=True, eq=False)
class VectorMap:
    reference_lines: tuple
    drivable_area: tuple
    routes: tuple

    def __post_init__(self):
        lines = tuple(_frozen(l) for l in self.reference_lines)
        routes = tuple(_frozen(r) for r in self.routes)
        for kind, group in (('reference line', lines), ('route', routes)):
            for n, pl in enumerate(group):
                if pl.ndim != 2 or pl.shape[1:] != (2,) or len(pl) < 2:
                    raise ValidationError(f'Polyline invariant violated: {kind} {n} needs at least 2 points.')
        polygons = []
        for n, poly in enumerate(self.drivable_area):
            pts = np.array(poly, dtype=float)
            if pts.ndim != 2 or pts.shape[1:] != (2,):
                raise ValidationError(f'Polygon invariant violated: drivable polygon {n} is not a list of points.')
            if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
                pts = pts[:-1]
            if len(pts) < 3:
                raise ValidationError(f'Polygon invariant violated: drivable polygon {n} needs at least 3 vertices.')
            ring = shapely.LinearRing(pts)
            if not ring.is_simple or not shapely.Polygon(ring).is_valid:
                raise ValidationError(f'Polygon invariant violated: drivable polygon {n} is self-intersecting.')
            polygons.append(_frozen(pts))
        if not polygons:
            raise ValidationError('Polygon invariant violated: the drivable area is empty.')
        object.__setattr__(self, 'reference_lines', lines)
        object.__setattr__(self, 'routes', routes)
        object.__setattr__(self, 'drivable_area', tuple(polygons))
        tolerant = self.drivable.buffer(0.1)
        for n, route in enumerate(routes):
            inside = shapely.intersects_xy(tolerant, route[:, 0], route[:, 1])
            if not np.all(inside):
                raise ValidationError(f'Route invariant violated: route {n} leaves the drivable area.')

    @cached_property
    def lines(self) -> Tuple[Polyline, ...]:
        return tuple(Polyline(l) for l in self.reference_lines)

    @cached_property
    def route_lines(self) -> Tuple[Polyline, ...]:
        return tuple(Polyline(r) for r in self.routes)

    @cached_property
    def drivable(self):
        geom = shapely.union_all([shapely.Polygon(p) for p in self.drivable_area])
        shapely.prepare(geom)
        return geom

    def route(self, index: int = 0) -> Optional[Polyline]:
        if index < len(self.route_lines):
            return self.route_lines[index]
        return None

    def on_road(self, xy) -> np.ndarray:
        p = np.atleast_2d(np.asarray(xy, dtype=float))
        return shapely.intersects_xy(self.drivable, p[:, 0], p[:, 1])

    def boxes_on_road(self, corners) -> np.ndarray:
        '''Whether each (4, 2) box of corners lies fully inside the drivable area.'''
        boxes = shapely.polygons(np.asarray(corners, dtype=float))
        return shapely.covers(self.drivable, boxes)

@dataclass(frozen=True, eq=False)
class Vehicle:
    '''An agent state plus the geometry of its vehicle. `control` is the
    last applied (accel, steer), `history` optional past states (oldest
    first, current state excluded).'''

    state: AgentState
    length: float = 4.5
    width: float = 2.0
    wheelbase: float = 2.8
    control: tuple = (0.0, 0.0)
    history: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ('length', 'width', 'wheelbase'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f'Vehicle {name} must be positive, got {value}.')
        control = tuple(float(c) for c in self.control)
        if len(control) != 2 or not all(map(math.isfinite, control)):
            raise ValidationError(f'Vehicle control must be a finite (accel, steer) pair, got {self.control}.')
        object.__setattr__(self, 'control', control)
        if self.history is not None:
            hist = _frozen(self.history)
            if hist.ndim != 2 or hist.shape[1] != 6 or not np.all(np.isfinite(hist)):
                raise ValidationError('Vehicle history must be a finite (H, 6) array.')
            object.__setattr__(self, 'history', hist)

    def moved(self, state: AgentState, control=None) -> 'Vehicle':
        return replace(self, state=state,
                       control=self.control if control is None else control,
                       history=None)

    def obb(self):
        from forsim.metrics import ObbShape
        return ObbShape.from_vehicle(self)

@dataclass(frozen=True, eq=False)
class Scenario:
    map: VectorMap
    center: Vehicle
    others: tuple = ()
    horizon: int = 40
    dt: float = 0.1
    name: str = ''

    def __post_init__(self):
        from forsim.metrics import obb_overlap
        object.__setattr__(self, 'others', tuple(self.others))
        if self.horizon < 2:
            raise ValidationError(f'Scenario invariant violated: horizon must be at least 2, got {self.horizon}.')
        if not 0 < self.dt <= 1:
            raise ValidationError(f'Scenario invariant violated: dt must be in (0, 1], got {self.dt}.')
        if not self.map.routes:
            raise ValidationError('Scenario invariant violated: the center agent needs a route.')
        vehicles = (self.center,) + self.others
        boxes = [v.obb() for v in vehicles]
        for a in range(len(boxes)):
            for b in range(a + 1, len(boxes)):
                if obb_overlap(boxes[a], boxes[b]):
                    raise ValidationError(f'Scenario invariant violated: agents {a} and {b} overlap at t=0.')

    @property
    def vehicles(self) -> tuple:
        return (self.center,) + self.others

def initial_history(vehicle: Vehicle, length: int) -> np.ndarray:
    '''Window of the last `length` states ending at the current state,
    padded by repeating the oldest known state.'''
    current = vehicle.state.as_array()[None]
    if vehicle.history is None or len(vehicle.history) == 0:
        known = current
    else:
        known = np.vstack([vehicle.history, current])
    known = known[-length:]
    if len(known) < length:
        known = np.vstack([np.repeat(known[:1], length - len(known), axis=0), known])
    return known

@dataclass(frozen=True, eq=False)
class WorldState:
    '''Full world at one (real or virtual) step. `histories` holds one
    (H, 6) window per other agent, the last row being its current state.'''

    map: VectorMap
    center: Vehicle
    others: tuple = ()
    step: int = 0
    histories: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'others', tuple(self.others))
        object.__setattr__(self, 'histories', tuple(self.histories))
        if self.histories and len(self.histories) != len(self.others):
            raise ValidationError('WorldState needs one history window per other agent.')

    @classmethod
    def from_scenario(cls, scenario: Scenario, history: int = 5):
        return cls(scenario.map, scenario.center, scenario.others, 0,
                   tuple(initial_history(v, history) for v in scenario.others))

    @property
    def vehicles(self) -> tuple:
        return (self.center,) + self.others

    def advance(self, center: Vehicle, others, history: int) -> 'WorldState':
        others = tuple(others)
        windows = []
        for n, vehicle in enumerate(others):
            row = vehicle.state.as_array()[None]
            if self.histories:
                windows.append(np.vstack([self.histories[n], row])[-history:])
            else:
                windows.append(initial_history(vehicle, history))
        return WorldState(self.map, center, others, self.step + 1, tuple(windows))

    def as_array(self) -> np.ndarray:
        return np.array([v.state.as_array() for v in self.vehicles])

def load_scenario(path) -> Scenario:
    '''
    Read a scenario JSON file. Raises ParseError for malformed files and
    ValidationError when the content breaks an invariant.
    '''

    from forsim.converters.scenario import ScenarioReader
    return ScenarioReader().read(path)

def save_scenario(scenario: Scenario, path) -> None:
    from forsim.converters.scenario import ScenarioWriter
    with open(path, 'w', encoding='UTF-8') as fout:
        ScenarioWriter().write(fout, scenario)
