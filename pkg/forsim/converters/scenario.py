#!/usr/bin/env python3

import os

from forsim.reader import JSONReader
from forsim.world import (AgentState, Scenario, ValidationError, VectorMap, Vehicle)
from forsim.writer import Writer, plain

SCENARIO_VERSION = 1

def vehicle_record(vehicle: Vehicle) -> dict:
    record = {
        'state': plain(vehicle.state.as_array()),
        'length': vehicle.length,
        'width': vehicle.width,
        'wheelbase': vehicle.wheelbase,
    }
    if vehicle.control != (0.0, 0.0):
        record['control'] = list(vehicle.control)
    if vehicle.history is not None:
        record['history'] = plain(vehicle.history)
    return record

def map_record(world_map: VectorMap) -> dict:
    return {
        'reference_lines': [plain(l) for l in world_map.reference_lines],
        'drivable_area': [plain(p) for p in world_map.drivable_area],
        'routes': [plain(r) for r in world_map.routes],
    }

class ScenarioReader(JSONReader):
    '''
    Versioned scenario files: `version`, `dt`, `horizon`, a `map` with
    `reference_lines`, `drivable_area` and `routes` (lists of [x, y]
    points), a `center_agent` and a list of `other_agents`.

    Each agent has a `state` [x, y, cos, sin, vx, vy], a `length`, `width`
    and `wheelbase` in metres, and optionally its last `control`
    [accel, steer] and a `history` of past states, oldest first.
    '''

    identifier = 'scenario'
    long_name = 'forsim scenario JSON'

    def vehicle(self, obj, where):
        state = self.array(self.require(obj, 'state', where), f'{where} state', width=6, ndim=1)
        kwargs = {}
        for key in ('length', 'width', 'wheelbase'):
            kwargs[key] = float(self.number(self.require(obj, key, where), f'{where} {key}'))
        if 'control' in obj:
            control = self.array(obj['control'], f'{where} control', ndim=1)
            if len(control) != 2:
                self.error(f'{where} control should be [accel, steer].')
            kwargs['control'] = tuple(control)
        if 'history' in obj:
            kwargs['history'] = self.array(obj['history'], f'{where} history', width=6, ndim=2)
        try:
            return Vehicle(AgentState.from_array(state), **kwargs)
        except ValidationError as err:
            self.error(f'{where}: {err}')

    def vector_map(self, obj):
        groups = {}
        for key in ('reference_lines', 'drivable_area', 'routes'):
            value = self.require(obj, key, 'map')
            if not isinstance(value, list):
                self.error(f'map.{key} should be a list of polylines.')
            groups[key] = tuple(self.array(pl, f'map.{key}[{n}]', width=2, ndim=2)
                                for n, pl in enumerate(value))
        return VectorMap(groups['reference_lines'], groups['drivable_area'], groups['routes'])

    def read_file(self, data):
        version = self.require(data, 'version', 'scenario')
        if version != SCENARIO_VERSION:
            self.error(f'Unsupported scenario version {version!r}.')
        dt = float(self.number(self.require(data, 'dt', 'scenario'), 'dt'))
        horizon = self.number(self.require(data, 'horizon', 'scenario'), 'horizon', integer=True)
        world_map = self.vector_map(self.require(data, 'map', 'scenario'))
        center = self.vehicle(self.require(data, 'center_agent', 'scenario'), 'center_agent')
        others = self.require(data, 'other_agents', 'scenario')
        if not isinstance(others, list):
            self.error('other_agents should be a list.')
        others = tuple(self.vehicle(o, f'other_agents[{n}]') for n, o in enumerate(others))
        name = os.path.splitext(os.path.basename(self.filename or ''))[0]
        return Scenario(world_map, center, others, horizon, dt, name)

class ScenarioWriter(Writer):
    identifier = 'scenario'
    extension = '.json'

    def write(self, fout, scenario: Scenario):
        import json
        data = {
            'version': SCENARIO_VERSION,
            'dt': scenario.dt,
            'horizon': scenario.horizon,
            'map': map_record(scenario.map),
            'center_agent': vehicle_record(scenario.center),
            'other_agents': [vehicle_record(v) for v in scenario.others],
        }
        json.dump(data, fout, indent=2)
        fout.write('\n')
