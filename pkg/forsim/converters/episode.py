#!/usr/bin/env python3

from typing import NamedTuple, Tuple

import numpy as np

from forsim.converters.scenario import ScenarioReader, map_record, vehicle_record
from forsim.reader import LineReader
from forsim.rollout import Episode
from forsim.world import ValidationError, WorldState
from forsim.writer import Writer, dump_line, plain

class EpisodeReader(LineReader):
    '''
    Episode logs. The first record (`"kind": "map"`) carries the episode
    name, `dt` and the map; every following record (`"kind": "state"`)
    is one world state with its `step`, `center` agent, `others` and the
    candidate index `selected` that led to it.
    '''

    identifier = 'episode'
    long_name = 'forsim episode JSON lines'

    def reset(self):
        self.agents = ScenarioReader()
        self.agents.filename = self.filename
        self.name = ''
        self.dt = None
        self.map = None
        self.states = []
        self.selected = []

    def process_record(self, record):
        self.agents.location = self.location
        kind = self.require(record, 'kind', 'record')
        if kind == 'map':
            if self.map is not None:
                self.error('Second map record.')
            self.name = str(record.get('name', ''))
            self.dt = float(self.number(self.require(record, 'dt', 'map record'), 'dt'))
            try:
                self.map = self.agents.vector_map(self.require(record, 'map', 'map record'))
            except ValidationError as err:
                self.error(str(err))
        elif kind == 'state':
            if self.map is None:
                self.error('State record before the map record.')
            step = self.number(self.require(record, 'step', 'state record'), 'step', integer=True)
            center = self.agents.vehicle(self.require(record, 'center', 'state record'), 'center')
            others = self.require(record, 'others', 'state record')
            if not isinstance(others, list):
                self.error('others should be a list.')
            others = [self.agents.vehicle(o, f'others[{n}]') for n, o in enumerate(others)]
            self.states.append(WorldState(self.map, center, others, step))
            if 'selected' in record:
                self.selected.append(tuple(int(i) for i in record['selected']))
        else:
            self.error(f'Unknown record kind {kind!r}.')

    def finish(self):
        if self.map is None:
            self.error('No map record.')
        return Episode(self.name, tuple(self.states), tuple(self.selected), self.dt)

class EpisodeWriter(Writer):
    identifier = 'episode'
    extension = '.jsonl'

    def write(self, fout, episode: Episode):
        world_map = episode.states[0].map
        fout.write(dump_line({'kind': 'map', 'name': episode.name, 'dt': episode.dt,
                              'map': map_record(world_map)}) + '\n')
        for k, world in enumerate(episode.states):
            record = {
                'kind': 'state',
                'step': world.step,
                'center': vehicle_record(world.center),
                'others': [vehicle_record(v) for v in world.others],
            }
            if 0 < k <= len(episode.selected):
                record['selected'] = list(episode.selected[k - 1])
            fout.write(dump_line(record) + '\n')

class BranchRecord(NamedTuple):
    scenario: str
    seed_index: Tuple[int, int]
    selected: tuple
    lines: tuple
    failed: bool
    error: str
    branch_return: float
    states: np.ndarray

class BranchReader(LineReader):
    '''
    Rollout branches, one record per branch: the `scenario` name, the
    `seed_index`, the `selected` candidate index and reference `lines` of
    every virtual step, the `failed` flag and `error` message, the
    discounted `return` and the `states` tensor of shape
    (steps, agents, 6), center agent first.
    '''

    identifier = 'branches'
    long_name = 'forsim rollout branch JSON lines'

    def reset(self):
        self.branches = []

    def process_record(self, record):
        seed = self.require(record, 'seed_index', 'branch')
        states = self.array(self.require(record, 'states', 'branch'), 'states', width=6, ndim=3)
        ret = self.require(record, 'return', 'branch')
        self.branches.append(BranchRecord(
            str(record.get('scenario', '')),
            (int(seed[0]), int(seed[1])),
            tuple(tuple(int(i) for i in s) for s in self.require(record, 'selected', 'branch')),
            tuple(int(l) for l in self.require(record, 'lines', 'branch')),
            bool(self.require(record, 'failed', 'branch')),
            str(record.get('error', '')),
            float(ret),
            states,
        ))

    def finish(self):
        return self.branches

class BranchWriter(Writer):
    '''Writes (scenario name, branch, return) triples.'''

    identifier = 'branches'
    extension = '.jsonl'

    def write(self, fout, branches):
        for name, branch, ret in branches:
            fout.write(dump_line({
                'scenario': name,
                'seed_index': list(branch.seed_index),
                'selected': [list(s) for s in branch.selected],
                'lines': list(branch.lines),
                'failed': branch.failed,
                'error': branch.error,
                'return': ret,
                'states': plain(np.array([w.as_array() for w in branch.states])),
            }) + '\n')
