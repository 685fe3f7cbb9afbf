#!/usr/bin/env python3

from dataclasses import dataclass, fields
import hashlib
import json
import logging
import os

from forsim.config import SimConfig
from forsim.parameters import ChoiceParameter, Parameter, PathListParameter, PathParameter, process_parameters
from forsim.rollout import OthersParadigm
from forsim.selection import Paradigm

ALL_PROCESSES = {}

CONFIG_KEYS = frozenset(f.name for f in fields(SimConfig))

@dataclass(frozen=True)
class RunManifest:
    '''
    Everything that determines the output of a command: the action, its
    input files, paradigms, seed and configuration. The output directory
    is excluded so that reruns into another directory carry the same
    digest.
    '''

    action: str
    inputs: tuple
    center_paradigm: str
    others_paradigm: str
    seed: int
    config: str

    def digest(self) -> str:
        h = hashlib.sha256()
        record = {
            'action': self.action,
            'inputs': [os.path.basename(p) for p in self.inputs],
            'center_paradigm': self.center_paradigm,
            'others_paradigm': self.others_paradigm,
            'seed': self.seed,
            'config': self.config,
        }
        h.update(json.dumps(record, sort_keys=True).encode('UTF-8'))
        for pth in self.inputs:
            with open(pth, 'rb') as fin:
                h.update(fin.read())
        return h.hexdigest()

    def header(self) -> str:
        return f'forsim {self.action} manifest sha256:{self.digest()}'

class Process:
    name = None
    parameters = {}
    seed = Parameter(type=int, default=0, help='seed for every random draw of the run')
    out = Parameter(type=str, default='out', help='directory the output files are written to')

    def __init__(self, conf, **kwargs):
        self.conf = conf
        self.other_args = kwargs
        self.parameter_values = process_parameters(self.parameters, conf, self.name, kwargs)
        self.logger = logging.getLogger('forsim.' + (self.name or 'unnamed_process'))
        self.check_keys()
        overrides = {k: v for k, v in kwargs.items() if k in CONFIG_KEYS}
        self.cfg = SimConfig.from_config(conf, self.name, **overrides)

    def __init_subclass__(cls, *args, **kwargs):
        global ALL_PROCESSES
        super().__init_subclass__(*args, **kwargs)
        if cls.name:
            if cls.name in ALL_PROCESSES:
                raise ValueError(f'Identifier {cls.name} is already used by another Process class.')
            ALL_PROCESSES[cls.name] = cls

    def check_keys(self):
        known = set(CONFIG_KEYS) | set(ALL_PROCESSES)
        for proc in ALL_PROCESSES.values():
            known.update(proc.parameters)
        for key in self.conf:
            if key not in known:
                self.logger.warning(f"Ignoring unknown configuration key '{key}'.")
        table = self.conf.get(self.name)
        if isinstance(table, dict):
            for key in table:
                if key not in CONFIG_KEYS and key not in self.parameters:
                    self.logger.warning(f"Ignoring unknown key '{key}' in [{self.name}].")

    def inputs(self) -> tuple:
        return ()

    def manifest(self) -> RunManifest:
        def tag(name):
            value = self.parameter_values.get(name)
            return getattr(value, 'value', '') if value is not None else ''
        overrides = {k: v for k, v in self.other_args.items() if k in CONFIG_KEYS and v is not None}
        config = json.dumps({'file': self.conf, 'overrides': overrides},
                            sort_keys=True, default=str)
        return RunManifest(self.name, tuple(self.inputs()), tag('center_paradigm'),
                           tag('others_paradigm'), self.seed, config)

    def output_path(self, fname: str) -> str:
        return os.path.join(self.out, fname)

    def save(self, writer, fname: str, data):
        writer.header = self.manifest().header()
        pth = self.output_path(fname)
        writer.save(pth, data)
        return pth

    def run(self):
        pass

    @classmethod
    def help_text_epilog(cls):
        return None

    @classmethod
    def help_text(cls):
        import textwrap
        ret = str(cls.name)
        if cls.__doc__:
            ret += ': ' + ' '.join(textwrap.dedent(cls.__doc__).split())
        ret = textwrap.wrap(ret)
        ret += ['', 'Parameters:']
        for name, param in cls.parameters.items():
            ret += textwrap.wrap(f'{name}: {param.help_text()}',
                                 initial_indent='  ',
                                 subsequent_indent='    ')
        epilog = cls.help_text_epilog()
        if epilog:
            ret += ['', epilog]
        return '\n'.join(ret)

class ScenarioProcess(Process):
    '''A process driven by one or more scenario files.'''

    scenario = PathListParameter(help='scenario JSON files')
    checkpoint = PathParameter(required=False, help='checkpoint with scoring and predictor weights')

    def inputs(self) -> tuple:
        return tuple(self.scenario) + ((self.checkpoint,) if self.checkpoint else ())

    def load_scenarios(self):
        from forsim.world import load_scenario
        return [load_scenario(p) for p in self.scenario]

    def load_checkpoint(self):
        if not self.checkpoint:
            return None
        from forsim.converters.checkpoint import CheckpointReader
        return CheckpointReader().read(self.checkpoint)

    def warm_predictor(self, scenarios, policy):
        '''Predictor weights from the checkpoint, or pre-trained on
        autopilot episodes of `scenarios` when there is none.'''
        from forsim import agents
        from forsim.rollout import simulate_episode
        ckpt = self.load_checkpoint()
        if ckpt is not None:
            return ckpt.predictor_for(self.cfg)
        predictor = agents.PredictorParams.zeros(self.cfg)
        if self.cfg.warmup_steps == 0:
            return predictor
        episodes = [simulate_episode(s, policy, self.cfg).states for s in scenarios]
        return agents.pretrain_predictor(episodes, predictor, self.cfg)

class ParadigmProcess(ScenarioProcess):
    center_paradigm = ChoiceParameter(choices=Paradigm, default=Paradigm.TRAJECTORY_ALIGNED,
                                      help='how the center agent reselects its candidate in a branch')
    others_paradigm = ChoiceParameter(choices=OthersParadigm,
                                      default=OthersParadigm.STEPWISE_PREDICTION,
                                      help='how the other agents move in a branch')
