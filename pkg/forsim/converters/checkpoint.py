#!/usr/bin/env python3

from dataclasses import dataclass
import json

import numpy as np

from forsim.agents import PredictorParams, feature_count
from forsim.policy import FEATURE_NAMES, ScoringParams
from forsim.reader import JSONReader
from forsim.writer import Writer, plain

@dataclass(frozen=True, eq=False)
class Checkpoint:
    scoring: ScoringParams
    predictor: PredictorParams
    iteration: int = 0

    def predictor_for(self, cfg) -> PredictorParams:
        '''The stored predictor with the acceleration and speed limits of `cfg`.'''
        return PredictorParams(self.predictor.w, self.predictor.history,
                               a_max=cfg.a_max, v_max=cfg.v_max)

class CheckpointReader(JSONReader):
    '''
    Training checkpoints: `policy_theta` (scoring weights, one per
    candidate feature), `predictor_w` (a 2T x F weight matrix, rows
    alternating acceleration and yaw rate per step) and the `iteration`
    the parameters were saved at.
    '''

    identifier = 'checkpoint'
    long_name = 'forsim training checkpoint'

    def read_file(self, data):
        theta = self.array(self.require(data, 'policy_theta', 'checkpoint'), 'policy_theta', ndim=1)
        if len(theta) != len(FEATURE_NAMES):
            self.error(f'policy_theta should hold {len(FEATURE_NAMES)} weights, found {len(theta)}.')
        w = self.array(self.require(data, 'predictor_w', 'checkpoint'), 'predictor_w', ndim=2)
        if len(w) < 2 or len(w) % 2:
            self.error('predictor_w should have an even, nonzero number of rows.')
        history = (w.shape[1] - 2) // 2
        if history < 1 or feature_count(history) != w.shape[1]:
            self.error(f'predictor_w has {w.shape[1]} columns, which matches no history length.')
        iteration = self.number(self.require(data, 'iteration', 'checkpoint'), 'iteration', integer=True)
        if iteration < 0:
            self.error('iteration must be nonnegative.')
        return Checkpoint(ScoringParams(theta), PredictorParams(w, history), iteration)

class CheckpointWriter(Writer):
    identifier = 'checkpoint'
    extension = '.json'

    def write(self, fout, checkpoint: Checkpoint):
        json.dump({
            'policy_theta': plain(np.asarray(checkpoint.scoring.theta)),
            'predictor_w': plain(checkpoint.predictor.w),
            'iteration': int(checkpoint.iteration),
        }, fout, indent=1)
        fout.write('\n')
