#!/usr/bin/env python3

from forsim.converters.checkpoint import Checkpoint, CheckpointWriter
from forsim.converters.table import TableWriter
from forsim.optimization import LOG_COLUMNS, train
from forsim.policy import LatticePolicy, ScoringParams
from forsim.process import ParadigmProcess

class Train(ParadigmProcess):
    '''
    Fine-tune the candidate scoring weights with group-relative policy
    optimisation over forward-simulated branches, fitting the agent
    predictor to the realised futures along the way. Resuming from a
    checkpoint continues its iteration count.
    '''

    name = 'train'

    def run(self):
        if not self.center_paradigm.reselects:
            raise ValueError(f'{self.center_paradigm.value} is a tracking baseline and cannot be trained.')
        scenarios = self.load_scenarios()
        ckpt = self.load_checkpoint()
        scoring = ckpt.scoring if ckpt else ScoringParams(self.cfg.policy_theta)
        start = ckpt.iteration if ckpt else 0
        predictor = self.warm_predictor(scenarios, LatticePolicy.from_config(self.cfg, scoring))
        result = train(scenarios, self.cfg, scoring, predictor, start_iteration=start,
                       seed=self.seed, center_paradigm=self.center_paradigm,
                       others_paradigm=self.others_paradigm)
        self.save(CheckpointWriter(), 'checkpoint.json',
                  Checkpoint(result.scoring, result.predictor, result.iteration))
        self.save(TableWriter(LOG_COLUMNS), 'train_log.csv', result.log)
