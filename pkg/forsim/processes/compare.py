#!/usr/bin/env python3

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from forsim.converters.table import TableWriter
from forsim.metrics import METRIC_COLUMNS, EpisodeTooShort, episode_metrics, mean_report
from forsim.optimization import branch_return
from forsim.policy import LatticePolicy
from forsim.process import ScenarioProcess
from forsim.rollout import (OthersParadigm, RealTimeLoop, branch_dispersion, forward_simulate,
                            modality_drift, worker_count)
from forsim.selection import Paradigm

COMPARE_COLUMNS = ('center_paradigm', 'others_paradigm', 'dispersion', 'drift', 'failed',
                   'mean_return') + METRIC_COLUMNS

def paradigm_matrix():
    '''Every reselecting center paradigm against every other-agent
    paradigm, then the two tracking baselines with stepwise prediction.'''
    cells = [(c, o) for c in (Paradigm.MAX_LIKELIHOOD, Paradigm.MODE_CONSISTENT,
                              Paradigm.TRAJECTORY_ALIGNED)
             for o in OthersParadigm]
    cells += [(Paradigm.PERFECT_TRACKING, OthersParadigm.STEPWISE_PREDICTION),
              (Paradigm.TRAJECTORY_TRACKING, OthersParadigm.STEPWISE_PREDICTION)]
    return cells

class Compare(ScenarioProcess):
    '''Branch every scenario from its initial state under each cell of the
    paradigm matrix and write one row of averaged metrics per cell.'''

    name = 'compare'

    def run_cell(self, cell, scenarios, policy, predictor, threads):
        center, others = cell
        dispersions = []
        drifts = []
        failed = []
        returns = []
        reports = []
        for s_idx, scenario in enumerate(scenarios):
            loop = RealTimeLoop(scenario, self.cfg)
            cands = loop.candidates(policy)
            branches = forward_simulate(loop.world, cands, center, others, predictor, policy,
                                        loop.cfg, seed=self.seed + s_idx, threads=threads)
            if len(branches) >= 2:
                dispersions.append(branch_dispersion(branches))
            for branch in branches:
                drifts.append(modality_drift(branch))
                failed.append(branch.failed)
                returns.append(branch_return(branch, loop.cfg.reward, loop.cfg.gamma, loop.cfg.dt))
                try:
                    reports.append(episode_metrics(branch.states, scenario.map, loop.cfg))
                except EpisodeTooShort as err:
                    self.logger.warning(f'No metrics for branch {branch.seed_index}: {err}')
        if not reports:
            raise RuntimeError(f'No branch of cell {center.value}/{others.value} produced metrics.')
        self.logger.info(f'Finished cell {center.value} / {others.value}.')
        return [center.value, others.value,
                float(np.mean(dispersions)) if dispersions else 0.0,
                float(np.mean(drifts)), 100.0 * float(np.mean(failed)),
                float(np.mean(returns))] + list(mean_report(reports))

    def run(self):
        scenarios = self.load_scenarios()
        ckpt = self.load_checkpoint()
        policy = LatticePolicy.from_config(self.cfg, ckpt.scoring if ckpt else None)
        predictor = self.warm_predictor(scenarios, policy)
        cells = paradigm_matrix()
        workers = worker_count()
        if workers <= 1:
            rows = [self.run_cell(c, scenarios, policy, predictor, 1) for c in cells]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(lambda c: self.run_cell(c, scenarios, policy, predictor, 1),
                                     cells))
        self.save(TableWriter(COMPARE_COLUMNS), 'compare.csv', rows)
