#!/usr/bin/env python3

from forsim.converters.episode import BranchWriter
from forsim.converters.table import TableWriter
from forsim.metrics import METRIC_COLUMNS, EpisodeTooShort, episode_metrics
from forsim.optimization import branch_return
from forsim.parameters import Parameter
from forsim.policy import LatticePolicy
from forsim.process import ParadigmProcess
from forsim.rollout import RealTimeLoop, branch_dispersion, forward_simulate, modality_drift
from forsim.selection import select_max_likelihood

BRANCH_COLUMNS = ('scenario', 'seed_ref', 'seed_lon', 'failed', 'return', 'drift') + METRIC_COLUMNS

class Rollout(ParadigmProcess):
    '''Forward-simulate one branch per candidate from a real-time state
    of each scenario and write the branches with their metrics.'''

    name = 'rollout'
    step = Parameter(type=int, default=0, help='real-time steps to execute before branching')

    def run(self):
        if self.step < 0:
            raise ValueError(f'step must be nonnegative, got {self.step}.')
        scenarios = self.load_scenarios()
        ckpt = self.load_checkpoint()
        policy = LatticePolicy.from_config(self.cfg, ckpt.scoring if ckpt else None)
        predictor = self.warm_predictor(scenarios, policy)
        records = []
        rows = []
        for s_idx, scenario in enumerate(scenarios):
            loop = RealTimeLoop(scenario, self.cfg)
            for _ in range(self.step):
                cands = loop.candidates(policy)
                loop.execute(cands, select_max_likelihood(cands))
            cands = loop.candidates(policy)
            branches = forward_simulate(loop.world, cands, self.center_paradigm,
                                        self.others_paradigm, predictor, policy, loop.cfg,
                                        seed=self.seed + s_idx)
            if len(branches) >= 2:
                self.logger.info(f"'{scenario.name}': terminal dispersion "
                                 f'{branch_dispersion(branches):.4f} m over {len(branches)} branches.')
            for branch in branches:
                ret = branch_return(branch, loop.cfg.reward, loop.cfg.gamma, loop.cfg.dt)
                records.append((scenario.name, branch, ret))
                try:
                    report = list(episode_metrics(branch.states, scenario.map, loop.cfg))
                except EpisodeTooShort as err:
                    self.logger.warning(f'No metrics for branch {branch.seed_index}: {err}')
                    continue
                rows.append([scenario.name, *branch.seed_index, branch.failed, ret,
                             modality_drift(branch)] + report)
        self.save(BranchWriter(), 'branches.jsonl', records)
        self.save(TableWriter(BRANCH_COLUMNS), 'metrics.csv', rows)
