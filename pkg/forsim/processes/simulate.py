#!/usr/bin/env python3

from forsim.converters.episode import EpisodeWriter
from forsim.converters.table import TableWriter
from forsim.metrics import METRIC_COLUMNS, episode_metrics
from forsim.policy import LatticePolicy
from forsim.process import ScenarioProcess
from forsim.rollout import simulate_episode

def episode_filename(name: str, count: int) -> str:
    return 'episode.jsonl' if count == 1 else f'{name}.episode.jsonl'

class Simulate(ScenarioProcess):
    '''Run each scenario in real time, the center agent executing its
    highest-score candidate and the other agents following their lanes,
    and write the episode log and its metrics.'''

    name = 'simulate'

    def run(self):
        scenarios = self.load_scenarios()
        ckpt = self.load_checkpoint()
        policy = LatticePolicy.from_config(self.cfg, ckpt.scoring if ckpt else None)
        rows = []
        for scenario in scenarios:
            episode = simulate_episode(scenario, policy, self.cfg)
            self.logger.info(f"Simulated '{scenario.name}' for {len(episode.states) - 1} steps.")
            self.save(EpisodeWriter(), episode_filename(scenario.name, len(scenarios)), episode)
            report = episode_metrics(episode.states, scenario.map,
                                     self.cfg.with_dt(episode.dt))
            rows.append([scenario.name] + list(report))
        self.save(TableWriter(('scenario',) + METRIC_COLUMNS), 'metrics.csv', rows)
