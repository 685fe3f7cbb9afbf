#!/usr/bin/env python3

from forsim.converters.episode import EpisodeReader
from forsim.converters.table import TableWriter
from forsim.metrics import METRIC_COLUMNS, episode_metrics
from forsim.parameters import PathListParameter
from forsim.process import Process

class Metrics(Process):
    '''Compute the metric report of logged episodes, one CSV row each.'''

    name = 'metrics'
    episode = PathListParameter(help='episode JSON lines files')

    def inputs(self):
        return tuple(self.episode)

    def run(self):
        rows = []
        for pth in self.episode:
            episode = EpisodeReader().read(pth)
            report = episode_metrics(episode.states, None, self.cfg.with_dt(episode.dt))
            rows.append([episode.name] + list(report))
        self.save(TableWriter(('scenario',) + METRIC_COLUMNS), 'metrics.csv', rows)
