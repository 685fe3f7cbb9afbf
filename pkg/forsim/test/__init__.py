import unittest
import filecmp
import glob
import os
import tempfile
from forsim import load_processes
from forsim.process import ALL_PROCESSES
from forsim.config import read_config

load_processes()

class StaticTests(unittest.TestCase):
    '''Run the workflows in static/ twice and compare the outputs

    To add a new workflow to this runner:
    - Create static/NAME.toml with the desired parameters
    - Put any scenario files in static/
    - For each command you want to run:
      - list the files it should write, one per line, in a file named
        static/NAME.ORDER.COMMAND.txt
      - files will be sorted lexicographically, so zero-pad ORDER
      - a metrics command reads the episodes written by the command
        before it
    Every command writes to its own directory, and the two runs must
    produce byte-identical files.
    '''

    def single_command(self, config, command, out, previous):
        kwargs = {'out': out}
        if command == 'metrics':
            kwargs['episode'] = sorted(glob.glob(os.path.join(previous, '*episode.jsonl')))
        ALL_PROCESSES[command](config, **kwargs).run()

    def single_test(self, name):
        config = read_config(name + '.toml')
        steps = sorted(glob.glob(name + '.[0123456789]*.txt'))
        with tempfile.TemporaryDirectory() as tmp:
            for run in ('first', 'second'):
                previous = None
                for path in steps:
                    out = os.path.join(tmp, run, path[:-4])
                    self.single_command(config, path.split('.')[-2], out, previous)
                    previous = out
            for path in steps:
                with self.subTest(path):
                    with open(path) as fin:
                        expected = sorted(fin.read().split())
                    first = os.path.join(tmp, 'first', path[:-4])
                    second = os.path.join(tmp, 'second', path[:-4])
                    self.assertEqual(expected, sorted(os.listdir(first)))
                    for fname in expected:
                        self.assertTrue(filecmp.cmp(os.path.join(first, fname),
                                                    os.path.join(second, fname),
                                                    shallow=False), fname)

    def runTest(self):
        cwd_was = os.getcwd()
        dir_name = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                'static')
        os.chdir(dir_name)
        try:
            for fname in sorted(glob.glob('*.toml')):
                with self.subTest(fname):
                    self.single_test(fname[:-5])
        finally:
            os.chdir(cwd_was)
