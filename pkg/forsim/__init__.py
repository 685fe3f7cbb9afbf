#!/usr/bin/env python3

from forsim.process import ALL_PROCESSES
from forsim.reader import ALL_READERS
from forsim.writer import ALL_WRITERS

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3

def import_package(package: str) -> None:
    import importlib
    import pkgutil
    pkg = importlib.import_module(package)
    for info in pkgutil.iter_modules(pkg.__path__):
        importlib.import_module(f'{package}.{info.name}')

def load_processes() -> None:
    '''
    Import all processes, along with the converters they read and write
    files with.
    '''

    import_package('forsim.converters')
    import_package('forsim.processes')

def get_process_names():
    '''
    Return a sorted list of all currently loaded process names.
    '''

    return sorted(ALL_PROCESSES.keys())

def get_reader_names():
    return sorted(ALL_READERS.keys())

def get_writer_names():
    return sorted(ALL_WRITERS.keys())

def get_process_parameters(name: str):
    '''
    Return a dictionary of parameters for a given process.
    '''

    return ALL_PROCESSES[name].parameters

def run_command(name: str, config=None, **kwargs):
    '''
    Invoke a particular process. If `config` is provided, it should have the
    same structure as a dictionary produced by parsing a TOML configuration
    file. Individual arguments may also be provided by keyword, which
    override the corresponding settings in `config` (if present).
    '''

    cls = ALL_PROCESSES[name]
    proc = cls(config or {}, **kwargs)
    proc.run()
    return proc

def main(argv=None):
    import argparse
    import logging
    from forsim import config
    from forsim.rollout import OthersParadigm
    from forsim.selection import Paradigm

    load_processes()

    actions = sorted(ALL_PROCESSES.keys()) + ['help']

    join = '\n- '
    epilog = f'''Available Actions:
- {join.join(actions)}

run `forsim help [ACTION]` for a longer description.

Exit codes: 0 success, 2 invalid input, 3 runtime failure.
FORSIM_THREADS caps the number of worker threads (default 1).'''

    parser = argparse.ArgumentParser(
        prog='forsim',
        description='Stepwise forward simulation of multi-agent driving scenarios',
        epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('action', choices=actions,
                        metavar='ACTION', help='Action to perform')
    parser.add_argument('topic', nargs='?', help='Action to describe (with help)')
    parser.add_argument('--config', '-c', action='store', help='TOML configuration file')
    parser.add_argument('--scenario', '-s', action='append', metavar='PATH',
                        help='Scenario JSON file (repeatable)')
    parser.add_argument('--episode', '-e', action='append', metavar='PATH',
                        help='Episode JSON lines file (repeatable, metrics only)')
    parser.add_argument('--center-paradigm', choices=[p.value for p in Paradigm])
    parser.add_argument('--others-paradigm', choices=[p.value for p in OthersParadigm])
    parser.add_argument('--seed', type=int)
    parser.add_argument('--out', '-o', metavar='DIR', help='Output directory')
    parser.add_argument('--iterations', type=int, help='Training iterations')
    parser.add_argument('--checkpoint', metavar='PATH', help='Checkpoint JSON file')
    parser.add_argument('--log-level', '-l', action='store',
                        default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
                        metavar='LEVEL')

    args = parser.parse_args(argv)

    if args.action == 'help':
        if args.topic in ALL_PROCESSES:
            print(ALL_PROCESSES[args.topic].help_text())
        elif args.topic is None:
            parser.print_help()
        else:
            print(f'Unknown process {args.topic}.')
        return EXIT_OK

    logging.basicConfig(level=args.log_level)
    logger = logging.getLogger('forsim')
    kwargs = {
        'scenario': args.scenario,
        'episode': args.episode,
        'center_paradigm': args.center_paradigm,
        'others_paradigm': args.others_paradigm,
        'seed': args.seed,
        'out': args.out,
        'iterations': args.iterations,
        'checkpoint': args.checkpoint,
    }
    params = get_process_parameters(args.action)
    kwargs = {k: v for k, v in kwargs.items()
              if v is not None and (k in params or k == 'iterations')}
    try:
        conf = config.read_config(args.config) if args.config else {}
        run_command(args.action, conf, **kwargs)
    except (ValueError, FileNotFoundError) as err:
        logger.error(f'{args.action} failed: {err}')
        return EXIT_INVALID
    except Exception as err:
        logger.error(f'{args.action} failed: {type(err).__name__}: {err}')
        return EXIT_RUNTIME
    return EXIT_OK
