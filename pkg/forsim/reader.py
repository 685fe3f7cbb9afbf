#!/usr/bin/env python3

import json
import logging
import math
import time

import numpy as np

from forsim.world import ParseError

ALL_READERS = {}

class Reader:
    identifier = None

    def __init__(self):
        self.filename = None
        self.location = None
        self.logger = logging.getLogger('forsim.reader.'+(self.identifier or 'unnamed_reader'))

    def __init_subclass__(cls, *args, **kwargs):
        global ALL_READERS
        super().__init_subclass__(*args, **kwargs)
        if cls.identifier:
            if cls.identifier in ALL_READERS:
                raise ValueError(f'Identifier {cls.identifier} is already used by another Reader class.')
            ALL_READERS[cls.identifier] = cls

    def info(self, msg):
        self.logger.info(msg)

    def warning(self, msg):
        self.logger.warning(msg)

    def error(self, msg):
        prefix = ', '.join([x for x in [self.filename, self.location] if x])
        if prefix:
            prefix += ': '
        self.logger.error(prefix+msg)
        raise ParseError(prefix+msg)

    def require(self, obj, key, where='object'):
        if not isinstance(obj, dict):
            self.error(f'Expected an object for {where}.')
        if key not in obj:
            self.error(f"Missing key '{key}' in {where}.")
        return obj[key]

    def number(self, value, what, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(f'{what} should be a number but it is {value!r}.')
        if integer and not isinstance(value, int):
            self.error(f'{what} should be an integer but it is {value!r}.')
        if not math.isfinite(value):
            self.error(f'{what} must be finite.')
        return value

    def array(self, value, what, width=None, ndim=None):
        '''Convert nested lists to a float array, checking the trailing
        width and the number of dimensions when given.'''
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError):
            self.error(f'{what} is not a rectangular array of numbers.')
        if ndim is not None and arr.ndim != ndim:
            self.error(f'{what} should have {ndim} dimensions, found {arr.ndim}.')
        if width is not None and (arr.ndim == 0 or arr.shape[-1] != width):
            self.error(f'{what} should have rows of length {width}.')
        if not np.all(np.isfinite(arr)):
            self.error(f'{what} contains non-finite values.')
        return arr

    def read_file(self, fin):
        raise NotImplementedError

    def open_file(self, pth):
        return open(pth, encoding='UTF-8')

    def close_file(self, fin):
        fin.close()

    def read(self, pth):
        start = time.time()
        self.filename = str(pth)
        self.location = None
        fin = self.open_file(pth)
        try:
            result = self.read_file(fin)
        finally:
            self.close_file(fin)
        self.info(f'Read {pth} in {time.time() - start:.3f} seconds.')
        return result

    @classmethod
    def help_text(cls):
        if not cls.identifier:
            return ''
        ret = [f'Identifier: {cls.identifier}']
        if hasattr(cls, 'long_name'):
            ret.append(f'Long name: {cls.long_name}')
        if cls.__doc__:
            import textwrap
            for piece in textwrap.dedent(cls.__doc__).split('\n\n'):
                ret.append('')
                ret += textwrap.wrap(piece)
        return '\n'.join(ret)

def _strip_comments(text):
    return '\n'.join(l for l in text.splitlines() if not l.startswith('#'))

class JSONReader(Reader):
    '''A single JSON document, optionally preceded by `#` comment lines.'''

    def open_file(self, pth):
        with open(pth, encoding='UTF-8') as fin:
            text = fin.read()
        self.filename = str(pth)
        try:
            return json.loads(_strip_comments(text))
        except json.JSONDecodeError as err:
            self.location = f'line {err.lineno}'
            self.error(f'Invalid JSON: {err.msg}.')

    def close_file(self, fin):
        pass

class LineReader(Reader):
    '''One JSON object per line; blank lines and `#` comment lines are
    skipped.'''

    def reset(self):
        pass

    def process_record(self, record):
        pass

    def finish(self):
        return None

    def read_file(self, fin):
        self.reset()
        for linenumber, line in enumerate(fin, 1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            self.location = f'line {linenumber}'
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                self.error(f'Invalid JSON: {err.msg}.')
            self.process_record(record)
        self.location = None
        return self.finish()
