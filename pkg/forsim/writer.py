#!/usr/bin/env python3

import json
import logging
import math
import os
import time

ALL_WRITERS = {}

def plain(value):
    '''Convert numpy scalars and arrays to JSON-ready Python values.
    Non-finite floats become the strings "inf", "-inf" and "nan".'''
    if hasattr(value, 'tolist'):
        value = value.tolist()
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value

def dump_line(record) -> str:
    return json.dumps(record, separators=(',', ':'))

class Writer:
    identifier = None
    extension = '.txt'

    def __init__(self, header=None):
        self.header = header
        self.logger = logging.getLogger('forsim.writer.'+(self.identifier or 'unnamed_writer'))

    def __init_subclass__(cls, *args, **kwargs):
        global ALL_WRITERS
        super().__init_subclass__(*args, **kwargs)
        if cls.identifier:
            if cls.identifier in ALL_WRITERS:
                raise ValueError(f'Identifier {cls.identifier} is already used by another Writer class.')
            ALL_WRITERS[cls.identifier] = cls

    def write_header(self, fout):
        if self.header:
            fout.write(f'# {self.header}\n')

    def write(self, fout, data):
        raise NotImplementedError

    def save(self, pth, data):
        start = time.time()
        directory = os.path.dirname(os.path.abspath(pth))
        os.makedirs(directory, exist_ok=True)
        with open(pth, 'w', encoding='UTF-8', newline='') as fout:
            self.write_header(fout)
            self.write(fout, data)
        self.logger.info(f'Wrote {pth} in {time.time() - start:.3f} seconds.')
