#!/usr/bin/env python3

import csv

from forsim.writer import Writer

def cell(value):
    if hasattr(value, 'item'):
        value = value.item()
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return value

class TableWriter(Writer):
    '''Comma-separated tables: one header row of column names, then one
    row per record in the given order. Floats are written with `repr` so
    that they read back exactly.'''

    identifier = 'csv'
    extension = '.csv'

    def __init__(self, columns, header=None):
        super().__init__(header)
        self.columns = tuple(columns)

    def write(self, fout, rows):
        out = csv.writer(fout, lineterminator='\n')
        out.writerow(self.columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row[c] for c in self.columns]
            elif hasattr(row, '_asdict'):
                row = list(row)
            if len(row) != len(self.columns):
                raise ValueError(f'Expected {len(self.columns)} cells, got {len(row)}.')
            out.writerow([cell(v) for v in row])
