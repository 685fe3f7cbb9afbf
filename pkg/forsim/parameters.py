#!/usr/bin/env python3

from forsim.config import get_single_param
from dataclasses import dataclass
from typing import Any

@dataclass
class Parameter:
    required: bool = True
    default: Any = None
    type: type = None
    help: str = 'a parameter'

    name = None

    def __post_init__(self):
        if self.default is not None:
            self.required = False

    def __set_name__(self, owner, name):
        # copy so that subclasses do not share one mutable dictionary
        dct = {}
        if hasattr(owner, 'parameters'):
            dct.update(owner.parameters)
        dct[name] = self
        owner.parameters = dct
        self.name = name

    def __get__(self, instance, owner):
        if instance is None:
            return self
        return instance.parameter_values[self.name]

    def process(self, name, value):
        if value is None:
            if self.required:
                raise ValueError(f"Missing parameter '{name}'.")
            return self.default
        if self.type and (not isinstance(value, self.type)
                          or (self.type is int and isinstance(value, bool))):
            raise ValueError(f"Parameter '{name}' should be {self.type.__name__} but it is {type(value).__name__}.")
        return value

    def extract(self, conf, action, attribute):
        value = get_single_param(conf, action, attribute)
        return self.process(attribute, value)

    def help_text(self):
        paren = []
        if self.type:
            paren.append(self.type.__name__)
        if self.required:
            paren.append('required')
        if self.default is not None:
            paren.append(f'default: {getattr(self.default, "value", self.default)}')
        ret = self.help
        if paren:
            ret += f' ({"; ".join(paren)})'
        return ret

def process_parameters(parameters, conf, conf_prefix, kwargs):
    ret = {}
    for name, parser in parameters.items():
        if kwargs.get(name) is not None:
            ret[name] = parser.process(name, kwargs[name])
        else:
            ret[name] = parser.extract(conf, conf_prefix, name)
    return ret

@dataclass
class PathParameter(Parameter):
    '''A path to an existing file.'''
    type: type = str

    def process(self, name, value):
        import os
        val = super().process(name, value)
        if val is not None and not os.path.isfile(val):
            raise FileNotFoundError(f"File '{val}' given for '{name}' does not exist.")
        return val

@dataclass
class PathListParameter(Parameter):
    '''One or more paths to existing files; a single string is accepted.'''
    type: type = list

    def process(self, name, value):
        import os
        if isinstance(value, str):
            value = [value]
        val = super().process(name, value)
        if val is None:
            return val
        if not val:
            raise ValueError(f"Parameter '{name}' needs at least one path.")
        for pth in val:
            if not isinstance(pth, str):
                raise ValueError(f"Parameter '{name}' should list paths but it contains {pth!r}.")
            if not os.path.isfile(pth):
                raise FileNotFoundError(f"File '{pth}' given for '{name}' does not exist.")
        return list(val)

@dataclass
class ChoiceParameter(Parameter):
    '''A tag of the enum `choices`, returned as the enum member.'''
    choices: Any = None
    type: type = str

    def process(self, name, value):
        if isinstance(value, self.choices):
            return value
        val = super().process(name, value)
        if val is None or isinstance(val, self.choices):
            return val
        try:
            return self.choices(val)
        except ValueError:
            tags = ', '.join(c.value for c in self.choices)
            raise ValueError(f"Unknown value '{val}' for '{name}'; expected one of {tags}.")

    def help_text(self):
        tags = '|'.join(c.value for c in self.choices)
        return super().help_text() + f' [{tags}]'
