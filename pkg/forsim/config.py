#!/usr/bin/env python3

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from dataclasses import dataclass, field, fields, replace
import logging
import math
from typing import Optional

logger = logging.getLogger('forsim.config')

COMFORT_ACCEL = 2.4

def read_config(pth):
    with open(pth, 'rb') as fin:
        return tomllib.load(fin)

def get_param(conf, *locs):
    for l in locs:
        if isinstance(l, str):
            if l in conf:
                return conf[l]
        elif isinstance(l, list):
            tmp = conf
            for k in l:
                if isinstance(tmp, dict) and k in tmp:
                    tmp = tmp[k]
                else:
                    break
            else:
                return tmp
    return None

def get_single_param(conf, action, key):
    if action is None:
        return get_param(conf, key)
    return get_param(conf, [action, key], key)

def _coerce(owner, name, typ, value):
    from forsim.world import ValidationError
    if typ == Optional[float]:
        typ = float
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{owner}.{name} should be a number but it is {value!r}.")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{owner}.{name} should be an integer but it is {value!r}.")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            raise ValidationError(f"{owner}.{name} should be true or false but it is {value!r}.")
        return value
    return value

def _build(cls, table, owner):
    '''Construct the dataclass `cls` from the dictionary `table`, warning
    about keys it does not define.'''
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in (table or {}).items():
        if key not in known:
            logger.warning(f"Ignoring unknown key '{key}' in [{owner}].")
            continue
        kwargs[key] = _coerce(owner, key, known[key].type, value)
    return cls(**kwargs)

@dataclass(frozen=True)
class PidGains:
    speed_kp: float = 1.0
    speed_ki: float = 0.05
    speed_kd: float = 0.0
    lateral_kp: float = 0.8
    lateral_ki: float = 0.0
    lateral_kd: float = 0.2
    heading_gain: float = 1.0
    lookahead: int = 3
    windup: float = 2.0

    def __post_init__(self):
        from forsim.world import ValidationError
        if self.lookahead < 0:
            raise ValidationError('pid.lookahead must be nonnegative.')
        if not self.windup > 0:
            raise ValidationError('pid.windup must be positive.')

@dataclass(frozen=True)
class RewardConfig:
    '''Weights of the stepwise reward model. The comfort threshold falls
    back to the one of the UC metric (`SimConfig.comfort_accel`) when
    not given.'''

    progress: float = 1.0
    collision: float = 10.0
    offroad: float = 2.0
    comfort: float = 0.5
    failure: float = -100.0
    comfort_accel: Optional[float] = None

    def __post_init__(self):
        from forsim.world import ValidationError
        for name in ('progress', 'collision', 'offroad', 'comfort'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f'reward.{name} must be finite and nonnegative.')
        if not math.isfinite(self.failure):
            raise ValidationError('reward.failure must be finite.')
        if self.comfort_accel is not None and not self.comfort_accel > 0:
            raise ValidationError('reward.comfort_accel must be positive.')

    @property
    def comfort_limit(self) -> float:
        return COMFORT_ACCEL if self.comfort_accel is None else self.comfort_accel

@dataclass(frozen=True)
class SimConfig:
    n_ref: int = 3
    n_lon: int = 4
    horizon: int = 40
    future_steps: int = 0
    history: int = 5
    dt: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.2
    dual_clip: float = 3.0
    epochs: int = 4
    iterations: int = 10
    w_anchor: float = 1.0
    w_kin: float = 0.5
    w_smooth: float = 0.5
    v_max: float = 15.0
    a_max: float = 4.0
    steer_max: float = 0.6
    comfort_accel: float = COMFORT_ACCEL
    reach: float = 10.0
    candidate_noise: float = 0.0
    ttc_horizon: float = 20.0
    ade_kinematics: bool = False
    reselect_margin: float = 0.5
    plausibility_slack: float = 0.5
    block_speed: float = 0.1
    buffer_capacity: int = 2048
    minibatch: int = 64
    predictor_lr: float = 1e-2
    predictor_line_search: bool = False
    policy_lr: float = 0.2
    policy_theta: tuple = (1.0, 0.5, -0.5, -3.0, 0.0)
    warmup_steps: int = 200
    reference_speeds: Optional[str] = None
    pid: PidGains = field(default_factory=PidGains)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        from forsim.world import ValidationError
        if self.future_steps == 0:
            object.__setattr__(self, 'future_steps', max(1, self.horizon // 2))
        object.__setattr__(self, 'policy_theta',
                           tuple(float(v) for v in self.policy_theta))
        if self.reward.comfort_accel is None:
            object.__setattr__(self, 'reward',
                               replace(self.reward, comfort_accel=self.comfort_accel))
        if self.n_ref < 1 or self.n_lon < 1:
            raise ValidationError('n_ref and n_lon must be at least 1.')
        if self.horizon < 2:
            raise ValidationError(f'horizon must be at least 2, got {self.horizon}.')
        if not 0 < self.future_steps <= self.horizon:
            raise ValidationError(f'future_steps must be in [1, horizon], got {self.future_steps}.')
        if self.history < 1:
            raise ValidationError('history must be at least 1.')
        if not 0 < self.dt <= 1:
            raise ValidationError(f'dt must be in (0, 1], got {self.dt}.')
        if not 0 < self.gamma <= 1:
            raise ValidationError(f'gamma must be in (0, 1], got {self.gamma}.')
        if not 0 < self.epsilon < 1:
            raise ValidationError(f'epsilon must be in (0, 1), got {self.epsilon}.')
        if not self.dual_clip > 1 + self.epsilon:
            raise ValidationError(f'dual_clip must exceed 1 + epsilon, got {self.dual_clip}.')
        for name in ('w_anchor', 'w_kin', 'w_smooth', 'candidate_noise',
                     'predictor_lr', 'policy_lr', 'plausibility_slack', 'block_speed',
                     'reselect_margin'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f'{name} must be finite and nonnegative.')
        for name in ('v_max', 'a_max', 'steer_max', 'comfort_accel', 'reach', 'ttc_horizon'):
            if not getattr(self, name) > 0:
                raise ValidationError(f'{name} must be positive.')
        if self.steer_max >= math.pi / 2:
            raise ValidationError('steer_max must be below pi/2.')
        if self.epochs < 0 or self.iterations < 0 or self.warmup_steps < 0:
            raise ValidationError('epochs, iterations and warmup_steps must be nonnegative.')
        if self.buffer_capacity < 1 or self.minibatch < 1:
            raise ValidationError('buffer_capacity and minibatch must be positive.')
        if len(self.policy_theta) != 5 or not all(map(math.isfinite, self.policy_theta)):
            raise ValidationError('policy_theta must hold 5 finite weights.')

    @property
    def group_size(self) -> int:
        return self.n_ref * self.n_lon

    def with_dt(self, dt: float) -> 'SimConfig':
        if dt == self.dt:
            return self
        return replace(self, dt=dt)

    @classmethod
    def from_config(cls, conf, action=None, **overrides):
        '''
        Build a SimConfig from a parsed TOML dictionary. Keys may sit at the
        top level or in the table named `action`; keyword overrides win over
        both.
        '''

        kwargs = {}
        for f in fields(cls):
            if f.name in overrides and overrides[f.name] is not None:
                value = overrides[f.name]
            else:
                value = get_single_param(conf, action, f.name)
            if value is None:
                continue
            if f.name == 'pid':
                kwargs['pid'] = value if isinstance(value, PidGains) else _build(PidGains, value, 'pid')
            elif f.name == 'reward':
                kwargs['reward'] = value if isinstance(value, RewardConfig) else _build(RewardConfig, value, 'reward')
            elif f.name == 'policy_theta':
                kwargs[f.name] = tuple(_coerce('config', f.name, float, v) for v in value)
            elif f.name == 'reference_speeds':
                kwargs[f.name] = str(value)
            else:
                kwargs[f.name] = _coerce('config', f.name, f.type, value)
        return cls(**kwargs)
