#!/usr/bin/env python3

from dataclasses import dataclass
import enum
from typing import Optional, Tuple

import numpy as np

from forsim.world import CandidateSet, Trajectory, ValidationError

class EmptyOverlap(RuntimeError):
    pass

class Paradigm(enum.Enum):
    '''Center-agent paradigms. The last two are tracking baselines that
    never reselect.'''

    MAX_LIKELIHOOD = 'max-likelihood'
    MODE_CONSISTENT = 'mode-consistent'
    TRAJECTORY_ALIGNED = 'trajectory-aligned'
    PERFECT_TRACKING = 'perfect-tracking'
    TRAJECTORY_TRACKING = 'trajectory-tracking'

    @property
    def reselects(self) -> bool:
        return self in (Paradigm.MAX_LIKELIHOOD, Paradigm.MODE_CONSISTENT,
                        Paradigm.TRAJECTORY_ALIGNED)

@dataclass(frozen=True)
class SelectionParadigm:
    tag: Paradigm
    index: Optional[Tuple[int, int]] = None
    reference: Optional[Trajectory] = None
    start_step: int = 0
    include_kinematics: bool = False

    @classmethod
    def seeded(cls, tag: Paradigm, cands: CandidateSet, index,
               include_kinematics: bool = False) -> 'SelectionParadigm':
        index = (int(index[0]), int(index[1]))
        n_ref, n_lon = cands.shape
        if not (0 <= index[0] < n_ref and 0 <= index[1] < n_lon):
            raise ValidationError(f'Seed index {index} is outside the {n_ref}x{n_lon} grid.')
        return cls(tag, index, cands.trajectory(*index), 0, include_kinematics)

def select_max_likelihood(cands: CandidateSet) -> Tuple[int, int]:
    # np.argmax returns the first maximum, i.e. the lowest flat index
    return cands.unflatten(np.argmax(cands.scores.ravel()))

def select_mode_consistent(par: SelectionParadigm) -> Tuple[int, int]:
    return par.index

def ade_aligned(candidate: Trajectory, reference: Trajectory, step: int,
                include_kinematics: bool = False) -> float:
    '''
    Mean distance between candidate points 0..T-step-1 and reference
    points step..T-1. With `include_kinematics` the heading (unit vector)
    and velocity differences are added to each point's distance.
    '''

    horizon = len(reference)
    if step >= horizon:
        raise EmptyOverlap(f'No overlap between a {horizon}-step reference and virtual step {step}.')
    window = min(horizon - step, len(candidate))
    cand = candidate.points[:window]
    ref = reference.points[step:step + window]
    dist = np.hypot(cand[:, 0] - ref[:, 0], cand[:, 1] - ref[:, 1])
    if include_kinematics:
        dist = (dist + np.hypot(cand[:, 2] - ref[:, 2], cand[:, 3] - ref[:, 3])
                + np.hypot(cand[:, 4] - ref[:, 4], cand[:, 5] - ref[:, 5]))
    return float(dist.mean())

def select_trajectory_aligned(cands: CandidateSet, par: SelectionParadigm,
                              step: int, previous_line: Optional[int] = None,
                              margin: float = 0.0) -> Tuple[int, int]:
    '''
    Candidate closest to the reference after shifting the reference by
    the virtual step. Step 1 uses the seed directly; steps at or past the
    reference end compare against its last point only.

    With `previous_line`, the best candidate on that reference line is
    kept unless another candidate is closer by more than `margin` metres.
    '''

    if step <= 1:
        return par.index
    offset = min(step - par.start_step, len(par.reference) - 1)
    n_ref, n_lon = cands.shape
    errors = np.array([[ade_aligned(cands.trajectory(i, j), par.reference, offset,
                                    par.include_kinematics)
                        for j in range(n_lon)] for i in range(n_ref)])
    # first minimum wins ties
    best_index = cands.unflatten(int(np.argmin(errors.ravel())))
    if previous_line is None:
        return best_index
    rows = np.flatnonzero(np.asarray(cands.lines) == previous_line)
    if len(rows) == 0:
        return best_index
    kept = errors[rows].ravel()
    flat = int(np.argmin(kept))
    if kept[flat] <= errors[best_index] + margin:
        return (int(rows[flat // n_lon]), flat % n_lon)
    return best_index
