"""Deterministic i.i.d. time-period bootstrap draws.

Every draw is keyed on ``(master_seed, stage, i, j)`` through
``numpy.random.SeedSequence``'s spawn key, never on a running generator, so
the index vector for a given coordinate is the same under any evaluation
order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Union

import numpy as np

from .panel import FactorPanel, ReturnPanel, counts_from_indices


class Stage(IntEnum):
    OUTER = 0
    INNER = 1
    JOINT = 2  # joint-test null bootstrap
    PERTURB = 3  # perturbations of a pseudo sample
    SUBSET = 4
    POPULATION = 5
    ESTIMATE = 6
    RSW = 7
    SYNTHETIC = 8


_STAGE_NAMES = {"outer": Stage.OUTER, "inner": Stage.INNER}


@dataclass(frozen=True)
class BootstrapPlan:
    master_seed: int
    I: int
    J: int
    D: int

    def __post_init__(self):
        if self.I < 1 or self.J < 1:
            raise ValueError(f"I and J must be >= 1 (got I={self.I}, J={self.J})")
        if self.D < 1:
            raise ValueError("D must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")


@dataclass(frozen=True, eq=False)
class IndexDraw:
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)

    def counts(self) -> np.ndarray:
        return counts_from_indices(self.indices, len(self.indices))

    def compose(self, other: "IndexDraw") -> "IndexDraw":
        """Draw equivalent to applying ``self`` then ``other``: (a∘b)[r] = a[b[r]]."""
        return IndexDraw(self.indices[other.indices])


def rng_for(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for an arbitrary integer coordinate."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _stage(stage: Union[Stage, str, int]) -> Stage:
    if isinstance(stage, str):
        return _STAGE_NAMES[stage.lower()]
    return Stage(stage)


def draw_indices(plan: BootstrapPlan, stage, i: int, j: int = 0) -> IndexDraw:
    """Length-D vector of i.i.d. uniform period indices for coordinate (i, j)."""
    if not 0 <= i < plan.I:
        raise IndexError(f"outer index {i} outside [0, {plan.I})")
    if not 0 <= j < plan.J:
        raise IndexError(f"inner index {j} outside [0, {plan.J})")
    return IndexDraw(sample_indices(plan.master_seed, plan.D, _stage(stage), i, j))


def sample_indices(master_seed: int, D: int, *key: int) -> np.ndarray:
    if D == 1:
        return np.zeros(1, dtype=np.int64)
    return rng_for(master_seed, *key).integers(0, D, size=D)


def draw_block(master_seed: int, D: int, stage: Stage, i: int, js: Iterable[int]) -> np.ndarray:
    """Stacked index draws for several inner coordinates, shape (len(js), D)."""
    js = list(js)
    out = np.empty((len(js), D), dtype=np.int64)
    for r, j in enumerate(js):
        out[r] = sample_indices(master_seed, D, int(stage), i, j)
    return out


def count_block(master_seed: int, D: int, stage: Stage, i: int, js: Iterable[int]) -> np.ndarray:
    """Per-period multiplicities for several draws, shape (len(js), D)."""
    return counts_from_indices(draw_block(master_seed, D, stage, i, js), D)


def apply_draw(panel, draw: Union[IndexDraw, np.ndarray]):
    """Resample the rows of a ReturnPanel or FactorPanel.

    Row r of the output is row ``indices[r]`` of the input, values and mask
    alike.  Pass the factor panel through the same draw to keep returns and
    factors aligned.
    """
    idx = draw.indices if isinstance(draw, IndexDraw) else np.asarray(draw)
    if isinstance(panel, ReturnPanel):
        D = panel.n_periods
    elif isinstance(panel, FactorPanel):
        D = panel.values.shape[0]
    else:
        raise TypeError(f"cannot resample {type(panel).__name__}")
    if idx.shape != (D,):
        raise ValueError(f"draw length {idx.size} != panel length {D}")
    if isinstance(panel, FactorPanel):
        return FactorPanel(panel.values[idx], tuple(panel.period_labels[r] for r in idx), panel.names)
    return ReturnPanel(
        panel.values[idx],
        panel.mask[idx],
        tuple(panel.period_labels[r] for r in idx),
        panel.names,
        resampled=True,
    )
