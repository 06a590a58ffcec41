"""Finite binary path tree standing in for a one-dimensional Brownian filtration.

Level k holds the 2**k nodes reachable after k steps of +/- sqrt(dt), each
branch with probability 1/2. Values of adapted processes are stored in heap
order (see ``gexp.kernels``), so the first ``2**(k+1) - 1`` entries of any
field cover levels 0..k and truncating the tree is a slice.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from .errors import DepthTooLarge, LevelOutOfRange, NonPositiveHorizon, ShapeMismatch

MAX_STEPS = 24


def level_slice(k: int) -> slice:
    return slice(2**k - 1, 2 ** (k + 1) - 1)


@dataclass(frozen=True)
class PathTree:
    n_steps: int
    horizon: float

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def sqrt_dt(self) -> float:
        return float(np.sqrt(self.dt))

    @property
    def n_leaves(self) -> int:
        return 2**self.n_steps

    @property
    def n_nodes(self) -> int:
        return 2 ** (self.n_steps + 1) - 1

    @property
    def n_interior(self) -> int:
        return 2**self.n_steps - 1

    @property
    def leaf_prob(self) -> float:
        return 2.0**-self.n_steps

    def time(self, k: int) -> float:
        return k * self.dt

    def node_id(self, level: int, index) -> int:
        """Heap id of node ``index`` (path prefix bits, first step most significant)."""
        self._check_level(level)
        return 2**level - 1 + index

    def _check_level(self, level: int, top: Optional[int] = None) -> None:
        top = self.n_steps if top is None else top
        if not 0 <= level <= top:
            raise LevelOutOfRange(f"level {level} outside [0, {top}]")

    @cached_property
    def w(self) -> np.ndarray:
        """Brownian value at every node, heap order."""
        out = np.empty(self.n_nodes)
        out[0] = 0.0
        s = self.sqrt_dt
        for k in range(self.n_steps):
            parent = out[level_slice(k)]
            child = out[level_slice(k + 1)]
            child[0::2] = parent + s
            child[1::2] = parent - s
        out.flags.writeable = False
        return out

    def w_level(self, k: int) -> np.ndarray:
        self._check_level(k)
        return self.w[level_slice(k)]

    @property
    def w_terminal(self) -> np.ndarray:
        return self.w_level(self.n_steps)

    @cached_property
    def leaf_signs(self) -> np.ndarray:
        """(n_leaves, n_steps) array of increment signs along each leaf's path."""
        idx = np.arange(self.n_leaves)
        shifts = np.arange(self.n_steps - 1, -1, -1)
        bits = (idx[:, None] >> shifts[None, :]) & 1
        out = 1.0 - 2.0 * bits
        out.flags.writeable = False
        return out

    def truncate(self, level: int) -> "PathTree":
        """The tree made of levels 0..level (same dt)."""
        self._check_level(level)
        if level == 0:
            raise LevelOutOfRange("cannot truncate to a zero-step tree")
        return PathTree(level, level * self.dt)

    def check_leaves(self, values) -> np.ndarray:
        arr = np.asarray(getattr(values, "values", values), dtype=float)
        if arr.shape[-1:] != (self.n_leaves,):
            raise ShapeMismatch(f"expected {self.n_leaves} leaf values, got shape {arr.shape}")
        return arr


def build_tree(n_steps: int, horizon: float) -> PathTree:
    if int(n_steps) != n_steps or n_steps < 1:
        raise DepthTooLarge(f"n_steps must be an integer in [1, {MAX_STEPS}], got {n_steps}")
    if n_steps > MAX_STEPS:
        raise DepthTooLarge(f"n_steps={n_steps} exceeds {MAX_STEPS}")
    if not horizon > 0:
        raise NonPositiveHorizon(f"horizon must be positive, got {horizon}")
    return PathTree(int(n_steps), float(horizon))


@dataclass(frozen=True)
class AdaptedField:
    """Node values over levels ``k_min..k_max`` in heap order.

    ``values`` always spans levels ``0..k_max``; entries below ``k_min`` are NaN.
    """

    tree: PathTree
    values: np.ndarray
    k_min: int = 0
    k_max: Optional[int] = None

    def __post_init__(self):
        k_max = self.tree.n_steps if self.k_max is None else self.k_max
        object.__setattr__(self, "k_max", k_max)
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (2 ** (k_max + 1) - 1,):
            raise ShapeMismatch(f"field for levels 0..{k_max} needs {2 ** (k_max + 1) - 1} values")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def level(self, k: int) -> np.ndarray:
        if not self.k_min <= k <= self.k_max:
            raise LevelOutOfRange(f"level {k} outside [{self.k_min}, {self.k_max}]")
        return self.values[level_slice(k)]

    @property
    def root(self) -> float:
        return float(self.level(0)[0])

    @property
    def terminal(self) -> np.ndarray:
        return self.level(self.k_max)

    @classmethod
    def from_levels(cls, tree: PathTree, levels, k_min: int = 0) -> "AdaptedField":
        k_max = k_min + len(levels) - 1
        vals = np.full(2 ** (k_max + 1) - 1, np.nan)
        for k, lv in enumerate(levels, start=k_min):
            vals[level_slice(k)] = lv
        return cls(tree, vals, k_min, k_max)

    @classmethod
    def constant(cls, tree: PathTree, c: float) -> "AdaptedField":
        return cls(tree, np.full(tree.n_nodes, float(c)))


@dataclass(frozen=True)
class TerminalField:
    values: np.ndarray
    bounds: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1:
            raise ShapeMismatch("terminal field must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise ValueError("terminal field has non-finite entries")
        if self.bounds is not None:
            lo, hi = self.bounds
            if np.any(vals < lo) or np.any(vals > hi):
                raise ValueError(f"terminal field leaves its bound tag [{lo}, {hi}]")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.shape[0]


def leaf_values(tree: PathTree, x) -> np.ndarray:
    """Leaf array from a TerminalField, array, or scalar (broadcast)."""
    if np.isscalar(x):
        return np.full(tree.n_leaves, float(x))
    return tree.check_leaves(x)


def expectation(tree: PathTree, field) -> float:
    vals = tree.check_leaves(field)
    return float(np.mean(vals, axis=-1)) if vals.ndim == 1 else np.mean(vals, axis=-1)


def conditional_expectation(tree: PathTree, field: AdaptedField, level: int) -> AdaptedField:
    """Average the children at ``level + 1``; returns the field extended down to ``level``."""
    if not 0 <= level < field.k_max or level + 1 < field.k_min:
        raise LevelOutOfRange(f"need values at level {level + 1} of a field on [{field.k_min}, {field.k_max}]")
    child = field.level(level + 1)
    vals = np.array(field.values)
    vals[level_slice(level)] = 0.5 * (child[0::2] + child[1::2])
    return AdaptedField(tree, vals, min(level, field.k_min), field.k_max)


def terminal_as_field(tree: PathTree, x) -> AdaptedField:
    vals = np.full(tree.n_nodes, np.nan)
    vals[level_slice(tree.n_steps)] = leaf_values(tree, x)
    return AdaptedField(tree, vals, tree.n_steps, tree.n_steps)
