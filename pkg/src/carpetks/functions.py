"""Functions on the carpet that the energies and functionals consume.

Every function can be evaluated at sampled points given as lattice indices at
some depth ``m`` (the point is the anchor ``i / a^m``).  A :class:`CellFunction`
is piecewise constant on level-``level`` cells and reads the value of the
ancestor cell; a :class:`PointFunction` evaluates a rule at the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .carpet import CarpetSpec, cell_index, level_cells
from .exceptions import LevelMismatchError


class EvalFunction:
    """Mixin giving linear-combination arithmetic to evaluable functions."""

    spec: CarpetSpec
    #: cell level for piecewise-constant functions, ``None`` for point rules
    resolution = None

    def evaluate(self, lattice: np.ndarray, depth: int) -> np.ndarray:
        raise NotImplementedError

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return LinearCombination(self.spec, ((1.0, self),), float(other))
        return LinearCombination(self.spec, ((1.0, self), (1.0, other)))

    __radd__ = __add__

    def __mul__(self, scalar):
        return LinearCombination(self.spec, ((float(scalar), self),))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if not isinstance(other, (int, float)) else -float(other))


@dataclass(eq=False)
class CellFunction(EvalFunction):
    """One value per level-``level`` cell, in canonical (lex lattice) vertex order."""

    spec: CarpetSpec
    level: int
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = self.spec.n_star**self.level
        if self.values.shape != (expected,):
            raise LevelMismatchError(
                f"level-{self.level} cell function needs {expected} values, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("cell function values must be finite")

    @property
    def resolution(self):
        return self.level

    def evaluate(self, lattice, depth):
        if depth < self.level:
            raise LevelMismatchError(f"cannot evaluate a level-{self.level} cell function at depth {depth}")
        idx = cell_index(self.spec, self.level, np.asarray(lattice) // self.spec.a ** (depth - self.level))
        if np.any(idx < 0):
            raise ValueError("evaluation point outside the carpet")
        return self.values[idx]

    def refine(self, m: int) -> "CellFunction":
        """Same function written as a level-``m`` cell function, ``m >= level``."""
        from .carpet import ancestor_index

        if m < self.level:
            raise LevelMismatchError(f"cannot refine level {self.level} to coarser level {m}")
        return CellFunction(self.spec, m, self.values[ancestor_index(self.spec, m, self.level)])

    def __add__(self, other):
        if isinstance(other, CellFunction) and other.level == self.level and other.spec == self.spec:
            return CellFunction(self.spec, self.level, self.values + other.values)
        if isinstance(other, (int, float)):
            return CellFunction(self.spec, self.level, self.values + other)
        return super().__add__(other)

    __radd__ = __add__

    def __mul__(self, scalar):
        return CellFunction(self.spec, self.level, self.values * float(scalar))

    __rmul__ = __mul__


@dataclass(eq=False)
class PointFunction(EvalFunction):
    """A rule ``coords (k, D) -> values (k,)`` evaluated at anchors."""

    spec: CarpetSpec
    rule: Callable[[np.ndarray], np.ndarray]
    name: str = "point"
    lipschitz: float | None = None

    def evaluate(self, lattice, depth):
        coords = np.asarray(lattice, dtype=float) / float(self.spec.a) ** depth
        return np.asarray(self.rule(coords), dtype=float)


@dataclass(eq=False)
class LinearCombination(EvalFunction):
    spec: CarpetSpec
    terms: tuple
    constant: float = 0.0

    @property
    def resolution(self):
        levels = [t.resolution for _, t in self.terms if t.resolution is not None]
        return max(levels) if levels else None

    def evaluate(self, lattice, depth):
        out = np.full(len(lattice), self.constant, dtype=float)
        for coef, term in self.terms:
            out += coef * term.evaluate(lattice, depth)
        return out


def coordinate_function(spec: CarpetSpec, axis: int = 1) -> PointFunction:
    """``x -> x_axis`` (1-based axis)."""
    k = axis - 1
    return PointFunction(spec, lambda x: x[:, k], name=f"x{axis}", lipschitz=1.0)


def constant_function(spec: CarpetSpec, value: float = 1.0) -> CellFunction:
    return CellFunction(spec, 0, np.array([float(value)]))


def face_indicator(spec: CarpetSpec, level: int = 1, axis: int = 1) -> CellFunction:
    """Indicator of the low slab ``{i_axis = 0}`` at ``level``; coarse and discontinuous."""
    cells = level_cells(spec, level)
    return CellFunction(spec, level, (cells[:, axis - 1] == 0).astype(float), meta={"role": "negative-control"})
