"""Generalized Sierpinski carpets: digit sets, cells, the self-similar measure.

A carpet is given by a dimension ``D``, a subdivision factor ``a`` and a set
``S`` of digit vectors in ``{0, ..., a-1}^D``.  A level-``n`` cell is addressed
either by its word ``w_1 ... w_n`` (digits of ``S``) or by its lattice index
``i = sum_m w_m a^(n-m)``; the cell box is ``prod_k [i_k, i_k + 1] / a^n``.

All enumerations of level-``n`` cells use lexicographic lattice order, so every
downstream reduction sees the same element order.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .exceptions import BudgetExceededError, CarpetSpecError, NotACellError

DEFAULT_CELL_BUDGET = 1 << 23


@dataclass(frozen=True)
class CarpetSpec:
    """The triple ``(D, a, S)``.

    ``S`` is normalised to a sorted tuple of digit tuples, so two specs with the
    same digit set compare (and hash) equal.
    """

    D: int
    a: int
    S: tuple

    def __post_init__(self):
        D, a = int(self.D), int(self.a)
        if D < 1:
            raise CarpetSpecError(f"D must be a positive integer, got {self.D}")
        if a < 2:
            raise CarpetSpecError(f"a must be at least 2, got {self.a}")
        digits = set()
        for s in self.S:
            s = tuple(int(v) for v in s)
            if len(s) != D:
                raise CarpetSpecError(f"digit {s} does not have length D={D}")
            if any(v < 0 or v >= a for v in s):
                raise CarpetSpecError(f"digit {s} has entries outside [0, {a - 1}]")
            digits.add(s)
        if not digits:
            raise CarpetSpecError("S is empty")
        if len(digits) == a**D:
            raise CarpetSpecError("S is the full digit set; a carpet needs a proper subset")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "S", tuple(sorted(digits)))

    @property
    def n_star(self) -> int:
        """Number of digits (contraction maps)."""
        return len(self.S)

    @property
    def alpha(self) -> float:
        """Ahlfors dimension ``log N_* / log a``."""
        return math.log(self.n_star) / math.log(self.a)

    @property
    def diameter(self) -> float:
        return math.sqrt(self.D)

    @property
    def digits(self) -> np.ndarray:
        return _digit_array(self)

    def to_dict(self) -> dict:
        return {"D": self.D, "a": self.a, "S": [list(s) for s in self.S]}

    @classmethod
    def from_dict(cls, data: dict) -> "CarpetSpec":
        try:
            return cls(D=data["D"], a=data["a"], S=tuple(tuple(s) for s in data["S"]))
        except KeyError as exc:
            raise CarpetSpecError(f"carpet spec is missing field {exc}") from None

    @classmethod
    def from_json(cls, path) -> "CarpetSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")


def standard_carpet() -> CarpetSpec:
    """GSC(2, 3, {0,1,2}^2 minus the centre)."""
    S = [s for s in itertools.product(range(3), repeat=2) if s != (1, 1)]
    return CarpetSpec(2, 3, tuple(S))


def menger_sponge() -> CarpetSpec:
    """GSC(3, 3, S) with the 20 digits having at most one coordinate equal to 1."""
    S = [s for s in itertools.product(range(3), repeat=3) if sum(v == 1 for v in s) <= 1]
    return CarpetSpec(3, 3, tuple(S))


@lru_cache(maxsize=None)
def _digit_array(spec: CarpetSpec) -> np.ndarray:
    arr = np.array(spec.S, dtype=np.int64).reshape(len(spec.S), spec.D)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Validation of the four carpet conditions
# ---------------------------------------------------------------------------


def cube_isometries(D: int):
    """Yield the ``2^D D!`` isometries of the cube as ``(perm, flips)``.

    The isometry sends digit ``d`` to ``e`` with ``e_k = d[perm[k]]``, replaced
    by ``a - 1 - d[perm[k]]`` when ``flips[k]`` is set.
    """
    for perm in itertools.permutations(range(D)):
        for flips in itertools.product((False, True), repeat=D):
            yield perm, flips


def apply_isometry(digit, perm, flips, a):
    return tuple((a - 1 - digit[p]) if f else digit[p] for p, f in zip(perm, flips))


def face_components(digits) -> list[list[tuple]]:
    """Connected components of a digit set under shared-face adjacency."""
    remaining = set(digits)
    comps = []
    while remaining:
        start = min(remaining)
        remaining.discard(start)
        stack, comp = [start], [start]
        while stack:
            d = stack.pop()
            for k in range(len(d)):
                for step in (-1, 1):
                    nb = d[:k] + (d[k] + step,) + d[k + 1:]
                    if nb in remaining:
                        remaining.discard(nb)
                        stack.append(nb)
                        comp.append(nb)
        comps.append(sorted(comp))
    comps.sort()
    return comps


@dataclass
class ValidationReport:
    """Per-condition outcome of :func:`validate_carpet` with failure witnesses."""

    symmetry: bool
    connectedness: bool
    non_diagonality: bool
    borders: bool
    witnesses: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.symmetry and self.connectedness and self.non_diagonality and self.borders

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "symmetry": self.symmetry,
            "connectedness": self.connectedness,
            "non_diagonality": self.non_diagonality,
            "borders": self.borders,
            "witnesses": self.witnesses,
        }


def validate_carpet(spec: CarpetSpec) -> ValidationReport:
    """Check symmetry, connectedness, non-diagonality and borders-included.

    Witnesses are JSON-friendly: the first offending isometry, a component
    split off from the rest, the first bad ``2^D`` window, the first missing
    border digit.
    """
    D, a = spec.D, spec.a
    S = set(spec.S)
    witnesses = {}

    symmetry = True
    for perm, flips in cube_isometries(D):
        moved = [d for d in spec.S if apply_isometry(d, perm, flips, a) not in S]
        if moved:
            symmetry = False
            witnesses["symmetry"] = {
                "perm": list(perm),
                "flips": list(flips),
                "digit": list(moved[0]),
                "image": list(apply_isometry(moved[0], perm, flips, a)),
            }
            break

    comps = face_components(S)
    connectedness = len(comps) == 1
    if not connectedness:
        witnesses["connectedness"] = {"component": [list(d) for d in comps[-1]], "n_components": len(comps)}

    non_diagonality = True
    for corner in itertools.product(range(a - 1), repeat=D):
        inside = [d for d in S if all(c <= v <= c + 1 for v, c in zip(d, corner))]
        if inside and len(face_components(inside)) > 1:
            non_diagonality = False
            witnesses["non_diagonality"] = {
                "window": list(corner),
                "components": [[list(d) for d in c] for c in face_components(inside)],
            }
            break

    borders = True
    for t in range(a):
        digit = (t,) + (0,) * (D - 1)
        if digit not in S:
            borders = False
            witnesses["borders"] = {"missing": list(digit)}
            break

    return ValidationReport(symmetry, connectedness, non_diagonality, borders, witnesses)


def require_valid(spec: CarpetSpec) -> None:
    report = validate_carpet(spec)
    if not report.valid:
        failed = [k for k in ("symmetry", "connectedness", "non_diagonality", "borders") if not getattr(report, k)]
        raise CarpetSpecError(f"not a generalized Sierpinski carpet: fails {', '.join(failed)}")


# ---------------------------------------------------------------------------
# Cells and addresses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    level: int
    lattice: tuple
    word: tuple

    def box(self, a: int):
        """Closed box as ``(lower, upper)`` corner tuples of Fractions."""
        scale = a**self.level
        lo = tuple(Fraction(i, scale) for i in self.lattice)
        hi = tuple(Fraction(i + 1, scale) for i in self.lattice)
        return lo, hi


@dataclass(frozen=True)
class Address:
    """Finite truncation of an infinite word, with its exact anchor ``F_w(0)``."""

    depth: int
    word: tuple
    lattice: tuple

    def anchor(self, a: int) -> tuple:
        scale = a**self.depth
        return tuple(Fraction(i, scale) for i in self.lattice)

    def anchor_float(self, a: int) -> np.ndarray:
        return np.asarray(self.lattice, dtype=float) / float(a) ** self.depth


def _check_budget(spec: CarpetSpec, n: int, budget: int) -> None:
    if spec.n_star**n > budget:
        raise BudgetExceededError(
            f"level {n} has {spec.n_star}**{n} cells, above the budget of {budget}"
        )


def cell_of_word(spec: CarpetSpec, word: Sequence) -> Cell:
    digits = set(spec.S)
    word = tuple(tuple(int(v) for v in w) for w in word)
    lattice = [0] * spec.D
    for w in word:
        if w not in digits:
            raise NotACellError(f"digit {w} is not in S")
        lattice = [i * spec.a + v for i, v in zip(lattice, w)]
    return Cell(len(word), tuple(lattice), word)


def word_of_lattice(spec: CarpetSpec, level: int, lattice: Sequence[int]) -> Cell:
    digits = set(spec.S)
    lattice = tuple(int(i) for i in lattice)
    if len(lattice) != (spec.D if level > 0 else len(lattice)):
        raise NotACellError(f"lattice index {lattice} does not have length D={spec.D}")
    side = spec.a**level
    if level > 0 and any(i < 0 or i >= side for i in lattice):
        raise NotACellError(f"lattice index {lattice} is outside [0, {side - 1}]")
    word = []
    for m in range(level, 0, -1):
        scale = spec.a ** (m - 1)
        w = tuple((i // scale) % spec.a for i in lattice)
        if w not in digits:
            raise NotACellError(f"lattice {lattice} at level {level}: digit {w} at position {level - m + 1} is not in S")
        word.append(w)
    return Cell(level, lattice if level > 0 else (), tuple(word))


@lru_cache(maxsize=12)
def _level_cells_cached(spec: CarpetSpec, n: int) -> np.ndarray:
    digits = spec.digits
    cells = np.zeros((1, spec.D), dtype=np.int64)
    for _ in range(n):
        cells = (cells[:, None, :] * spec.a + digits[None, :, :]).reshape(-1, spec.D)
    order = np.lexsort(cells.T[::-1])
    cells = np.ascontiguousarray(cells[order])
    cells.setflags(write=False)
    return cells


def level_cells(spec: CarpetSpec, n: int, budget: int = DEFAULT_CELL_BUDGET) -> np.ndarray:
    """Lattice indices of all level-``n`` cells, shape ``(N_*^n, D)``, lex-sorted."""
    _check_budget(spec, n, budget)
    return _level_cells_cached(spec, n)


def lattice_key(lattice: np.ndarray, side: int) -> np.ndarray:
    """Row-major integer key of lattice indices; monotone in lexicographic order."""
    lattice = np.asarray(lattice, dtype=np.int64)
    key = np.zeros(lattice.shape[:-1], dtype=np.int64)
    for k in range(lattice.shape[-1]):
        key = key * side + lattice[..., k]
    return key


@lru_cache(maxsize=12)
def _level_keys(spec: CarpetSpec, n: int) -> np.ndarray:
    keys = lattice_key(_level_cells_cached(spec, n), spec.a**n)
    keys.setflags(write=False)
    return keys


def cell_index(spec: CarpetSpec, n: int, lattice: np.ndarray) -> np.ndarray:
    """Vertex index of each lattice row at level ``n``, or ``-1`` if it is not a cell."""
    lattice = np.asarray(lattice, dtype=np.int64)
    side = spec.a**n
    _check_budget(spec, n, DEFAULT_CELL_BUDGET)
    keys = _level_keys(spec, n)
    inside = np.all((lattice >= 0) & (lattice < side), axis=-1)
    q = lattice_key(np.where(inside[..., None], lattice, 0), side)
    pos = np.searchsorted(keys, q)
    pos = np.minimum(pos, len(keys) - 1)
    found = inside & (keys[pos] == q)
    return np.where(found, pos, -1)


@lru_cache(maxsize=24)
def ancestor_index(spec: CarpetSpec, m: int, n: int) -> np.ndarray:
    """For every level-``m`` cell, the vertex index of its level-``n`` ancestor."""
    if n > m:
        raise ValueError(f"ancestor level {n} exceeds cell level {m}")
    cells = _level_cells_cached(spec, m)
    idx = cell_index(spec, n, cells // spec.a ** (m - n))
    idx.setflags(write=False)
    return idx


def cell_measure(spec: CarpetSpec, n: int) -> Fraction:
    """Mass ``N_*^-n`` of one level-``n`` cell under the self-similar measure."""
    if n < 0:
        raise ValueError("level must be non-negative")
    return Fraction(1, spec.n_star**n)


# ---------------------------------------------------------------------------
# Sampling the self-similar measure
# ---------------------------------------------------------------------------


def sample_words(spec: CarpetSpec, depth: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform digit indices, shape ``(size, depth)``."""
    return rng.integers(0, spec.n_star, size=(size, depth), dtype=np.int64)


def words_to_lattice(spec: CarpetSpec, words: np.ndarray) -> np.ndarray:
    digits = spec.digits
    lattice = np.zeros((words.shape[0], spec.D), dtype=np.int64)
    for k in range(words.shape[1]):
        lattice = lattice * spec.a + digits[words[:, k]]
    return lattice


def sample_lattice(spec: CarpetSpec, depth: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Lattice indices at ``depth`` of ``size`` independent draws from the measure."""
    if spec.a**depth >= 2**62:
        raise BudgetExceededError(f"sampling depth {depth} overflows 64-bit lattice indices")
    return words_to_lattice(spec, sample_words(spec, depth, size, rng))


def sample_address(spec: CarpetSpec, depth: int, rng: np.random.Generator) -> Address:
    if depth < 1:
        raise ValueError("depth must be at least 1")
    idx = sample_words(spec, depth, 1, rng)[0]
    word = tuple(spec.S[i] for i in idx)
    return Address(depth, word, cell_of_word(spec, word).lattice)


# ---------------------------------------------------------------------------
# Ball masses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BallMassBracket:
    center: Address
    radius: float
    level: int
    lower: Fraction
    upper: Fraction

    @property
    def midpoint(self) -> float:
        return float(self.lower + self.upper) / 2

    @property
    def width(self) -> float:
        return float(self.upper - self.lower)


def _squared_threshold(radius, scale: int) -> tuple[int, int]:
    """Integer thresholds for ``d2 < (r*scale)^2`` and ``d2 <= (r*scale)^2``.

    Returns ``(lt, le)`` with ``d2 < x`` iff ``d2 <= lt`` and ``d2 <= x`` iff
    ``d2 <= le`` for integer ``d2``.
    """
    x = Fraction(radius) ** 2 * scale * scale
    le = math.floor(x)
    lt = le - 1 if x == le else le
    return lt, le


def ball_mass_brackets(
    spec: CarpetSpec,
    centers: np.ndarray,
    center_depth: int,
    radius,
    level: int,
    budget: int = DEFAULT_CELL_BUDGET,
):
    lower, upper, visited = _ball_counts(spec, centers, center_depth, radius, level, budget)
    total = float(spec.n_star**level)
    return lower / total, upper / total, visited


def _ball_counts(spec, centers, center_depth, radius, level, budget):
    """Bracket ``mu(B(x, r))`` for many centres at once.

    ``centers`` are lattice indices at ``center_depth`` (anchors ``i / a^depth``).
    Cells are refined from level 0 down to ``level``; a closed box counts in
    ``lower`` when its farthest point is strictly inside the open ball, and in
    ``upper`` when its nearest point is within distance ``r``.  Comparisons are
    exact integer arithmetic on a common grid.

    Returns integer masses in units of ``N_*^-level`` and the visited cell count;
    :func:`ball_mass_brackets` is the float wrapper.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.int64))
    a, D, N = spec.a, spec.D, spec.n_star
    grid_depth = max(center_depth, level)
    scale = a**grid_depth
    if scale * scale * D >= 2**62:
        raise BudgetExceededError("ball bracketing grid overflows 64-bit integers")
    lt, le = _squared_threshold(radius, scale)
    cen = centers * a ** (grid_depth - center_depth)
    digits = spec.digits

    n_centers = centers.shape[0]
    # exact masses as integer multiples of N^-level
    lower = np.zeros(n_centers, dtype=np.int64)
    upper = np.zeros(n_centers, dtype=np.int64)
    owner = np.arange(n_centers)
    cells = np.zeros((n_centers, D), dtype=np.int64)
    visited = 0
    for l in range(0, level + 1):
        if l > 0:
            owner = np.repeat(owner, N)
            cells = (cells[:, None, :] * a + digits[None]).reshape(-1, D)
        visited += len(owner)
        if visited > budget:
            raise BudgetExceededError(f"ball bracketing visited more than {budget} cells")
        size = a ** (grid_depth - l)
        lo = cells * size
        hi = lo + size
        c = cen[owner]
        near = np.clip(c, lo, hi) - c
        far = np.maximum(np.abs(c - lo), np.abs(hi - c))
        dmin = np.einsum("ij,ij->i", near, near)
        dmax = np.einsum("ij,ij->i", far, far)
        weight = N ** (level - l)
        inside = dmax <= lt
        meets = dmin <= le
        np.add.at(lower, owner[inside], weight)
        np.add.at(upper, owner[inside], weight)
        partial = meets & ~inside
        if l == level:
            np.add.at(upper, owner[partial], weight)
        owner = owner[partial]
        cells = cells[partial]
    return lower, upper, visited


def measure_ball(spec: CarpetSpec, center: Address, radius, level: int, budget: int = DEFAULT_CELL_BUDGET) -> BallMassBracket:
    """Exact rational bracket of the mass of the open ball ``B(center, radius)``."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    centers = np.array([center.lattice], dtype=np.int64)
    lo, hi, _ = _ball_counts(spec, centers, center.depth, radius, level, budget)
    denom = spec.n_star**level
    return BallMassBracket(center, radius, level, Fraction(int(lo[0]), denom), Fraction(int(hi[0]), denom))


@dataclass
class AhlforsScan:
    """Empirical bounds of ``mu(B(x, r)) / r^alpha`` over sampled centres."""

    c_minus: float
    c_plus: float
    table: list
    samples: int
    level: int
    seed: int

    @property
    def c_ar(self) -> float:
        """Symmetric constant ``max(C+, 1/C-)`` as in a two-sided Ahlfors bound."""
        return max(self.c_plus, 1.0 / self.c_minus)

    def to_dict(self) -> dict:
        return {
            "c_minus": self.c_minus,
            "c_plus": self.c_plus,
            "c_ar": self.c_ar,
            "samples": self.samples,
            "level": self.level,
            "seed": self.seed,
            "table": self.table,
        }


def ahlfors_scan(
    spec: CarpetSpec,
    samples: int,
    radii: Sequence,
    level: int,
    seed: int = 0,
    center_depth: int | None = None,
    budget: int = DEFAULT_CELL_BUDGET * 8,
) -> AhlforsScan:
    """Scan ball masses at random centres; the bracket midpoint is the mass estimate."""
    depth = center_depth if center_depth is not None else level + 2
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xA4,)))
    centers = sample_lattice(spec, depth, samples, rng)
    table = []
    lo_all, hi_all = [], []
    for r in radii:
        lo, hi, _ = ball_mass_brackets(spec, centers, depth, r, level, budget)
        ratio = (lo + hi) / 2 / float(r) ** spec.alpha
        table.append(
            {
                "radius": float(r),
                "min_ratio": float(ratio.min()),
                "max_ratio": float(ratio.max()),
                "mean_ratio": float(ratio.mean()),
                "max_width": float((hi - lo).max()),
                "mean_width": float((hi - lo).mean()),
            }
        )
        lo_all.append(ratio.min())
        hi_all.append(ratio.max())
    return AhlforsScan(float(min(lo_all)), float(max(hi_all)), table, samples, level, seed)
