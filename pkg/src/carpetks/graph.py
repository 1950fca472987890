"""Approximation graphs ``G_n = (W_n, E_n)``.

Two level-``n`` cells are adjacent when their closed boxes touch, i.e. their
lattice indices are at Chebyshev distance one.  Borders-included plus symmetry
put every box corner in the carpet, so touching boxes always share a point of
the carpet itself.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .carpet import DEFAULT_CELL_BUDGET, CarpetSpec, cell_index, level_cells, require_valid
from .exceptions import CarpetSpecError


def _half_offsets(D: int) -> np.ndarray:
    """Neighbour offsets that are lexicographically positive (one per unordered pair)."""
    offs = [o for o in itertools.product((-1, 0, 1), repeat=D) if any(o) and o > (0,) * D]
    return np.array(offs, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with unordered edges stored once as ``(i, j)``, ``i < j``."""

    n_vertices: int
    edges: np.ndarray

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        e = self.edges
        ones = np.ones(len(e))
        m = sp.coo_matrix((ones, (e[:, 0], e[:, 1])), shape=(self.n_vertices,) * 2)
        return (m + m.T).tocsr()

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n_vertices else 0

    def neighbors(self, i: int) -> np.ndarray:
        adj = self.adjacency
        return adj.indices[adj.indptr[i]:adj.indptr[i + 1]]

    def is_connected(self) -> bool:
        if self.n_vertices <= 1:
            return True
        n_comp, _ = connected_components(self.adjacency, directed=False)
        return n_comp == 1


def path_graph(n_vertices: int) -> Graph:
    idx = np.arange(n_vertices - 1, dtype=np.int64)
    return Graph(n_vertices, np.stack([idx, idx + 1], axis=1))


@dataclass(frozen=True, eq=False)
class LevelGraph(Graph):
    spec: CarpetSpec = None
    level: int = 0

    @property
    def cells(self) -> np.ndarray:
        return level_cells(self.spec, self.level)

    def header(self) -> dict:
        return {
            "n": self.level,
            "vertex_count": self.n_vertices,
            "edge_count": self.n_edges,
            "max_degree": self.max_degree,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v"])
            w.writerows(self.edges.tolist())

    def write_header(self, path, extra: dict | None = None) -> None:
        with open(path, "w") as fh:
            json.dump({**self.header(), **(extra or {})}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def build_level_graph(
    spec: CarpetSpec,
    n: int,
    budget: int = DEFAULT_CELL_BUDGET,
    check_spec: bool = True,
    check_connected: bool = True,
) -> LevelGraph:
    """Build ``G_n`` by probing the ``3^D - 1`` lattice neighbours of each cell."""
    if n < 0:
        raise ValueError("level must be non-negative")
    if check_spec:
        require_valid(spec)
    cells = level_cells(spec, n, budget)
    blocks = []
    for off in _half_offsets(spec.D):
        j = cell_index(spec, n, cells + off)
        i = np.nonzero(j >= 0)[0]
        blocks.append(np.stack([i, j[i]], axis=1))
    edges = np.concatenate(blocks) if blocks else np.empty((0, 2), dtype=np.int64)
    edges = np.sort(edges, axis=1)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    edges.setflags(write=False)
    g = LevelGraph(len(cells), edges, spec, n)
    if check_connected and not g.is_connected():
        raise CarpetSpecError(f"G_{n} is disconnected")
    return g


def compute_L_star(spec: CarpetSpec, n_max: int) -> dict:
    """Maximum vertex degree of ``G_n`` for ``1 <= n <= n_max``."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    per_level = [build_level_graph(spec, n).max_degree for n in range(1, n_max + 1)]
    return {
        "per_level": per_level,
        "L_star": max(per_level),
        "stabilized": n_max >= 2 and per_level[-1] == per_level[-2],
        "bound": 3**spec.D - 1,
    }


def face_cells(spec: CarpetSpec, n: int, axis: int, side: str) -> np.ndarray:
    """Indices of level-``n`` cells whose box touches ``x_axis = 0`` or ``x_axis = 1``.

    ``axis`` is 1-based.
    """
    if not 1 <= axis <= spec.D:
        raise ValueError(f"axis must be in [1, {spec.D}], got {axis}")
    if side not in ("low", "high"):
        raise ValueError("side must be 'low' or 'high'")
    col = level_cells(spec, n)[:, axis - 1]
    target = 0 if side == "low" else spec.a**n - 1
    return np.nonzero(col == target)[0]
