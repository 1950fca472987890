"""Independent reference implementations used as test oracles.

They work from the geometric definitions (rasters, box unions, words and
dense linear algebra) and share no code paths with the package beyond
``CarpetSpec`` itself.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
from scipy import ndimage

PIX = 4  # raster pixels per level-1 box side


def _raster(a, D, S):
    grid = np.zeros((a * PIX,) * D, dtype=bool)
    for s in S:
        grid[tuple(slice(c * PIX, (c + 1) * PIX) for c in s)] = True
    return grid


def _interior_connected(mask) -> bool:
    """Face-adjacent pixel connectivity of a union of closed boxes' interiors."""
    if not mask.any():
        return True
    _, n = ndimage.label(mask)  # default structure: face neighbours only
    return n == 1


def _square_isometries(D):
    for perm in itertools.permutations(range(D)):
        for signs in itertools.product((1, -1), repeat=D):
            M = np.zeros((D, D))
            for i, (j, s) in enumerate(zip(perm, signs)):
                M[i, j] = s
            yield M


def naive_validate(a: int, D: int, S) -> dict:
    """The four conditions checked on the union of closed level-1 boxes."""
    S = {tuple(s) for s in S}
    centers = {s: (np.array(s) + 0.5) / a for s in S}
    sym = True
    for M in _square_isometries(D):
        for s, c in centers.items():
            img = M @ (c - 0.5) + 0.5
            if tuple(np.floor(img * a + 1e-9).astype(int)) not in S:
                sym = False
    grid = _raster(a, D, S)
    connected = _interior_connected(grid)
    nondiag = True
    for corner in itertools.product(range(a - 1), repeat=D):
        win = tuple(slice(c * PIX, (c + 2) * PIX) for c in corner)
        if not _interior_connected(grid[win]):
            nondiag = False
    ts = np.linspace(0.0, 1.0, 6 * a + 1)
    borders = all(
        any(all(Fraction(s[k]) / a <= x <= Fraction(s[k] + 1) / a for k, x in enumerate((t,) + (0,) * (D - 1))) for s in S)
        for t in map(lambda v: Fraction(v).limit_denominator(6 * a), ts)
    )
    return {"symmetry": sym, "connectedness": connected, "non_diagonality": nondiag, "borders": borders}


def word_boxes(a: int, D: int, S, n: int) -> dict:
    """Map each word of length ``n`` to its closed box ``F_w(Q_0)`` as Fraction corners."""
    out = {}
    for word in itertools.product(sorted(map(tuple, S)), repeat=n):
        lo = [Fraction(0)] * D
        size = Fraction(1)
        for digit in word:
            size /= a
            lo = [l + size * d for l, d in zip(lo, digit)]
        out[word] = (tuple(lo), tuple(l + size for l in lo))
    return out


def brute_force_edges(a: int, D: int, S, n: int) -> set:
    """All unordered pairs of distinct level-``n`` boxes with non-empty intersection.

    Vertices are returned as lower-corner lattice tuples.
    """
    boxes = word_boxes(a, D, S, n)
    keys = []
    for lo, hi in boxes.values():
        keys.append((tuple(int(x * a**n) for x in lo), lo, hi))
    edges = set()
    for (k1, lo1, hi1), (k2, lo2, hi2) in itertools.combinations(keys, 2):
        if all(max(l1, l2) <= min(h1, h2) for l1, l2, h1, h2 in zip(lo1, lo2, hi1, hi2)):
            edges.add(tuple(sorted((k1, k2))))
    return edges


def dense_p2_capacity(cells: np.ndarray, edges, a: int, n: int) -> float:
    """Dirichlet energy of the harmonic extension by a dense linear solve."""
    N = len(cells)
    L = np.zeros((N, N))
    for i, j in edges:
        L[i, i] += 1
        L[j, j] += 1
        L[i, j] -= 1
        L[j, i] -= 1
    x = cells[:, 0]
    fixed = (x == 0) | (x == a**n - 1)
    u = np.where(x == a**n - 1, 1.0, 0.0)
    free = ~fixed
    u[free] = np.linalg.solve(L[np.ix_(free, free)], -L[np.ix_(free, fixed)] @ u[fixed])
    return float(u @ L @ u)


def _pair_offset_hist(spec, rel: int) -> tuple[np.ndarray, int]:
    """Histogram of sub-box offsets ``u - v`` for pairs of depth-``rel`` sub-cells of one cell."""
    a, D = spec.a, spec.D
    subs = np.array(list(itertools.product(*[sorted({tuple(s) for s in spec.S})] * rel)), dtype=np.int64)
    lattice = np.zeros((len(subs), D), dtype=np.int64)
    for k in range(rel):
        lattice = lattice * a + subs[:, k, :]
    diff = (lattice[:, None, :] - lattice[None, :, :]).reshape(-1, D)
    span = a**rel - 1
    hist = np.zeros((2 * span + 1,) * D, dtype=np.int64)
    np.add.at(hist, tuple((diff + span).T), 1)
    return hist, span


def bracket_ball_integral(spec, values: np.ndarray, cells: np.ndarray, level: int, radius: Fraction, p: float, rel: int = 2):
    """Bracket ``int int_{d < r} |f(x) - f(y)|^p`` for a level-``level`` cell function.

    Every cell is a translate of the same scaled carpet, so the pair mass of
    ``K_u x K_v`` inside the ball depends only on the lattice offset.  That mass
    is bracketed by refining both cells ``rel`` more levels and classifying each
    sub-box pair by its exact minimal and maximal distance.
    """
    a, D, N = spec.a, spec.D, spec.n_star
    hist, span = _pair_offset_hist(spec, rel)
    sub = np.array(list(itertools.product(range(-span, span + 1), repeat=D)), dtype=np.int64)
    weights = hist[tuple((sub + span).T)]
    keep = weights > 0
    sub, weights = sub[keep], weights[keep]
    unit = a ** (level + rel)
    thr = radius * radius * unit * unit  # squared radius in sub-box units
    R = int(np.ceil(float(radius) * a**level)) + 1
    side = a**level
    keys = np.zeros(len(cells), dtype=np.int64)
    for k in range(D):
        keys = keys * side + cells[:, k]
    order = np.argsort(keys)
    sorted_keys = keys[order]
    lo_total = hi_total = 0.0
    pair_mass = 1.0 / float(N) ** (2 * (level + rel))
    for off in itertools.product(range(-R, R + 1), repeat=D):
        e = np.array(off, dtype=np.int64) * a**rel + sub
        near = np.maximum(np.abs(e) - 1, 0)
        far = np.abs(e) + 1
        dmin = (near * near).sum(axis=1)
        dmax = (far * far).sum(axis=1)
        inside = int(weights[dmax < thr].sum())
        meets = int(weights[dmin <= thr].sum())
        if meets == 0:
            continue
        target = cells + np.array(off)
        ok = np.all((target >= 0) & (target < side), axis=1)
        tkeys = np.zeros(len(cells), dtype=np.int64)
        for k in range(D):
            tkeys = tkeys * side + np.where(ok, target[:, k], 0)
        pos = np.minimum(np.searchsorted(sorted_keys, tkeys), len(keys) - 1)
        ok &= sorted_keys[pos] == tkeys
        idx_u = np.nonzero(ok)[0]
        idx_v = order[pos[ok]]
        if not len(idx_u):
            continue
        s = float(np.sum(np.abs(values[idx_u] - values[idx_v]) ** p))
        lo_total += s * inside * pair_mass
        hi_total += s * meets * pair_mass
    return lo_total, hi_total
