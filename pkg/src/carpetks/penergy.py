"""Discrete p-energy, p-harmonic extension, face-to-face capacity, rho/beta.

The p-energy of ``f`` on a graph is ``sum over unordered edges |f(u) - f(v)|^p``
(each edge counted once).  Its minimiser with prescribed boundary values is
found by a Newton-type iteration whose linear systems are reweighted graph
Laplacians (IRLS); an exact line search along the reweighted direction makes
the step length scale-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .carpet import CarpetSpec, ancestor_index, level_cells
from .exceptions import ConfigError, ConvergenceError, LevelMismatchError
from .functions import CellFunction
from .graph import Graph, build_level_graph, face_cells

DIRECT_SOLVE_LIMIT = 400_000
CD_FALLBACK_LIMIT = 2_000
CD_FALLBACK_SWEEPS = 25
METHODS = ("irls", "damped-newton", "coordinate-descent")


@dataclass(frozen=True)
class SolverConfig:
    p: float = 2.0
    tol: float = 1e-12
    grad_tol: float = 1e-8
    max_iter: int = 200
    method: str = "irls"
    weight_floor: float = 1e-12
    armijo: float = 1e-4
    backtrack: float = 0.5
    on_failure: str = "raise"

    def __post_init__(self):
        if not self.p > 1:
            raise ConfigError(f"p-harmonic solves need p > 1, got p={self.p}")
        if not (self.tol > 0 and self.grad_tol > 0):
            raise ConfigError("tol and grad_tol must be positive")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.on_failure not in ("raise", "accept"):
            raise ConfigError("on_failure must be 'raise' or 'accept'")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _values(f, graph: Graph) -> np.ndarray:
    if isinstance(f, CellFunction):
        level = getattr(graph, "level", None)
        if level is not None and f.level != level:
            raise LevelMismatchError(f"function at level {f.level}, graph at level {level}")
        return f.values
    f = np.asarray(f, dtype=float)
    if f.shape != (graph.n_vertices,):
        raise LevelMismatchError(f"expected {graph.n_vertices} values, got shape {f.shape}")
    return f


def graph_p_energy(graph: Graph, f, p: float, rho: float | None = None) -> float:
    """Raw p-energy, or ``rho**level`` times it when ``rho`` is given."""
    u = _values(f, graph)
    e = graph.edges
    raw = float(np.sum(np.abs(u[e[:, 0]] - u[e[:, 1]]) ** p))
    if rho is None:
        return raw
    return rho ** getattr(graph, "level") * raw


def energy_gradient(graph: Graph, u: np.ndarray, p: float) -> np.ndarray:
    """``d/du_w`` of the p-energy at every vertex."""
    e = graph.edges
    diff = u[e[:, 0]] - u[e[:, 1]]
    g = p * np.abs(diff) ** (p - 1) * np.sign(diff)
    return np.bincount(e[:, 0], g, graph.n_vertices) - np.bincount(e[:, 1], g, graph.n_vertices)


@dataclass
class PHarmonicResult:
    values: np.ndarray
    energy: float
    residual: float
    iterations: int
    method: str
    p: float
    max_principle_ok: bool
    history: list = field(default_factory=list)
    converged: bool = True

    def report(self) -> dict:
        return {
            "p": self.p,
            "converged": self.converged,
            "iterations": self.iterations,
            "energy": self.energy,
            "residual": self.residual,
            "method": self.method,
            "max_principle_ok": self.max_principle_ok,
        }


def _weighted_laplacian(graph: Graph, w: np.ndarray) -> sp.csr_matrix:
    e = graph.edges
    n = graph.n_vertices
    off = sp.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n))
    off = off + off.T
    deg = np.bincount(e[:, 0], w, n) + np.bincount(e[:, 1], w, n)
    return (sp.diags(deg) - off).tocsr()


def _solve_spd(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    if A.shape[0] <= DIRECT_SOLVE_LIMIT:
        return spla.spsolve(A.tocsc(), b)
    import pyamg

    ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")
    x = ml.solve(b, tol=1e-13, accel="cg", maxiter=500)
    return x


def _normalize_boundary(graph: Graph, boundary) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(boundary, dict):
        idx = np.fromiter(boundary.keys(), dtype=np.int64, count=len(boundary))
        vals = np.fromiter(boundary.values(), dtype=float, count=len(boundary))
    else:
        idx, vals = boundary
        idx = np.asarray(idx, dtype=np.int64)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), idx.shape).copy()
    if idx.size == 0:
        raise ConfigError("boundary must pin at least one vertex")
    if np.any((idx < 0) | (idx >= graph.n_vertices)):
        raise ConfigError("boundary vertex index out of range")
    order = np.argsort(idx, kind="stable")
    return idx[order], vals[order]


def p_harmonic_solve(graph: Graph, boundary, cfg: SolverConfig | None = None) -> PHarmonicResult:
    """Minimise the p-energy subject to fixed values on ``boundary``.

    ``boundary`` is ``{vertex: value}`` or ``(indices, values)``.  When the
    first-order residual (max over free vertices of the energy gradient)
    stays above ``cfg.grad_tol`` this raises :class:`ConvergenceError`, or,
    with ``cfg.on_failure == "accept"``, returns the last iterate flagged
    ``converged=False``.  For p close to 1 minimisers have flat regions and
    the residual may not be reducible in floating point.
    """
    cfg = cfg or SolverConfig()
    p = cfg.p
    bidx, bvals = _normalize_boundary(graph, boundary)
    n = graph.n_vertices
    free = np.ones(n, dtype=bool)
    free[bidx] = False
    u = np.empty(n)
    u[bidx] = bvals
    lo, hi = float(bvals.min()), float(bvals.max())
    span = hi - lo

    def finish(it, method, history, converged=True):
        r = float(np.max(np.abs(energy_gradient(graph, u, p)[free]), initial=0.0))
        ok = bool(np.all(u[free] >= lo - 1e-12 * max(span, 1)) and np.all(u[free] <= hi + 1e-12 * max(span, 1)))
        return PHarmonicResult(u.copy(), graph_p_energy(graph, u, p), r, it, method, p, ok, history, converged)

    if not free.any() or span == 0:
        u[free] = lo
        return finish(0, cfg.method, [])

    # p = 2 start: one Laplacian solve
    L = _weighted_laplacian(graph, np.ones(graph.n_edges))
    _linear_step(L, u, free)
    if p == 2:
        return finish(1, cfg.method, [])

    if cfg.method == "coordinate-descent":
        return _coordinate_descent(graph, u, free, cfg, finish)

    e = graph.edges
    floor = cfg.weight_floor * span
    energy = graph_p_energy(graph, u, p)
    history = [energy]
    grad = energy_gradient(graph, u, p)
    residual = float(np.max(np.abs(grad[free])))
    it = 0
    stall = 0
    best_residual = residual
    while residual > cfg.grad_tol and it < cfg.max_iter:
        it += 1
        diff = u[e[:, 0]] - u[e[:, 1]]
        w = np.maximum(np.abs(diff), floor) ** (p - 2)
        Lw = _weighted_laplacian(graph, w)
        Lff = Lw[free][:, free]
        # Newton direction: Hessian is p(p-1) Lw on the free block
        d = np.zeros(n)
        d[free] = -_solve_spd(Lff, grad[free]) / (p * (p - 1))
        if cfg.method == "irls":
            t = _line_search_exact(graph, u, d, p)
        else:
            t = _armijo(graph, u, d, grad, energy, cfg)
        u[free] += t * d[free]
        new_energy = graph_p_energy(graph, u, p)
        grad = energy_gradient(graph, u, p)
        residual = float(np.max(np.abs(grad[free])))
        rel = (energy - new_energy) / max(abs(energy), 1e-300)
        energy = new_energy
        history.append(energy)
        # near the optimum the energy settles long before the residual does,
        # so only count a stall when neither quantity improves
        improved = residual < 0.5 * best_residual
        best_residual = min(best_residual, residual)
        stall = stall + 1 if rel < cfg.tol and not improved else 0
        if stall >= 5 and residual > cfg.grad_tol:
            break

    if residual > cfg.grad_tol:
        # coordinate sweeps polish the last digits on small graphs
        if graph.n_vertices <= CD_FALLBACK_LIMIT:
            try:
                return _coordinate_descent(graph, u, free, cfg, finish, start_iter=it, max_sweeps=CD_FALLBACK_SWEEPS)
            except ConvergenceError:
                pass
        if cfg.on_failure == "accept":
            return finish(it, cfg.method, history, converged=False)
        raise ConvergenceError(
            f"p-harmonic solve did not reach grad_tol={cfg.grad_tol} (residual {residual:.3e})",
            iterations=it,
            residual=residual,
            energy=energy,
        )
    return finish(it, cfg.method, history)


def _linear_step(L, u, free):
    Lff = L[free][:, free]
    Lfb = L[free][:, ~free]
    u[free] = _solve_spd(Lff, -(Lfb @ u[~free]))


def _phi_derivs(diff, ddiff, t, p):
    x = diff + t * ddiff
    ax = np.abs(x)
    d1 = p * np.sum(ax ** (p - 1) * np.sign(x) * ddiff)
    with np.errstate(divide="ignore"):
        d2 = p * (p - 1) * np.sum(np.where(ax > 0, ax ** (p - 2), 0.0) * ddiff**2)
    return d1, d2


def _line_search_exact(graph, u, d, p, iters=60):
    """Minimise the convex ``t -> E(u + t d)`` by safeguarded Newton/bisection."""
    e = graph.edges
    diff = u[e[:, 0]] - u[e[:, 1]]
    ddiff = d[e[:, 0]] - d[e[:, 1]]
    lo, hi = 0.0, 1.0
    while _phi_derivs(diff, ddiff, hi, p)[0] < 0 and hi < 1e6:
        lo, hi = hi, hi * 2
    t = min(1.0, hi)
    for _ in range(iters):
        d1, d2 = _phi_derivs(diff, ddiff, t, p)
        if d1 == 0:
            return t
        if d1 < 0:
            lo = t
        else:
            hi = t
        tn = t - d1 / d2 if d2 > 0 and np.isfinite(d2) else 0.5 * (lo + hi)
        if not (lo < tn < hi):
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 1e-15 * max(1.0, abs(t)):
            return tn
        t = tn
    return t


def _armijo(graph, u, d, grad, energy, cfg):
    slope = float(grad @ d)
    t = 1.0
    for _ in range(60):
        trial = u + t * d
        if graph_p_energy(graph, trial, cfg.p) <= energy + cfg.armijo * t * slope:
            return t
        t *= cfg.backtrack
    return t


def _vertex_minimiser(nb_vals, p, x0):
    """argmin_x sum |x - v|^p by bisection on the monotone derivative."""
    lo, hi = float(nb_vals.min()), float(nb_vals.max())
    if lo == hi:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = np.sum(np.abs(mid - nb_vals) ** (p - 1) * np.sign(mid - nb_vals))
        if g > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-17 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def _coordinate_descent(graph, u, free, cfg, finish, start_iter=0, max_sweeps=None):
    adj = graph.adjacency
    order = np.nonzero(free)[0]
    p = cfg.p
    history = [graph_p_energy(graph, u, p)]
    residual = float(np.max(np.abs(energy_gradient(graph, u, p)[free]))) if free.any() else 0.0
    max_sweeps = cfg.max_iter if max_sweeps is None else max_sweeps
    for sweep in range(1, max_sweeps + 1):
        for w in order:
            nb = adj.indices[adj.indptr[w]:adj.indptr[w + 1]]
            u[w] = _vertex_minimiser(u[nb], p, u[w])
        grad = energy_gradient(graph, u, p)
        residual = float(np.max(np.abs(grad[free])))
        history.append(graph_p_energy(graph, u, p))
        if residual <= cfg.grad_tol:
            return finish(start_iter + sweep, "coordinate-descent", history)
    if cfg.on_failure == "accept":
        return finish(start_iter + max_sweeps, "coordinate-descent", history, converged=False)
    raise ConvergenceError(
        f"coordinate descent did not reach grad_tol={cfg.grad_tol} (residual {residual:.3e})",
        iterations=start_iter + max_sweeps,
        residual=residual,
        energy=history[-1],
    )


# ---------------------------------------------------------------------------
# Capacity and the rescaling factor
# ---------------------------------------------------------------------------


@dataclass
class CapacityResult:
    level: int
    p: float
    capacity: float
    solution: PHarmonicResult
    graph: Graph

    def cell_function(self, spec) -> CellFunction:
        return CellFunction(spec, self.level, self.solution.values, meta={"role": "member", "source": f"capacity level {self.level}, p={self.p}"})


def capacity_boundary(spec: CarpetSpec, n: int, low: float = 0.0, high: float = 1.0) -> dict:
    """Axis-1 faces: low face pinned to ``low``, high face to ``high``."""
    b = {int(i): low for i in face_cells(spec, n, 1, "low")}
    b.update({int(i): high for i in face_cells(spec, n, 1, "high")})
    return b


def p_capacity(
    spec: CarpetSpec,
    n: int,
    p: float,
    cfg: SolverConfig | None = None,
    graph: Graph | None = None,
    boundary: dict | None = None,
) -> CapacityResult:
    """Minimum p-energy on ``G_n`` with the axis-1 faces pinned to 0 and 1."""
    if n < 1:
        raise ValueError("capacity needs level n >= 1")
    cfg = cfg or SolverConfig(p=p)
    if cfg.p != p:
        cfg = SolverConfig(**{**cfg.to_dict(), "p": p})
    graph = graph if graph is not None else build_level_graph(spec, n)
    boundary = boundary if boundary is not None else capacity_boundary(spec, n)
    sol = p_harmonic_solve(graph, boundary, cfg)
    return CapacityResult(n, p, sol.energy, sol, graph)


def beta_from_rho(rho: float, n_star: int, a: int) -> float:
    return math.log(n_star * rho) / math.log(a)


def aitken(seq: Sequence[float]) -> float | None:
    """Aitken delta-squared extrapolation of the last three terms."""
    if len(seq) < 3:
        return None
    x0, x1, x2 = seq[-3:]
    denom = (x2 - x1) - (x1 - x0)
    if denom == 0:
        return x2
    return x2 - (x2 - x1) ** 2 / denom


@dataclass
class RhoEstimate:
    """Capacity-ratio surrogate for the energy rescaling factor.

    Ratios are ``cap_n / cap_{n+1}``; ``rho_hat`` is the last one.  This is a
    computable stand-in whose normalisation may differ from other
    constructions by a bounded factor.
    """

    p: float
    levels: list
    capacities: list
    ratios: list
    rho_hat: float
    rho_extrap: float | None
    beta_hat: float
    alpha: float
    supercritical: bool
    converged: list = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(self.converged)

    @property
    def ratio_spread(self) -> float:
        return max(self.ratios) - min(self.ratios)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "levels": self.levels,
            "capacities": self.capacities,
            "ratios": self.ratios,
            "ratio_spread": self.ratio_spread,
            "rho_hat": self.rho_hat,
            "rho_extrap": self.rho_extrap,
            "beta_hat": self.beta_hat,
            "alpha": self.alpha,
            "supercritical": self.supercritical,
            "converged": self.converged,
            "note": "capacity-ratio surrogate; not identified with the exact rescaling constant",
        }


def estimate_rho_beta(
    spec: CarpetSpec,
    p: float,
    levels: Sequence[int],
    cfg: SolverConfig | None = None,
    on_level: Callable | None = None,
) -> RhoEstimate:
    levels = [int(n) for n in levels]
    if len(levels) < 2:
        raise ConfigError("need at least two levels to form a capacity ratio")
    if any(b - a != 1 for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"levels must be consecutive, got {levels}")
    caps, converged = [], []
    for n in levels:
        res = p_capacity(spec, n, p, cfg)
        caps.append(res.capacity)
        converged.append(res.solution.converged)
        if on_level is not None:
            on_level(res)
    ratios = [c0 / c1 for c0, c1 in zip(caps, caps[1:])]
    rho = ratios[-1]
    return RhoEstimate(
        p=p,
        levels=levels,
        capacities=caps,
        ratios=ratios,
        rho_hat=rho,
        rho_extrap=aitken(ratios),
        beta_hat=beta_from_rho(rho, spec.n_star, spec.a),
        alpha=spec.alpha,
        supercritical=rho > 1,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# min_k and cell averages
# ---------------------------------------------------------------------------


def min_k_details(p: float, a: float, alpha: float, beta: float, guard: float = 1e-12) -> dict:
    """Smallest ``k >= 1`` with ``2^(p-1) < a^((beta-alpha) k)``, in log form."""
    gap = beta - alpha
    if not gap > 0:
        raise ConfigError(f"no such k: beta - alpha = {gap} is not positive")
    lhs = (p - 1) * math.log(2)
    unit = gap * math.log(a)
    k = max(1, math.floor(lhs / unit) + 1)
    while k > 1 and (k - 1) * unit - lhs > guard:
        k -= 1
    while k * unit - lhs <= guard:
        k += 1
    margins = [abs(j * unit - lhs) for j in (k - 1, k) if j >= 1]
    return {"k": k, "in_guard_band": min(margins) <= guard, "margin": k * unit - lhs}


def min_k(p: float, a: float, alpha: float, beta: float, guard: float = 1e-12) -> int:
    return min_k_details(p, a, alpha, beta, guard)["k"]


def tail_ratio(p: float, a: float, alpha: float, beta: float, k: int) -> float:
    """``2^((p-1)/k) a^-(beta-alpha)``; below one exactly when ``k`` satisfies min_k."""
    return 2 ** ((p - 1) / k) * a ** (-(beta - alpha))


def cell_average(f, n: int, spec: CarpetSpec | None = None, quad_depth: int | None = None) -> CellFunction:
    """Per-cell means ``M_n f`` on level ``n``.

    Cell functions at level ``m >= n`` are averaged exactly over descendants.
    Point functions use equal-weight quadrature on the anchors of all depth
    ``quad_depth`` descendants.
    """
    if isinstance(f, CellFunction):
        if n > f.level:
            raise LevelMismatchError(f"cannot average a level-{f.level} function onto level {n}")
        spec = f.spec
        parent = ancestor_index(spec, f.level, n)
        sums = np.bincount(parent, f.values, minlength=spec.n_star**n)
        return CellFunction(spec, n, sums / spec.n_star ** (f.level - n))
    spec = spec or f.spec
    if quad_depth is None or quad_depth < 1:
        raise ConfigError("point functions need quad_depth >= 1")
    m = n + quad_depth
    cells = level_cells(spec, m)
    vals = f.evaluate(cells, m)
    parent = ancestor_index(spec, m, n)
    sums = np.bincount(parent, vals, minlength=spec.n_star**n)
    return CellFunction(spec, n, sums / spec.n_star**quad_depth, meta={"quad_nodes": len(cells)})
