"""Test-function suites and the empirical inequality harness.

Every inequality is reported as a table of left/right values over levels and
an empirical constant ``C_hat = max_n left/right``.  Constants that involve a
``liminf`` use the minimum over the top half of the computed level range as a
finite-range surrogate.  Each report is recomputed at doubled effort (twice the
Monte-Carlo samples on an independent seed, one extra quadrature level for
point functions) and passes when the relative change of ``C_hat`` stays under
the stability threshold.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .carpet import CarpetSpec, require_valid
from .exceptions import BudgetExceededError, ConfigError, ConvergenceError, SubcriticalError
from .functionals import (
    GeometryConstants,
    MCQuadrature,
    ball_prefactor,
    holder_ratio,
    pair_integrals,
    poincare_deficit,
    sample_pairs,
)
from .functions import CellFunction, EvalFunction, coordinate_function, face_indicator
from .graph import build_level_graph
from .penergy import SolverConfig, cell_average, estimate_rho_beta, graph_p_energy, min_k, p_capacity, tail_ratio

MEMBER = "member"
PROBE = "probe"
NEGATIVE = "negative-control"

LIMINF_NOTE = "liminf surrogate: minimum over the top half of the computed level range"


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SuiteEntry:
    name: str
    function: EvalFunction
    role: str
    provenance: str

    @property
    def resolution(self):
        return self.function.resolution

    def max_functional_level(self) -> int | None:
        """Deepest grid level at which the ball functional is evaluated."""
        if self.role == MEMBER and self.resolution is not None:
            return self.resolution - 2
        return None

    def max_energy_level(self, fallback: int) -> int:
        if isinstance(self.function, CellFunction) and self.role == MEMBER:
            return self.function.level
        return fallback


@dataclass
class FunctionSuite:
    """Named test functions, each tagged member / probe / negative control."""

    spec: CarpetSpec
    p: float
    entries: list = field(default_factory=list)

    def add(self, name: str, function: EvalFunction, role: str, provenance: str) -> None:
        if role not in (MEMBER, PROBE, NEGATIVE):
            raise ConfigError(f"unknown role {role!r}")
        if any(e.name == name for e in self.entries):
            raise ConfigError(f"duplicate suite entry {name!r}")
        self.entries.append(SuiteEntry(name, function, role, provenance))

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def get(self, name: str) -> SuiteEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def describe(self) -> list[dict]:
        return [{"name": e.name, "role": e.role, "provenance": e.provenance, "resolution": e.resolution} for e in self.entries]

    @classmethod
    def harmonic(
        cls,
        spec: CarpetSpec,
        p: float,
        levels: Sequence[int],
        solver: SolverConfig | None = None,
        composites: bool = True,
        probes: bool = True,
        controls: bool = True,
    ) -> "FunctionSuite":
        """Capacity solutions at each level plus composites, the ``x_1`` probe and a coarse control."""
        suite = cls(spec, p)
        harmonic = {}
        for m in levels:
            h = p_capacity(spec, m, p, solver).cell_function(spec)
            harmonic[m] = h
            suite.add(f"harmonic_{m}", h, MEMBER, f"p-capacity minimiser on G_{m}, p={p}")
        top = max(levels)
        if composites and harmonic:
            suite.add(f"affine_{top}", 2.0 * harmonic[top] - 0.5, MEMBER, f"2 * harmonic_{top} - 0.5")
            if len(levels) > 1:
                other = sorted(levels)[-2]
                suite.add(
                    f"sum_{top}_{other}",
                    harmonic[top] + harmonic[other].refine(top),
                    MEMBER,
                    f"harmonic_{top} + harmonic_{other}",
                )
        if probes:
            suite.add("x1", coordinate_function(spec, 1), PROBE, "coordinate function x_1")
        if controls:
            suite.add("coarse_indicator", face_indicator(spec, 1, 1), NEGATIVE, "indicator of the level-1 slab i_1 = 0")
        return suite


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class InequalityReport:
    inequality: str
    function: str
    role: str
    rows: list
    C_hat: float
    C_hat_doubled: float
    threshold: float
    trivial: bool = False
    growth_flag: bool = False
    surrogate: str | None = None
    extra: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def stability(self) -> float:
        if self.C_hat == 0 and self.C_hat_doubled == 0:
            return 0.0
        if not (math.isfinite(self.C_hat) and math.isfinite(self.C_hat_doubled)) or self.C_hat == 0:
            return math.inf
        return abs(self.C_hat_doubled - self.C_hat) / abs(self.C_hat)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.C_hat) and math.isfinite(self.C_hat_doubled)

    @property
    def passed(self) -> bool:
        if self.trivial:
            return True
        return self.finite and self.stability < self.threshold and not self.growth_flag

    def to_dict(self) -> dict:
        return {
            "inequality": self.inequality,
            "function": self.function,
            "role": self.role,
            "rows": self.rows,
            "C_hat": _json_float(self.C_hat),
            "C_hat_doubled": _json_float(self.C_hat_doubled),
            "stability": _json_float(self.stability),
            "threshold": self.threshold,
            "passed": self.passed,
            "trivial": self.trivial,
            "growth_flag": self.growth_flag,
            "surrogate": self.surrogate,
            "extra": self.extra,
            "config": self.config,
        }


def _json_float(x):
    if x is None:
        return None
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _ratio(left: float, right: float) -> float | None:
    if left == 0 and right == 0:
        return None
    if right == 0:
        return math.inf
    return left / right


def _max_ratio(pairs) -> tuple[float, bool]:
    """``(max left/right, all rows trivially zero)``."""
    ratios = [_ratio(l, r) for l, r in pairs]
    ratios = [q for q in ratios if q is not None]
    if not ratios:
        return 0.0, True
    return max(ratios), False


def top_half(levels: Sequence[int]) -> list[int]:
    levels = sorted(levels)
    return levels[len(levels) // 2:]


def growth_flag(values: Sequence[float], errors: Sequence[float], factor: float = 2.0, nsigma: float = 2.0) -> bool:
    """Strictly increasing beyond noise at every step and overall growth by ``factor``."""
    if len(values) < 2 or values[0] <= 0:
        return False
    for (v0, e0), (v1, e1) in zip(zip(values, errors), zip(values[1:], errors[1:])):
        if v1 - v0 <= nsigma * math.hypot(e0, e1):
            return False
    return values[-1] / values[0] >= factor


def _pairwise_report(
    inequality: str,
    entry: SuiteEntry,
    levels: Sequence[int],
    left: Callable[[int, int], float],
    right: Callable[[int, int], float],
    threshold: float,
    surrogate: str | None = None,
    config: dict | None = None,
    extra: dict | None = None,
) -> InequalityReport:
    rows, base, doubled = [], [], []
    for n in levels:
        l0, r0, l1, r1 = left(n, 0), right(n, 0), left(n, 1), right(n, 1)
        base.append((l0, r0))
        doubled.append((l1, r1))
        rows.append({"n": n, "left": l0, "right": r0, "ratio": _json_float(_ratio(l0, r0)), "left_doubled": l1, "right_doubled": r1})
    c0, trivial = _max_ratio(base)
    c1, _ = _max_ratio(doubled)
    return InequalityReport(inequality, entry.name, entry.role, rows, c0, c1, threshold, trivial, False, surrogate, extra or {}, config or {})


# ---------------------------------------------------------------------------
# Cached quantity tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HarnessConfig:
    p: float = 2.0
    member_levels: tuple = (3, 4, 5, 6, 7)
    n_range: tuple = (2, 5)
    rho_levels: tuple = (3, 4, 5)
    samples: int = 100_000
    seed: int = 0
    c: float | None = None
    quad_depth: int = 3
    max_quad_level: int = 7
    stability_threshold: float = 0.10
    growth_factor: float = 2.0
    tail_tolerance: float = 0.01
    tail_policy: str = "report"
    holder_pairs: int = 50_000
    eps_curve: tuple = (0.1, 0.25, 0.5, 0.9)
    chunk: int = 50_000
    threads: int = 1

    def __post_init__(self):
        if len(self.n_range) != 2 or self.n_range[0] >= self.n_range[1]:
            raise ConfigError(f"n_range must be a (lo, hi) pair spanning at least two levels, got {self.n_range}")
        if self.n_range[0] < 1:
            raise ConfigError("n_range must start at level 1 or above")
        if not self.member_levels:
            raise ConfigError("member_levels must be non-empty")
        if self.tail_policy not in ("report", "strict"):
            raise ConfigError("tail_policy must be 'report' or 'strict'")
        if self.stability_threshold <= 0:
            raise ConfigError("stability_threshold must be positive")

    @property
    def levels(self) -> list[int]:
        return list(range(self.n_range[0], self.n_range[1] + 1))

    def quadrature(self, effort: int = 0) -> MCQuadrature:
        base = MCQuadrature(samples=self.samples, seed=self.seed, chunk=self.chunk, threads=self.threads)
        return base.doubled() if effort else base

    def to_dict(self) -> dict:
        return asdict(self)


class QuantityCache:
    """Memoised per-function tables shared by all verifiers of a run.

    ``effort`` 0 is the base computation; 1 is the doubled-effort replay.
    """

    def __init__(self, spec: CarpetSpec, consts: GeometryConstants, rho: float, config: HarnessConfig):
        self.spec = spec
        self.consts = consts
        self.rho = rho
        self.config = config
        self._graphs = {}
        self._energy = {}
        self._deficit = {}
        self._ball = {}

    def graph(self, level: int):
        if level not in self._graphs:
            self._graphs[level] = build_level_graph(self.spec, level, check_spec=False, check_connected=False)
        return self._graphs[level]

    def quad_depth(self, level: int, effort: int) -> int:
        """Quadrature depth for point functions, kept within ``max_quad_level``."""
        return max(1, min(self.config.quad_depth + effort, self.config.max_quad_level - level))

    def _average(self, f, level, effort):
        if isinstance(f, CellFunction):
            if level > f.level:
                return f.refine(level)
            return cell_average(f, level)
        return cell_average(f, level, spec=self.spec, quad_depth=self.quad_depth(level, effort))

    def energy(self, f, level: int, effort: int = 0) -> float:
        """Rescaled graph energy ``rho^l E^{G_l}(M_l f)``."""
        key = (id(f), level, effort if not isinstance(f, CellFunction) else 0)
        if key not in self._energy:
            self._energy[key] = graph_p_energy(self.graph(level), self._average(f, level, effort), self.consts.p, rho=self.rho)
        return self._energy[key]

    def deficit(self, f, level: int, effort: int = 0) -> float:
        key = (id(f), level, effort if not isinstance(f, CellFunction) else 0)
        if key not in self._deficit:
            if isinstance(f, CellFunction) and level > f.level:
                self._deficit[key] = 0.0
            else:
                self._deficit[key] = poincare_deficit(
                    f, level, self.consts.p, self.consts.beta, spec=self.spec, quad_depth=self.quad_depth(level, effort)
                )
        return self._deficit[key]

    def prime(self, funcs: Sequence[EvalFunction], levels: Sequence[int], effort: int = 0) -> None:
        """Ball and annulus integrals for all ``funcs`` on one shared stream per level."""
        quad = self.config.quadrature(effort)
        for n in levels:
            todo = [f for f in funcs if (id(f), n, effort) not in self._ball]
            if not todo:
                continue
            res = pair_integrals(todo, n, self.consts, quad, 0, self.spec)
            pref = ball_prefactor(self.consts, self.spec.a, n)
            for f, r in zip(todo, res):
                self._ball[(id(f), n, effort)] = (r["ball"].scaled(pref), r["annuli"][0])

    def A(self, f, n: int, effort: int = 0):
        """Prefactored ball functional estimate at grid level ``n``."""
        self.prime([f], [n], effort)
        return self._ball[(id(f), n, effort)][0]

    def annulus(self, f, n: int, effort: int = 0):
        """Un-prefactored annulus integral at level ``n``."""
        self.prime([f], [n], effort)
        return self._ball[(id(f), n, effort)][1]


def _context(spec, f, p, rho, consts, config, cache):
    if cache is not None:
        return cache
    config = config or HarnessConfig(p=p)
    if consts is None:
        raise ConfigError("geometry constants are required")
    return QuantityCache(spec or f.spec, consts, rho if rho is not None else 1.0, config)


def _entry(f, name=None, role=MEMBER) -> SuiteEntry:
    if isinstance(f, SuiteEntry):
        return f
    return SuiteEntry(name or getattr(f, "name", type(f).__name__), f, role, "ad hoc")


def _admissible(entry: SuiteEntry, levels: Sequence[int]) -> list[int]:
    top = entry.max_functional_level()
    return [n for n in levels if top is None or n <= top]


# ---------------------------------------------------------------------------
# Verifiers
# ---------------------------------------------------------------------------


def verify_weak_monotonicity(
    f,
    p: float,
    rho: float,
    n_range: Sequence[int],
    spec: CarpetSpec | None = None,
    config: HarnessConfig | None = None,
    cache: QuantityCache | None = None,
) -> InequalityReport:
    """Ratio ``max_n E_n / min_{n > n_min} E_n`` of rescaled energies ``E_n = rho^n E^{G_n}(M_n f)``."""
    entry = _entry(f)
    fn = entry.function
    spec = spec or fn.spec
    if cache is None:
        config = config or HarnessConfig(p=p)
        consts = GeometryConstants.for_spec(spec, p, spec.alpha + 0.1)
        cache = QuantityCache(spec, consts, rho, config)
    levels = list(n_range)
    if not levels:
        raise ConfigError("empty level range")
    if isinstance(fn, CellFunction) and entry.role == MEMBER:
        levels = [n for n in levels if n <= fn.level]
    cfg = cache.config

    def table(effort):
        return [cache.energy(fn, n, effort) for n in levels]

    t0, t1 = table(0), table(1)

    def const(t):
        later = t[1:] if len(t) > 1 else t
        return _max_ratio([(max(t), min(later))])

    c0, trivial = const(t0)
    c1, _ = const(t1)
    rows = [{"n": n, "energy": e0, "energy_doubled": e1} for n, e0, e1 in zip(levels, t0, t1)]
    flag = growth_flag(t0, [0.0] * len(t0), cfg.growth_factor)
    return InequalityReport(
        "weak_monotonicity", entry.name, entry.role, rows, c0, c1, cfg.stability_threshold, trivial, flag,
        config={"rho": cache.rho, "p": p, "levels": levels, **cfg.to_dict()},
    )


def verify_theorem_main(
    f,
    p: float,
    consts: GeometryConstants,
    n_range: Sequence[int],
    quad: MCQuadrature | None = None,
    config: HarnessConfig | None = None,
    cache: QuantityCache | None = None,
) -> InequalityReport:
    """``sup_n A^(n) <= C liminf A^(n)`` with the top-half liminf surrogate."""
    entry = _entry(f)
    fn = entry.function
    if cache is None:
        config = config or HarnessConfig(p=p, samples=quad.samples if quad else HarnessConfig.samples, seed=quad.seed if quad else 0)
        cache = QuantityCache(fn.spec, consts, 1.0, config)
    levels = _admissible(entry, list(n_range))
    if not levels:
        raise ConfigError("empty level range")
    cfg = cache.config
    cache.prime([fn], levels, 0)
    cache.prime([fn], levels, 1)
    est = {e: [cache.A(fn, n, e) for n in levels] for e in (0, 1)}
    upper = top_half(levels)

    def const(e):
        vals = [x.value for x in est[e]]
        low = min(v for n, v in zip(levels, vals) if n in upper)
        return _max_ratio([(max(vals), low)])

    c0, trivial = const(0)
    c1, _ = const(1)
    rows = [
        {"n": n, "A": a0.value, "std_err": a0.std_err, "A_doubled": a1.value, "std_err_doubled": a1.std_err, "acceptance": a0.meta.get("acceptance")}
        for n, a0, a1 in zip(levels, est[0], est[1])
    ]
    flag = growth_flag([x.value for x in est[0]], [x.std_err for x in est[0]], cfg.growth_factor)
    return InequalityReport(
        "theorem_main", entry.name, entry.role, rows, c0, c1, cfg.stability_threshold, trivial, flag, LIMINF_NOTE,
        extra={"margin": _margin(fn, levels)},
        config={"consts": consts.to_dict(), "levels": levels, **cfg.to_dict()},
    )


def _margin(fn, levels):
    return None if fn.resolution is None else fn.resolution - max(levels)


def weighted_annulus_sum(cache: QuantityCache, fn, n: int, top: int, k: int, effort: int = 0) -> dict:
    """Truncated ``a^((alpha+beta) n) sum_{j=0}^{top-n} (2^((p-1)/k) a^(2 alpha))^j A_{n+j}``.

    Also reports the partial sums and a bound on the dropped tail relative to the
    truncated sum, using the geometric ratio ``2^((p-1)/k) a^-(beta-alpha)``.
    """
    c, a = cache.consts, cache.spec.a
    w = 2.0 ** ((c.p - 1) / k) * float(a) ** (2 * c.alpha)
    q = tail_ratio(c.p, a, c.alpha, c.beta, k)
    pref = ball_prefactor(c, a, n)
    terms = [w**j * cache.annulus(fn, n + j, effort).value for j in range(top - n + 1)]
    partial = list(np.cumsum(terms) * pref)
    total = partial[-1]
    sup_A = max(cache.A(fn, l, effort).value for l in range(n, top + 1))
    J = top - n
    tail = sup_A * q ** (J + 1) / (1 - q)
    rel = tail / total if total > 0 else (0.0 if tail == 0 else math.inf)
    return {"value": total, "partial_sums": partial, "J": J, "tail_bound": tail, "tail_relative": rel, "ratio": q}


def verify_propositions(
    f,
    p: float,
    consts: GeometryConstants,
    k: int,
    n_range: Sequence[int],
    quad: MCQuadrature | None = None,
    rho: float = 1.0,
    config: HarnessConfig | None = None,
    cache: QuantityCache | None = None,
    holder: bool = True,
) -> list[InequalityReport]:
    """Ball, deficit and energy comparisons plus the Poincare, Holder and ball-vs-energy checks.

    Reports, in order: ``ball_vs_sup_energy`` (``A_n`` against ``sup_{l >= n}``
    of the rescaled energies), ``deficit_vs_annulus_series`` and
    ``energy_vs_annulus_series`` (against the weighted annulus series),
    ``liminf_energy_vs_ball`` (with an epsilon curve), ``poincare``,
    ``ball_vs_energy`` and, optionally, ``holder``.
    """
    entry = _entry(f)
    fn = entry.function
    spec = fn.spec
    q = tail_ratio(p, spec.a, consts.alpha, consts.beta, k)
    if not 0 < q < 1 or k != min_k(p, spec.a, consts.alpha, consts.beta):
        raise ConfigError(f"k={k} is inconsistent with p={p}, a={spec.a}, beta-alpha={consts.beta - consts.alpha}")
    if cache is None:
        config = config or HarnessConfig(p=p, samples=quad.samples if quad else HarnessConfig.samples, seed=quad.seed if quad else 0)
        cache = QuantityCache(spec, consts, rho, config)
    cfg = cache.config
    levels = _admissible(entry, list(n_range))
    if not levels:
        raise ConfigError("empty level range")
    top = max(levels)
    e_top = entry.max_energy_level(top + 1)
    e_levels = list(range(min(levels), e_top + 1))
    cache.prime([fn], levels, 0)
    cache.prime([fn], levels, 1)
    conf = {"consts": consts.to_dict(), "k": k, "levels": levels, "energy_levels": e_levels, "rho": cache.rho, **cfg.to_dict()}

    A = lambda n, e: cache.A(fn, n, e).value  # noqa: E731
    E = lambda n, e: cache.energy(fn, n, e)  # noqa: E731
    P = lambda n, e: cache.deficit(fn, n, e)  # noqa: E731
    series = {(n, e): weighted_annulus_sum(cache, fn, n, top, k, e) for n in levels for e in (0, 1)}

    worst_tail = max(s["tail_relative"] for s in series.values())
    certified = bool(worst_tail <= cfg.tail_tolerance)
    if not certified and cfg.tail_policy == "strict":
        raise BudgetExceededError(
            f"weighted-series tail bound {worst_tail:.3g} exceeds {cfg.tail_tolerance}; more annulus levels are needed"
        )
    tail_info = {
        "tail_ratio": q,
        "tail_relative_max": worst_tail,
        "tail_certified": certified,
        "note": "truncated weighted sums; uncertified tails make the reported constants upper estimates",
    }

    reports = [
        _pairwise_report(
            "ball_vs_sup_energy", entry, levels, A, lambda n, e: max(E(l, e) for l in e_levels if l >= n), cfg.stability_threshold, config=conf
        ),
        _pairwise_report(
            "deficit_vs_annulus_series", entry, levels, P, lambda n, e: series[(n, e)]["value"], cfg.stability_threshold,
            config=conf, extra={**tail_info, "series": {str(n): series[(n, 0)] for n in levels}},
        ),
        _pairwise_report(
            "energy_vs_annulus_series", entry, levels, E, lambda n, e: series[(n, e)]["value"], cfg.stability_threshold,
            config=conf, extra={**tail_info, "series": {str(n): series[(n, 0)] for n in levels}},
        ),
    ]

    upper = top_half(levels)
    liminf_E = lambda e: min(E(n, e) for n in upper)  # noqa: E731
    liminf_A = lambda e: min(A(n, e) for n in upper)  # noqa: E731
    c0, trivial = _max_ratio([(liminf_E(0), liminf_A(0))])
    c1, _ = _max_ratio([(liminf_E(1), liminf_A(1))])
    eps_curve = {}
    for eps in cfg.eps_curve:
        vals = [(max(E(n, 0) - eps * liminf_E(0), 0.0), A(n, 0)) for n in levels]
        eps_curve[str(eps)] = _json_float(_max_ratio(vals)[0])
    reports.append(
        InequalityReport(
            "liminf_energy_vs_ball", entry.name, entry.role,
            [{"levels": upper, "liminf_energy": liminf_E(0), "liminf_A": liminf_A(0), "liminf_energy_doubled": liminf_E(1), "liminf_A_doubled": liminf_A(1)}],
            c0, c1, cfg.stability_threshold, trivial, surrogate=LIMINF_NOTE, extra={"eps_curve": eps_curve}, config=conf,
        )
    )

    def liminf_after(n, e):
        return min(E(l, e) for l in top_half([l for l in e_levels if l >= n]))

    reports.append(
        _pairwise_report("poincare", entry, levels, P, liminf_after, cfg.stability_threshold, LIMINF_NOTE, conf)
    )
    reports.append(
        _pairwise_report("ball_vs_energy", entry, levels, A, lambda n, e: E(n, e) + P(n, e), cfg.stability_threshold, config=conf)
    )
    if holder:
        reports.append(_holder_report(entry, consts, levels, cache, conf))
    return reports


def _holder_report(entry: SuiteEntry, consts, levels, cache: QuantityCache, conf) -> InequalityReport:
    fn = entry.function
    cfg = cache.config
    res = fn.resolution
    pair_levels = list(range(1, (res - 1 if res is not None else max(levels) + 1)))
    depth = (res if res is not None else max(levels) + 2) + 2
    min_d = float(cache.spec.a) ** (-(res - 2)) if res is not None else 0.0
    sup_A = lambda e: max(cache.A(fn, n, e).value for n in levels)  # noqa: E731
    out = []
    for e in (0, 1):
        pairs = sample_pairs(cache.spec, cfg.holder_pairs * (2 if e else 1), depth, pair_levels, seed=cfg.seed + e)
        out.append((holder_ratio(fn, consts, pairs, min_distance=min_d), sup_A(e)))
    c0, trivial = _max_ratio([(out[0][0].sup, out[0][1])])
    c1, _ = _max_ratio([(out[1][0].sup, out[1][1])])
    rows = [{"holder_sup": out[0][0].sup, "sup_A": out[0][1], "holder_sup_doubled": out[1][0].sup, "sup_A_doubled": out[1][1]}]
    return InequalityReport(
        "holder", entry.name, entry.role, rows, c0, c1, cfg.stability_threshold, trivial,
        extra={"maximiser": out[0][0].to_dict(), "min_distance": min_d, "pair_levels": pair_levels}, config=conf,
    )


# ---------------------------------------------------------------------------
# Full run and bundle output
# ---------------------------------------------------------------------------


@dataclass
class SuiteRun:
    spec: CarpetSpec
    config: HarnessConfig
    rho: dict
    k: int
    consts: GeometryConstants
    suite: FunctionSuite
    reports: list

    def member_reports(self) -> list[InequalityReport]:
        return [r for r in self.reports if r.role == MEMBER]

    @property
    def passed(self) -> bool:
        members_ok = all(r.passed for r in self.member_reports())
        controls_flagged = all(
            r.growth_flag for r in self.reports if r.role == NEGATIVE and r.inequality == "theorem_main"
        )
        return members_ok and controls_flagged

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "supercritical": self.rho["supercritical"],
            "rho_hat": self.rho["rho_hat"],
            "beta_hat": self.rho["beta_hat"],
            "alpha": self.spec.alpha,
            "k": self.k,
            "tail_ratio": tail_ratio(self.config.p, self.spec.a, self.consts.alpha, self.consts.beta, self.k),
            "reports": len(self.reports),
            "member_failures": [f"{r.inequality}:{r.function}" for r in self.member_reports() if not r.passed],
            "negative_controls_flagged": [
                r.function for r in self.reports if r.role == NEGATIVE and r.growth_flag
            ],
        }

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "harness": self.config.to_dict(),
            "rho": self.rho,
            "k": self.k,
            "consts": self.consts.to_dict(),
            "suite": self.suite.describe(),
            "summary": self.summary(),
        }

    def write_bundle(self, outdir: str, header: dict | None = None) -> list[str]:
        """One JSON per report, ``index.csv``, ``plot_data.csv`` and ``summary.json``."""
        from .io import write_json

        os.makedirs(outdir, exist_ok=True)
        paths = []
        for r in self.reports:
            path = os.path.join(outdir, f"{r.inequality}__{r.function}.json")
            write_json(path, {**(header or {}), "report": r.to_dict()})
            paths.append(path)
        index = os.path.join(outdir, "index.csv")
        with open(index, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["inequality", "function", "role", "C_hat", "stability", "pass"])
            for r in self.reports:
                w.writerow([r.inequality, r.function, r.role, repr(r.C_hat), repr(r.stability), int(r.passed)])
        plot = os.path.join(outdir, "plot_data.csv")
        with open(plot, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["function", "quantity", "n", "value"])
            for r in self.reports:
                for row in r.rows:
                    if "n" not in row:
                        continue
                    for key in sorted(row):
                        if key == "n" or not isinstance(row[key], (int, float)):
                            continue
                        w.writerow([r.function, f"{r.inequality}.{key}", row["n"], repr(float(row[key]))])
        summary = os.path.join(outdir, "summary.json")
        write_json(summary, {**(header or {}), **self.to_dict()})
        return paths + [index, plot, summary]


def run_suite(
    spec: CarpetSpec,
    p: float,
    config: HarnessConfig | None = None,
    solver: SolverConfig | None = None,
    log: Callable[[str], None] | None = None,
) -> SuiteRun:
    """Estimate the rescaling factor, build the suite and run every verifier."""
    require_valid(spec)
    config = config or HarnessConfig(p=p)
    if config.p != p:
        config = HarnessConfig(**{**config.to_dict(), "p": p})
    log = log or (lambda msg: None)
    base = solver or SolverConfig(p=p)
    rho_solver = SolverConfig(**{**base.to_dict(), "p": p, "on_failure": "accept"})
    est = estimate_rho_beta(spec, p, config.rho_levels, rho_solver)
    log(f"rho_hat={est.rho_hat:.6f} beta_hat={est.beta_hat:.6f} converged={est.converged}")
    if not est.supercritical or est.beta_hat <= spec.alpha:
        note = "" if est.all_converged else " (some capacity solves stalled; their energies are upper bounds)"
        raise SubcriticalError(
            f"rho_hat={est.rho_hat:.6f} <= 1 for p={p}{note}; the harness needs rho > 1, "
            "which is equivalent to the bound p > Ahlfors-regular conformal dimension"
        )
    if not est.all_converged:
        bad = [n for n, ok in zip(est.levels, est.converged) if not ok]
        raise ConvergenceError(f"capacity solves at levels {bad} did not converge for p={p}")
    k = min_k(p, spec.a, spec.alpha, est.beta_hat)
    consts = GeometryConstants.for_spec(spec, p, est.beta_hat, config.c)
    suite = FunctionSuite.harmonic(spec, p, config.member_levels, solver)
    log(f"suite: {', '.join(e.name for e in suite)}")
    cache = QuantityCache(spec, consts, est.rho_hat, config)
    for effort in (0, 1):
        for n in config.levels:
            funcs = [e.function for e in suite if n in _admissible(e, [n])]
            cache.prime(funcs, [n], effort)
    reports = []
    for entry in suite:
        levels = _admissible(entry, config.levels)
        wm_levels = config.levels
        if entry.role == MEMBER and isinstance(entry.function, CellFunction):
            wm_levels = [n for n in wm_levels if n <= entry.function.level]
        if len(wm_levels) >= 2:
            reports.append(verify_weak_monotonicity(entry, p, est.rho_hat, wm_levels, spec, cache=cache))
        if len(levels) >= 2:
            reports.append(verify_theorem_main(entry, p, consts, levels, cache=cache))
            if entry.role != NEGATIVE:
                reports.extend(verify_propositions(entry, p, consts, k, levels, rho=est.rho_hat, cache=cache))
        log(f"{entry.name}: done")
    return SuiteRun(spec, config, est.to_dict(), k, consts, suite, reports)
