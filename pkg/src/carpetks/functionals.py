"""Korevaar-Schoen type functionals by seeded Monte Carlo over ``mu x mu``.

Pairs ``(x, y)`` are drawn as follows: ``x`` is a depth-``m`` sample of the
self-similar measure; ``y`` is drawn by picking uniformly one of the ``k_x``
level-``L`` cells within lattice Chebyshev range ``R`` of the cell of ``x`` and
then a uniform sample inside it.  The proposal density of ``y`` w.r.t. ``mu``
is ``N_*^L / k_x``, so weighting each pair by ``k_x / N_*^L`` gives unbiased
estimates of double integrals over ``{d(x, y) < r}`` whenever the candidate
range covers the ball.

Streams are keyed by ``(seed, kind, level, chunk)``; the same seed and level
always produce the same pairs, so different functions and different
quantities evaluated at one level see common random numbers.  Chunk sums are
combined with ``math.fsum`` in chunk order, independent of thread count.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .carpet import CarpetSpec, _ball_counts, _squared_threshold, ancestor_index, cell_index, level_cells, sample_lattice
from .exceptions import BracketWidthError, ConfigError, LevelMismatchError, RejectionRateError
from .functions import CellFunction, EvalFunction
from .penergy import cell_average

_KIND_PAIRS = 1
_KIND_KS = 2
_KIND_HOLDER = 3
_KIND_POINTS = 4


def default_c(D: int) -> float:
    return 2 * math.sqrt(D) + 1 / 8


@dataclass(frozen=True)
class GeometryConstants:
    """Ball constant ``c`` with the carpet exponents used by the functionals."""

    alpha: float
    beta: float
    p: float
    c: float
    D: int = 2

    def __post_init__(self):
        if not self.c > 2 * math.sqrt(self.D):
            raise ConfigError(f"ball constant c={self.c} must exceed 2*sqrt(D)={2 * math.sqrt(self.D)}")

    @classmethod
    def for_spec(cls, spec: CarpetSpec, p: float, beta: float, c: float | None = None) -> "GeometryConstants":
        return cls(alpha=spec.alpha, beta=beta, p=p, c=default_c(spec.D) if c is None else c, D=spec.D)

    def radius(self, a: int, n: int) -> float:
        return self.c * float(a) ** (-n)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MCQuadrature:
    samples: int = 200_000
    seed: int = 0
    depth: int | None = None
    depth_margin: int = 4
    chunk: int = 50_000
    threads: int = 1
    max_rejection: float = 0.95

    def __post_init__(self):
        if self.samples < 1 or self.chunk < 1:
            raise ConfigError("samples and chunk must be positive")

    def doubled(self, seed_offset: int = 1) -> "MCQuadrature":
        """Twice the samples on an independent seed."""
        return MCQuadrature(**{**asdict(self), "samples": 2 * self.samples, "seed": self.seed + seed_offset})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Estimate:
    value: float
    std_err: float
    samples: int
    meta: dict = field(default_factory=dict)

    def scaled(self, factor: float) -> "Estimate":
        return Estimate(self.value * factor, self.std_err * abs(factor), self.samples, dict(self.meta))

    @property
    def rel_err(self) -> float:
        return self.std_err / abs(self.value) if self.value else 0.0

    def to_dict(self) -> dict:
        return {"estimate": self.value, "std_err": self.std_err, "samples": self.samples, **self.meta}


# ---------------------------------------------------------------------------
# Pair streams
# ---------------------------------------------------------------------------


def _offsets(D: int, R: int) -> np.ndarray:
    return np.array(list(itertools.product(range(-R, R + 1), repeat=D)), dtype=np.int64)


def _chunk_sizes(total: int, chunk: int) -> list[int]:
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


def _rng(seed: int, kind: int, level: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(kind, level, chunk)))


def local_pairs(spec: CarpetSpec, level: int, R: int, depth: int, size: int, rng: np.random.Generator):
    """Draw ``size`` pairs; returns ``(x, y, d2, weight)``.

    ``x`` and ``y`` are depth-``depth`` lattice indices, ``d2`` the squared
    distance in units of ``a^-depth``, ``weight = k_x / N_*^level``.
    """
    a, D = spec.a, spec.D
    shift = a ** (depth - level)
    x = sample_lattice(spec, depth, size, rng)
    offs = _offsets(D, R)
    cand = (x // shift)[:, None, :] + offs[None, :, :]
    valid = cell_index(spec, level, cand.reshape(-1, D)).reshape(size, len(offs)) >= 0
    kx = valid.sum(axis=1)
    pick = np.minimum((rng.random(size) * kx).astype(np.int64), kx - 1)
    sel = np.argmax(np.cumsum(valid, axis=1) > pick[:, None], axis=1)
    ycell = cand[np.arange(size), sel]
    y = ycell * shift + sample_lattice(spec, depth - level, size, rng)
    diff = x - y
    d2 = np.einsum("ij,ij->i", diff, diff)
    weight = kx / float(spec.n_star) ** level
    return x, y, d2, weight


def sampling_depth(n: int, resolution: int | None, quad: MCQuadrature, inner: int = 0) -> int:
    if quad.depth is not None:
        return quad.depth
    return max(resolution or 0, n + inner) + quad.depth_margin


def _resolution(funcs) -> int | None:
    levels = [f.resolution for f in funcs if f.resolution is not None]
    return max(levels) if levels else None


def _map_chunks(fn, n_chunks: int, threads: int):
    if threads <= 1 or n_chunks <= 1:
        return [fn(i) for i in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_chunks)))


class _Acc:
    """Per-bucket sums; combined across chunks with fsum in chunk order."""

    def __init__(self):
        self.s = []
        self.s2 = []

    def add(self, z):
        self.s.append(float(np.sum(z)))
        self.s2.append(float(np.sum(z * z)))

    def estimate(self, total: int, meta=None) -> Estimate:
        mean = math.fsum(self.s) / total
        var = max(math.fsum(self.s2) / total - mean * mean, 0.0)
        return Estimate(mean, math.sqrt(var / total), total, dict(meta or {}))


def pair_integrals(
    funcs: Sequence[EvalFunction],
    n: int,
    consts: GeometryConstants,
    quad: MCQuadrature,
    J: int = 0,
    spec: CarpetSpec | None = None,
) -> list[dict]:
    """Ball and annulus integrals at scale ``n`` for several functions on shared pairs.

    For each function returns ``{"ball", "annuli", "remainder"}`` where ``ball``
    estimates the integral of ``|f(x)-f(y)|^p`` over ``d < c a^-n``, ``annuli[j]``
    over ``c a^-(n+j+1) <= d < c a^-(n+j)`` for ``j = 0..J``, and ``remainder``
    over ``d < c a^-(n+J+1)``.  Buckets partition the ball sample by sample.
    """
    spec = spec or funcs[0].spec
    a, p = spec.a, consts.p
    depth = sampling_depth(n, _resolution(funcs), quad)
    scale = a**depth
    radii = [consts.radius(a, n + j) for j in range(J + 2)]
    thresholds = [_squared_threshold(Fraction(r), scale)[0] for r in radii]
    R = math.ceil(consts.c)
    sizes = _chunk_sizes(quad.samples, quad.chunk)

    def run(i):
        x, y, d2, weight = local_pairs(spec, n, R, depth, sizes[i], _rng(quad.seed, _KIND_PAIRS, n, i))
        in_ball = d2 <= thresholds[0]
        buckets = [(d2 <= thresholds[j]) & (d2 > thresholds[j + 1]) for j in range(J + 1)]
        buckets.append(d2 <= thresholds[J + 1])
        out = []
        for f in funcs:
            dz = weight * np.abs(f.evaluate(x, depth) - f.evaluate(y, depth)) ** p
            out.append([np.where(in_ball, dz, 0.0)] + [np.where(b, dz, 0.0) for b in buckets])
        return int(in_ball.sum()), out

    results = _map_chunks(run, len(sizes), quad.threads)
    accepted = sum(r[0] for r in results)
    rejection = 1 - accepted / quad.samples
    if rejection > quad.max_rejection:
        raise RejectionRateError(f"rejection rate {rejection:.3f} above ceiling {quad.max_rejection}")
    meta = {"level": n, "depth": depth, "seed": quad.seed, "acceptance": accepted / quad.samples}
    reports = []
    for k in range(len(funcs)):
        accs = [_Acc() for _ in range(J + 3)]
        for _, out in results:
            for acc, z in zip(accs, out[k]):
                acc.add(z)
        est = [acc.estimate(quad.samples, meta) for acc in accs]
        reports.append({"ball": est[0], "annuli": est[1:J + 2], "remainder": est[J + 2]})
    return reports


def ball_prefactor(consts: GeometryConstants, a: int, n: int) -> float:
    return float(a) ** ((consts.alpha + consts.beta) * n)


def functional_A(f: EvalFunction, n: int, consts: GeometryConstants, quad: MCQuadrature, spec=None) -> Estimate:
    """``a^((alpha+beta) n)`` times the double integral over ``d(x, y) < c a^-n``."""
    spec = spec or f.spec
    res = pair_integrals([f], n, consts, quad, 0, spec)[0]
    return res["ball"].scaled(ball_prefactor(consts, spec.a, n))


def annulus_A(f: EvalFunction, n: int, consts: GeometryConstants, quad: MCQuadrature, spec=None) -> Estimate:
    """Un-prefactored integral over the annulus ``c a^-(n+1) <= d < c a^-n``."""
    spec = spec or f.spec
    return pair_integrals([f], n, consts, quad, 0, spec)[0]["annuli"][0]


@dataclass
class AnnulusDecomposition:
    n: int
    J: int
    ball: Estimate
    annuli: list
    remainder: Estimate
    prefactor: float
    tail_bound: float

    @property
    def A_n(self) -> float:
        return self.prefactor * self.ball.value

    @property
    def partial_sum(self) -> float:
        return self.prefactor * math.fsum(e.value for e in self.annuli)

    @property
    def relative_gap(self) -> float:
        """``|A^(n) - prefactor * sum_j A_{n+j}| / A^(n)``; equals the remainder share."""
        return abs(self.A_n - self.partial_sum) / self.A_n if self.A_n else 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "J": self.J,
            "A_n": self.A_n,
            "partial_sum": self.partial_sum,
            "remainder": self.prefactor * self.remainder.value,
            "relative_gap": self.relative_gap,
            "tail_bound": self.tail_bound,
            "annuli": [e.value for e in self.annuli],
        }


def annulus_decomposition(
    f: EvalFunction, n: int, J: int, consts: GeometryConstants, quad: MCQuadrature, spec=None, sup_A: float | None = None
) -> AnnulusDecomposition:
    """Split the scale-``n`` ball integral into annuli ``j = 0..J`` on one pair stream.

    ``tail_bound`` bounds the prefactored remainder by
    ``sum_{j>J} a^-((alpha+beta) j) sup_l A^(l)``, with ``sup_A`` an estimate of the
    supremum (defaults to ``A^(n)`` itself).
    """
    spec = spec or f.spec
    res = pair_integrals([f], n, consts, quad, J, spec)[0]
    pref = ball_prefactor(consts, spec.a, n)
    q = float(spec.a) ** (-(consts.alpha + consts.beta))
    sup = sup_A if sup_A is not None else pref * res["ball"].value
    tail = sup * q ** (J + 1) / (1 - q)
    return AnnulusDecomposition(n, J, res["ball"], res["annuli"], res["remainder"], pref, tail)


# ---------------------------------------------------------------------------
# Korevaar-Schoen energy at an arbitrary radius
# ---------------------------------------------------------------------------


def proposal_level(r: float, c: float, a: int) -> int:
    """Largest ``L >= 0`` with ``r <= c a^-L``."""
    L = 0
    # relative slack absorbs the rounding in r = c * a**-n
    while r <= c * float(a) ** (-(L + 1)) * (1 + 1e-12):
        L += 1
    return L


def ks_E(
    f: EvalFunction,
    r: float,
    p: float,
    delta: float,
    quad: MCQuadrature,
    spec: CarpetSpec | None = None,
    c: float | None = None,
    bracket_extra: int = 3,
    max_half_width: float = 0.25,
    center_batch: int = 2048,
) -> Estimate:
    """``r^(-p delta)`` times the mean over ``x`` of the ball average of ``|f(x)-f(y)|^p``.

    Ball masses come from exact brackets at level ``L + bracket_extra``; the
    midpoint is used and the bracket half-width is folded into the error bar.
    """
    spec = spec or f.spec
    if not 0 < r <= math.sqrt(spec.D):
        raise ConfigError(f"radius must lie in (0, sqrt(D)], got {r}")
    c = default_c(spec.D) if c is None else c
    a = spec.a
    L = proposal_level(r, c, a)
    R = math.ceil(r * float(a) ** L)
    depth = sampling_depth(L, f.resolution, quad)
    scale = a**depth
    lt = _squared_threshold(Fraction(r), scale)[0]
    blevel = L + bracket_extra
    denom = float(spec.n_star**blevel)
    sizes = _chunk_sizes(quad.samples, quad.chunk)

    def run(i):
        x, y, d2, weight = local_pairs(spec, L, R, depth, sizes[i], _rng(quad.seed, _KIND_KS, L, i))
        inside = d2 <= lt
        dz = np.where(inside, weight * np.abs(f.evaluate(x, depth) - f.evaluate(y, depth)) ** p, 0.0)
        lower = np.empty(len(x))
        upper = np.empty(len(x))
        for s in range(0, len(x), center_batch):
            lo, hi, _ = _ball_counts(spec, x[s:s + center_batch], depth, Fraction(r), blevel, 1 << 30)
            lower[s:s + center_batch] = lo / denom
            upper[s:s + center_batch] = hi / denom
        mid = 0.5 * (lower + upper)
        half = 0.5 * (upper - lower) / mid
        return dz / mid, dz / upper, np.where(lower > 0, dz / np.maximum(lower, 1e-300), np.inf), float(half.max()), int(inside.sum())

    results = _map_chunks(run, len(sizes), quad.threads)
    worst = max(res[3] for res in results)
    if worst > max_half_width:
        raise BracketWidthError(f"ball bracket half-width {worst:.3f} exceeds {max_half_width}; raise bracket_extra")
    acc, acc_lo, acc_hi = _Acc(), _Acc(), _Acc()
    for zm, zl, zh, _, _ in results:
        acc.add(zm)
        acc_lo.add(zl)
        acc_hi.add(zh)
    pref = r ** (-p * delta)
    mid = acc.estimate(quad.samples)
    lo = acc_lo.estimate(quad.samples).value
    hi = acc_hi.estimate(quad.samples).value
    err = math.hypot(mid.std_err, 0.5 * (hi - lo))
    accepted = sum(res[4] for res in results)
    meta = {
        "radius": r,
        "proposal_level": L,
        "bracket_level": blevel,
        "depth": depth,
        "seed": quad.seed,
        "acceptance": accepted / quad.samples,
        "max_bracket_half_width": worst,
        "bracket_low": pref * lo,
        "bracket_high": pref * hi,
    }
    return Estimate(pref * mid.value, pref * err, quad.samples, meta)


# ---------------------------------------------------------------------------
# Poincare deficit and Holder ratio
# ---------------------------------------------------------------------------


def poincare_deficit(f, n: int, p: float, beta: float, spec: CarpetSpec | None = None, quad_depth: int | None = None) -> float:
    """``a^(beta n) sum_w int_{K_w} |f - M_n f(w)|^p dmu`` as an exact finite sum.

    Cell functions at level ``m >= n`` are summed exactly; point functions use
    the equal-weight anchor quadrature at level ``n + quad_depth``.
    """
    if isinstance(f, CellFunction):
        spec = f.spec
        if n > f.level:
            raise LevelMismatchError(f"level-{f.level} function, deficit level {n}")
        m, vals = f.level, f.values
    else:
        spec = spec or f.spec
        if quad_depth is None:
            raise ConfigError("point functions need quad_depth")
        m = n + quad_depth
        vals = f.evaluate(level_cells(spec, m), m)
    mean = np.bincount(ancestor_index(spec, m, n), vals, minlength=spec.n_star**n) / spec.n_star ** (m - n)
    dev = np.abs(vals - mean[ancestor_index(spec, m, n)]) ** p
    return float(spec.a) ** (beta * n) * float(np.sum(dev)) / spec.n_star**m


def poincare_deficit_mc(f, n: int, p: float, beta: float, quad: MCQuadrature, spec=None, quad_depth: int = 3) -> Estimate:
    """Monte-Carlo version of :func:`poincare_deficit` for cross-checking."""
    spec = spec or f.spec
    means = cell_average(f, n, spec=spec, quad_depth=None if isinstance(f, CellFunction) else quad_depth).values
    depth = sampling_depth(n, f.resolution, quad)
    sizes = _chunk_sizes(quad.samples, quad.chunk)

    def run(i):
        rng = _rng(quad.seed, _KIND_POINTS, n, i)
        x = sample_lattice(spec, depth, sizes[i], rng)
        w = cell_index(spec, n, x // spec.a ** (depth - n))
        return np.abs(f.evaluate(x, depth) - means[w]) ** p

    acc = _Acc()
    for z in _map_chunks(run, len(sizes), quad.threads):
        acc.add(z)
    return acc.estimate(quad.samples, {"level": n, "depth": depth, "seed": quad.seed}).scaled(float(spec.a) ** (beta * n))


@dataclass
class PairSet:
    x: np.ndarray
    y: np.ndarray
    depth: int


def sample_pairs(spec: CarpetSpec, size: int, depth: int, levels: Sequence[int], seed: int = 0) -> PairSet:
    """Pairs at mixed scales: for each level ``l`` in ``levels``, ``x ~ mu`` and ``y`` in a touching level-``l`` cell."""
    levels = list(levels)
    per = _chunk_sizes(size, math.ceil(size / len(levels)))
    xs, ys = [], []
    for l, s in zip(levels, per):
        x, y, _, _ = local_pairs(spec, l, 1, depth, s, _rng(seed, _KIND_HOLDER, l, 0))
        xs.append(x)
        ys.append(y)
    return PairSet(np.concatenate(xs), np.concatenate(ys), depth)


@dataclass
class HolderResult:
    sup: float
    pair: tuple
    distance: float
    pairs_used: int

    def to_dict(self) -> dict:
        return {"sup": self.sup, "pair": [list(map(float, v)) for v in self.pair], "distance": self.distance, "pairs_used": self.pairs_used}


def holder_ratio(f: EvalFunction, consts: GeometryConstants, pairs: PairSet, min_distance: float = 0.0) -> HolderResult:
    """Empirical ``sup |f(x)-f(y)|^p / d(x,y)^(beta-alpha)`` over ``pairs`` with ``d > min_distance``."""
    a = f.spec.a
    scale = float(a) ** pairs.depth
    diff = (pairs.x - pairs.y).astype(float)
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff)) / scale
    keep = d > max(min_distance, 0.0)
    if not keep.any():
        return HolderResult(0.0, ((), ()), 0.0, 0)
    idx = np.nonzero(keep)[0]
    fx = f.evaluate(pairs.x[idx], pairs.depth)
    fy = f.evaluate(pairs.y[idx], pairs.depth)
    ratio = np.abs(fx - fy) ** consts.p / d[idx] ** (consts.beta - consts.alpha)
    k = int(np.argmax(ratio))
    j = idx[k]
    return HolderResult(
        float(ratio[k]),
        (pairs.x[j] / scale, pairs.y[j] / scale),
        float(d[j]),
        len(idx),
    )
