"""Command-line entry point: ``carpetks <command> [options]``.

Commands: validate, graph, solve, rho, functional, verify, replay.  Every JSON
artifact embeds the package version and the full command configuration, so
``carpetks replay ARTIFACT --out DIR`` regenerates it.  Exit codes: 0 success,
1 validation/configuration error, 2 numerical failure (including a verify run
that misses its stability threshold), 3 budget exceeded.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from . import __version__
from .carpet import CarpetSpec, ahlfors_scan, level_cells, menger_sponge, standard_carpet, validate_carpet
from .exceptions import CarpetKSError, ConfigError
from .functionals import (
    GeometryConstants,
    MCQuadrature,
    annulus_A,
    functional_A,
    holder_ratio,
    ks_E,
    poincare_deficit,
    sample_pairs,
)
from .functions import coordinate_function, face_indicator
from .graph import build_level_graph
from .io import read_json, write_csv, write_json
from .penergy import SolverConfig, estimate_rho_beta, min_k, p_capacity
from .verify import HarnessConfig, run_suite

log = logging.getLogger("carpetks")

COMMANDS = ("validate", "graph", "solve", "rho", "functional", "verify")


class _Parser(argparse.ArgumentParser):
    """Argument errors print usage and exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _level_token(text: str) -> list[int]:
    """``"4"`` or an inclusive range ``"3:5"``."""
    try:
        if ":" in text:
            lo, hi = (int(t) for t in text.split(":"))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or LO:HI range, got {text!r}") from None


class _Levels(argparse.Action):
    """Flatten ``--levels 3 4 5`` / ``--levels 3:5`` into one sorted list."""

    def __call__(self, parser, namespace, values, option_string=None):
        flat = sorted({n for chunk in values for n in chunk})
        setattr(namespace, self.dest, flat)


def _add_levels(p, flag, default, help=None):
    p.add_argument(flag, type=_level_token, nargs="+", action=_Levels, default=default, metavar="N|LO:HI", help=help)


def _add_out(p):
    p.add_argument("--out", default="out", help="output directory (default ./out)")


def _add_spec_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--carpet", choices=("standard", "menger"), default="standard", help="built-in carpet")
    g.add_argument("--spec", metavar="FILE", help="carpet JSON {D, a, S}")


def _add_solver_args(p):
    p.add_argument("-p", "--p", dest="p", type=float, default=2.0, help="energy exponent (default 2)")
    p.add_argument("--method", choices=("irls", "damped-newton"), default="irls")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--accept-stalled", action="store_true", help="keep stalled solves (flagged converged=false) instead of failing")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carpetks", description="Generalized Sierpinski carpet energies and functionals.")
    parser.add_argument("--version", action="version", version=f"carpetks {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check the four carpet conditions")
    _add_spec_args(p)
    p.add_argument("--out", help="write validation.json here")

    p = sub.add_parser("graph", help="build G_n and write its edge list")
    _add_spec_args(p)
    p.add_argument("-n", "--n", "--level", dest="level", type=int, required=True)
    _add_out(p)

    p = sub.add_parser("solve", help="p-capacity solve between the axis-1 faces")
    _add_spec_args(p)
    _add_solver_args(p)
    p.add_argument("-n", "--n", "--level", dest="level", type=int, required=True)
    _add_out(p)

    p = sub.add_parser("rho", help="capacity ratios, rho_hat and beta_hat")
    _add_spec_args(p)
    _add_solver_args(p)
    _add_levels(p, "--levels", [3, 4, 5])
    _add_out(p)

    p = sub.add_parser("functional", help="Monte-Carlo functionals of a test function")
    _add_spec_args(p)
    _add_solver_args(p)
    p.add_argument("--quantity", choices=("A", "annulus", "ks", "poincare", "holder", "ahlfors"), default="A")
    p.add_argument("--function", default="harmonic:6", help="harmonic:M, x1 or indicator (default harmonic:6)")
    _add_levels(p, "--levels", [2, 3, 4])
    p.add_argument("--radii", type=float, nargs="+", default=None, help="radii for ks / ahlfors")
    p.add_argument("--beta", type=float, default=None, help="walk exponent; estimated from capacities when omitted")
    _add_levels(p, "--rho-levels", [3, 4, 5])
    p.add_argument("--c", type=float, default=None, help="ball constant (default 2 sqrt(D) + 1/8)")
    p.add_argument("--delta", type=float, default=None, help="ks exponent (default beta / p)")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    _add_out(p)

    p = sub.add_parser("verify", help="run the inequality harness and write a bundle")
    _add_spec_args(p)
    p.add_argument("-p", "--p", dest="p", type=float, default=2.0)
    _add_levels(p, "--n-range", [2, 3, 4, 5], help="LO HI or LO:HI")
    _add_levels(p, "--member-levels", [3, 4, 5, 6, 7])
    _add_levels(p, "--rho-levels", [3, 4, 5])
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.10, help="stability threshold")
    p.add_argument("--tail-policy", choices=("report", "strict"), default="report")
    p.add_argument("--threads", type=int, default=1)
    _add_out(p)

    p = sub.add_parser("replay", help="re-run the command embedded in an artifact")
    p.add_argument("artifact")
    _add_out(p)
    return parser


# ---------------------------------------------------------------------------


def _spec(args) -> CarpetSpec:
    if getattr(args, "spec", None):
        return CarpetSpec.from_json(args.spec)
    return menger_sponge() if args.carpet == "menger" else standard_carpet()


def _config(args) -> dict:
    """Everything that determines the output; ``out`` and verbosity are excluded."""
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "verbose")}
    if cfg.get("spec"):
        cfg["carpet_spec"] = _spec(args).to_dict()
        cfg["spec"] = None
    return cfg


def _header(args) -> dict:
    return {"version": __version__, "config": _config(args)}


def _solver(args) -> SolverConfig:
    return SolverConfig(p=args.p, tol=args.tol, grad_tol=args.grad_tol, max_iter=args.max_iter, method=args.method,
                        on_failure="accept" if getattr(args, "accept_stalled", False) else "raise")


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_validate(args) -> int:
    spec = _spec(args)
    rep = validate_carpet(spec)
    payload = {**_header(args), "spec": spec.to_dict(), "alpha": spec.alpha, "report": rep.to_dict()}
    if args.out:
        write_json(os.path.join(_out(args), "validation.json"), payload)
    print(" ".join(f"{k}={v}" for k, v in rep.to_dict().items() if isinstance(v, bool)))
    return 0 if rep.valid else 1


def cmd_graph(args) -> int:
    spec = _spec(args)
    g = build_level_graph(spec, args.level)
    out = _out(args)
    g.to_csv(os.path.join(out, f"edges_n{args.level}.csv"))
    write_json(os.path.join(out, f"graph_n{args.level}.json"), {**_header(args), **g.header()})
    print(" ".join(f"{k}={v}" for k, v in g.header().items()))
    return 0


def cmd_solve(args) -> int:
    spec = _spec(args)
    t0 = time.perf_counter()
    res = p_capacity(spec, args.level, args.p, _solver(args))
    log.info("solve wall time %.3fs", time.perf_counter() - t0)
    out = _out(args)
    cells = level_cells(spec, args.level)
    rows = [[i, *map(int, c), v] for i, (c, v) in enumerate(zip(cells, res.solution.values))]
    write_csv(os.path.join(out, f"solution_n{args.level}.csv"), ["index", *[f"i{k + 1}" for k in range(spec.D)], "value"], rows)
    report = {**res.solution.report(), "capacity": res.capacity, "level": args.level, "wall_time": None}
    write_json(os.path.join(out, f"solve_n{args.level}.json"), {**_header(args), "report": report})
    print(f"capacity={res.capacity!r} iterations={res.solution.iterations} residual={res.solution.residual:.3e}")
    return 0


def cmd_rho(args) -> int:
    spec = _spec(args)
    est = estimate_rho_beta(spec, args.p, args.levels, _solver(args), on_level=lambda r: log.info("level %d cap=%r", r.level, r.capacity))
    out = _out(args)
    rows = [[n, cap, (est.capacities[i - 1] / cap if i else "")] for i, (n, cap) in enumerate(zip(est.levels, est.capacities))]
    write_csv(os.path.join(out, "capacity.csv"), ["n", "cap", "ratio"], rows)
    payload = {**_header(args), **est.to_dict()}
    if est.beta_hat > spec.alpha:
        payload["k"] = min_k(args.p, spec.a, spec.alpha, est.beta_hat)
    write_json(os.path.join(out, "rho.json"), payload)
    print(f"rho_hat={est.rho_hat!r} beta_hat={est.beta_hat!r} supercritical={est.supercritical} converged={est.all_converged}")
    return 0


def _test_function(spec, args):
    name = args.function
    if name.startswith("harmonic:"):
        m = int(name.split(":", 1)[1])
        return p_capacity(spec, m, args.p, _solver(args)).cell_function(spec)
    if name == "x1":
        return coordinate_function(spec, 1)
    if name == "indicator":
        return face_indicator(spec, 1, 1)
    raise ConfigError(f"unknown function {name!r}; use harmonic:M, x1 or indicator")


def cmd_functional(args) -> int:
    spec = _spec(args)
    beta = args.beta
    if beta is None:
        beta = estimate_rho_beta(spec, args.p, args.rho_levels, _solver(args)).beta_hat
    consts = GeometryConstants.for_spec(spec, args.p, beta, args.c)
    quad = MCQuadrature(samples=args.samples, seed=args.seed, threads=args.threads)
    rows = []
    q = args.quantity
    if q == "ahlfors":
        radii = args.radii or [3.0**-k for k in range(1, 5)]
        scan = ahlfors_scan(spec, args.samples, radii, level=max(args.levels), seed=args.seed)
        for t in scan.table:
            rows.append(["ahlfors_min_ratio", t["radius"], t["min_ratio"], "", args.samples, args.seed, consts.c, args.p, beta])
            rows.append(["ahlfors_max_ratio", t["radius"], t["max_ratio"], "", args.samples, args.seed, consts.c, args.p, beta])
        extra = scan.to_dict()
    else:
        f = _test_function(spec, args)
        extra = {}
        if q in ("A", "annulus"):
            fn = functional_A if q == "A" else annulus_A
            for n in args.levels:
                e = fn(f, n, consts, quad, spec)
                rows.append([q, n, e.value, e.std_err, e.samples, args.seed, consts.c, args.p, beta])
        elif q == "ks":
            delta = args.delta if args.delta is not None else beta / args.p
            for r in args.radii or [consts.radius(spec.a, n) for n in args.levels]:
                e = ks_E(f, r, args.p, delta, quad, spec, consts.c)
                rows.append(["ks", r, e.value, e.std_err, e.samples, args.seed, consts.c, args.p, beta])
        elif q == "poincare":
            for n in args.levels:
                v = poincare_deficit(f, n, args.p, beta, spec=spec, quad_depth=3)
                rows.append(["poincare", n, v, 0.0, 0, args.seed, consts.c, args.p, beta])
        elif q == "holder":
            res = f.resolution
            depth = (res if res is not None else max(args.levels) + 2) + 2
            pairs = sample_pairs(spec, args.samples, depth, args.levels, seed=args.seed)
            min_d = float(spec.a) ** (-(res - 2)) if res is not None else 0.0
            h = holder_ratio(f, consts, pairs, min_distance=min_d)
            rows.append(["holder", max(args.levels), h.sup, "", h.pairs_used, args.seed, consts.c, args.p, beta])
            extra = h.to_dict()
    out = _out(args)
    header = ["quantity", "n_or_r", "estimate", "std_err", "samples", "seed", "c", "p", "beta"]
    write_csv(os.path.join(out, f"functional_{q}.csv"), header, rows)
    write_json(
        os.path.join(out, f"functional_{q}.json"),
        {**_header(args), "consts": consts.to_dict(), "rows": [dict(zip(header, r)) for r in rows], "extra": extra},
    )
    for r in rows:
        print(" ".join(f"{k}={v}" for k, v in zip(header[:4], r[:4])))
    return 0


def cmd_verify(args) -> int:
    spec = _spec(args)
    cfg = HarnessConfig(
        p=args.p,
        member_levels=tuple(args.member_levels),
        n_range=(min(args.n_range), max(args.n_range)),
        rho_levels=tuple(args.rho_levels),
        samples=args.samples,
        seed=args.seed,
        stability_threshold=args.threshold,
        tail_policy=args.tail_policy,
        threads=args.threads,
    )
    run = run_suite(spec, args.p, cfg, log=log.info)
    run.write_bundle(_out(args), _header(args))
    s = run.summary()
    print(f"passed={s['passed']} reports={s['reports']} rho_hat={s['rho_hat']!r} beta_hat={s['beta_hat']!r} k={s['k']}")
    for failure in s["member_failures"]:
        print(f"unstable: {failure}")
    return 0 if run.passed else 2


def cmd_replay(args) -> int:
    """Re-run the embedded configuration into ``--out``."""
    cfg = dict(read_json(args.artifact)["config"])
    carpet_spec = cfg.pop("carpet_spec", None)
    ns = argparse.Namespace(**cfg, out=args.out, verbose=args.verbose)
    if carpet_spec is not None:
        path = os.path.join(_out(ns), "carpet_spec.json")
        CarpetSpec.from_dict(carpet_spec).to_json(path)
        ns.spec = path
    if ns.command not in COMMANDS:
        raise ConfigError(f"artifact has no replayable command: {ns.command!r}")
    return HANDLERS[ns.command](ns)


HANDLERS = {
    "validate": cmd_validate,
    "graph": cmd_graph,
    "solve": cmd_solve,
    "rho": cmd_rho,
    "functional": cmd_functional,
    "verify": cmd_verify,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(message)s")
    try:
        return HANDLERS[args.command](args)
    except CarpetKSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
