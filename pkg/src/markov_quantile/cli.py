"""Command-line front end: ``mq <subcommand> --family F ...``.

Exit codes: 0 success, 1 failed verification or refinement that did not
converge, 2 bad input.  JSON and CSV numbers are printed with 17 significant
digits so artifacts are byte-for-byte reproducible.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .action import PartitionError, energy_limit, energy_terms, EnergyReport, Partition
from .checks import MANIFEST, run_checks
from .families import BUILTINS, ExplicitFamily, FamilyError, TimeInterval, family_from_json
from .kernel import KernelError, LevelCoupling, MarkovChainLaw, fd_cdf
from .levels import Indeterminate, NoConvergence, dyadic_times, essential, level_coupling_of
from .measure import MeasureError
from .mq import ProcessHandle, ZeroMass, jump_rates, pair_coupling, simulate
from .oracle import GridMisaligned, oracle_compare, oracle_fd_cdf, oracle_kernel, oracle_product

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

DEFAULTS = {"tol": 1e-6, "seed": 0}


class InputError(ValueError):
    pass


# output


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(obj, indent: str = "") -> str:
    inner = indent + "  "
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_encode(v, inner)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + indent + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, inner) for v in obj) + "\n" + indent + "]"
    if isinstance(obj, float):
        if math.isnan(obj):
            return '"NaN"'
        if math.isinf(obj):
            return '"Infinite"' if obj > 0 else '"-Infinite"'
        return fmt(obj)
    return json.dumps(obj)


def dumps(obj) -> str:
    """JSON text with floats at 17 significant digits and non-finite values as strings."""
    return _encode(_plain(obj)) + "\n"


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# family specs


def _fixture_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("markov_quantile").joinpath("fixtures").iterdir()
                  if p.name.endswith(".json"))


def _read_fixture(name: str) -> dict:
    return json.loads(resources.files("markov_quantile").joinpath("fixtures", f"{name}.json").read_text())


def load_spec(arg: str, params: str | None = None) -> dict:
    """Family spec from inline JSON, a file, a shipped fixture name or a builtin name."""
    try:
        if arg.lstrip().startswith("{"):
            spec = json.loads(arg)
        elif Path(arg).is_file():
            spec = json.loads(Path(arg).read_text())
        else:
            stem = Path(arg).name
            stem = stem[:-5] if stem.endswith(".json") else stem
            if stem in _fixture_names():
                spec = _read_fixture(stem)
            elif arg in BUILTINS:
                spec = {"parametric": {"name": arg, "params": {}}}
            else:
                raise InputError(f"no family file, fixture or builtin named {arg!r}; "
                                 f"fixtures: {', '.join(_fixture_names())}")
    except json.JSONDecodeError as exc:
        raise InputError(f"family spec is not valid JSON: {exc}") from None
    if not isinstance(spec, dict):
        raise InputError("family spec must be a JSON object")
    if params:
        try:
            extra = json.loads(params)
        except json.JSONDecodeError as exc:
            raise InputError(f"--params is not valid JSON: {exc}") from None
        if "parametric" not in spec:
            raise InputError("--params only applies to parametric families")
        spec["parametric"] = dict(spec["parametric"])
        spec["parametric"]["params"] = {**spec["parametric"].get("params", {}), **extra}
    return spec


def _setting(args, spec: dict, key: str):
    v = getattr(args, key, None)
    if v is not None:
        return v
    return spec.get(key, DEFAULTS[key])


def _family(args):
    spec = load_spec(args.family, getattr(args, "params", None))
    return family_from_json(spec), spec


def _floats(text: str) -> list[float]:
    """Comma-separated numbers, or ``a:b:n`` for n equal steps from a to b."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return list(np.linspace(float(a), float(b), int(n) + 1))
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise InputError(f"cannot read numbers from {text!r}") from None


def _handle(family, args, tol: float) -> ProcessHandle:
    kind = args.process
    if kind == "quantile":
        return ProcessHandle.quantile(family)
    if kind == "markov-at":
        if args.R is None:
            raise InputError("--process markov-at needs --R")
        return ProcessHandle.made_markov_at(family, _floats(args.R))
    return ProcessHandle.markov_quantile(family, tol=tol, depth=getattr(args, "depth", None))


def _axis(mu, cap: int = 64) -> np.ndarray:
    pts = np.unique(np.concatenate([mu.lo, mu.hi]))
    if pts.size > cap:
        pts = pts[np.unique(np.linspace(0, pts.size - 1, cap).round().astype(int))]
    return pts


# subcommands


def cmd_coupling(args) -> int:
    family, spec = _family(args)
    tol = _setting(args, spec, "tol")
    p = _handle(family, args, tol)
    if not args.s < args.t:
        raise InputError("need s < t")
    P = pair_coupling(p, args.s, args.t)
    xs, ys = _axis(P.left), _axis(P.right)
    F = P.cdf_table(xs, ys)
    out = {"process": args.process, "s": args.s, "t": args.t,
           "left": P.left.to_json(), "right": P.right.to_json(),
           "xs": xs, "ys": ys, "cdf": F}
    if not np.any(P.left.hi > P.left.lo) and not np.any(P.right.hi > P.right.lo):
        Fp = np.zeros((xs.size + 1, ys.size + 1))
        Fp[1:, 1:] = F
        m = Fp[1:, 1:] - Fp[:-1, 1:] - Fp[1:, :-1] + Fp[:-1, :-1]
        out["masses"] = [[x, y, m[i, j]] for i, x in enumerate(xs) for j, y in enumerate(ys)
                         if m[i, j] > 1e-15]
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    family, spec = _family(args)
    tol, seed = _setting(args, spec, "tol"), _setting(args, spec, "seed")
    grid = _floats(args.grid)
    if args.n < 1:
        raise InputError("--n must be positive")
    e = simulate(_handle(family, args, tol), grid, args.n, seed)
    _emit(e.to_csv(), args.out)
    return EXIT_OK


def cmd_rates(args) -> int:
    family, spec = _family(args)
    if not family.integer_valued:
        raise InputError("rates need an integer-valued family")
    r = jump_rates(family, args.t, args.k, h=args.h)
    out = {"t": args.t, "k": args.k, "h": args.h,
           "up_rate": r.up, "down_rate": r.down,
           "up_rate_empirical": r.up_empirical, "down_rate_empirical": r.down_empirical,
           "up_rate_raw": r.up_raw, "down_rate_raw": r.down_raw}
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_essential(args) -> int:
    family, spec = _family(args)
    tol = _setting(args, spec, "tol")
    I = args.interval[0] if len(args.interval) == 1 else tuple(args.interval)
    e = essential(family, I, tuple(args.probe), tol=tol)
    value = "Indeterminate" if e is Indeterminate else bool(e)
    _emit(dumps({"interval": list(args.interval), "probe": list(args.probe), "tol": tol,
                 "essential": value}), args.out)
    return EXIT_OK


def cmd_energy(args) -> int:
    family, spec = _family(args)
    if args.partition is not None:
        R = Partition(tuple(_floats(args.partition)))
        terms = energy_terms(family, R)
        rep = EnergyReport(R.points, terms, float(sum(terms)))
    else:
        tol = args.refine if args.refine is not None else _setting(args, spec, "tol")
        rep = energy_limit(family, tol=tol, interval=tuple(args.interval) if args.interval else None)
    out = rep.to_json()
    out["finite"] = math.isfinite(rep.total)
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_check(args) -> int:
    family, spec = _family(args)
    results = run_checks(family, seed=_setting(args, spec, "seed"), tol=_setting(args, spec, "tol"),
                         only=args.only)
    failed = [r for r in results if r.status == "fail"]
    if args.json:
        text = dumps({"manifest": len(MANIFEST), "run": len(results), "failed": len(failed),
                      "results": [r.to_json() for r in results]})
    else:
        lines = [f"{r.status.upper():4} {r.name}  {r.detail}" for r in results]
        lines.append(f"{len(results) - len(failed)}/{len(results)} properties without failure "
                     f"(manifest {len(MANIFEST)})")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_oracle(args) -> int:
    family, spec = _family(args)
    N = args.bins
    if isinstance(family, ExplicitFamily):
        times = [float(t) for t in family.times]
    else:
        lo, hi = family.domain
        times = dyadic_times(family, TimeInterval.closed(lo, hi), args.depth)
    sets = [family.atomic_levels(t) for t in times]
    sets = [A for A in sets if not A.empty]
    L = level_coupling_of(sets)
    O = oracle_product(sets, N)
    d = oracle_compare(L, O)
    # three-time chain through the two halves of the product
    half = len(sets) // 2
    K1, K2 = level_coupling_of(sets[:half]), level_coupling_of(sets[half:])
    levels = [0.75, 0.5, 0.25]
    exact = fd_cdf(MarkovChainLaw(None, [K1, K2]), levels)
    approx = oracle_fd_cdf([oracle_product(sets[:half], N), oracle_product(sets[half:], N)], levels)
    fd_gap = abs(exact - approx)
    passed = d <= 1e-9 and fd_gap <= 1e-9
    if args.dump:
        with open(args.dump, "w", newline="\n") as fh:
            fh.write(oracle_kernel(LevelCoupling(L.kernel.materialize()), N).to_csv())
    _emit(dumps({"bins": N, "factors": len(sets), "rho": d, "fd_cdf_gap": fd_gap,
                 "passed": passed}), args.out)
    return EXIT_OK if passed else EXIT_FAIL


# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mq", description="Markov-quantile processes of families of marginals.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--family", required=True,
                       help="family spec: JSON file, inline JSON, fixture name or builtin name")
        p.add_argument("--params", help="JSON object of parameters for a parametric family")
        p.add_argument("--out", help="write the artifact to this file instead of stdout")
        p.set_defaults(func=fn)
        return p

    def process_opts(p):
        p.add_argument("--process", choices=["mq", "quantile", "markov-at"], default="mq")
        p.add_argument("--R", help="times where the quantile process is made Markov (comma list)")
        p.add_argument("--tol", type=float, help="refinement tolerance for parametric families")
        p.add_argument("--depth", type=int, help="fixed dyadic depth instead of refinement")

    p = add("coupling", cmd_coupling, "pair coupling cdf of a process between times s < t")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    process_opts(p)

    p = add("simulate", cmd_simulate, "sample paths as CSV")
    p.add_argument("--grid", required=True, help="comma list of times or a:b:n")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int)
    process_opts(p)

    p = add("rates", cmd_rates, "analytic and empirical jump rates of an integer family")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--h", type=float, default=1e-3)

    p = add("essential", cmd_essential, "whether a time or closed interval is essential")
    p.add_argument("--interval", type=float, nargs="+", required=True, metavar="T")
    p.add_argument("--probe", type=float, nargs=2, required=True, metavar=("S", "T"))
    p.add_argument("--tol", type=float)

    p = add("energy", cmd_energy, "energy of the curve of marginals")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--partition", help="comma list of times or a:b:n")
    g.add_argument("--refine", type=float, help="refine dyadic partitions to this tolerance")
    p.add_argument("--interval", type=float, nargs=2, metavar=("A", "B"))
    p.add_argument("--tol", type=float)

    p = add("check", cmd_check, "run the invariant suite")
    p.add_argument("--only", nargs="*", help="property name prefixes to run")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--json", action="store_true", help="JSON report instead of text")

    p = add("oracle", cmd_oracle, "compare exact products with bin matrices")
    p.add_argument("--bins", type=int, default=1024)
    p.add_argument("--depth", type=int, default=3, help="dyadic depth for parametric families")
    p.add_argument("--dump", help="write the oracle matrix of the product as CSV")
    return ap


def _threads() -> int:
    raw = os.environ.get("MQ_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"MQ_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise InputError(f"MQ_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        _threads()
        return args.func(args)
    except NoConvergence as exc:
        print(f"mq: {exc}; gaps {[float(fmt(g)) for g in exc.gaps]}", file=sys.stderr)
        return EXIT_FAIL
    except (InputError, FamilyError, MeasureError, KernelError, PartitionError, ZeroMass,
            GridMisaligned, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"mq: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
