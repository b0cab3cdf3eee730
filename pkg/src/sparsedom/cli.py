"""``lab``: run experiments, generate fixtures, build and check sparse
families, and probe square-function constants.

Exit codes: 0 success, 2 configuration or usage error, 3 missing or corrupt
fixture, 4 failed assertion.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import runner
from .fixtures import (FIXTURES, FixtureError, build_kernel, generate, load_measure_file,
                       random_functions)
from .geometry import DyadicCube
from .kernel import Operator
from .sparse import (ConfigError, StoppingConfig, build_family, domination_report,
                     min_stopping_constant, packing_check)
from .squarefns import SquareParams, SquareSystem, operator_norm_probe

EXIT_OK, EXIT_CONFIG, EXIT_FIXTURE, EXIT_ASSERT = 0, 2, 3, 4


def _emit(doc):
    print(json.dumps(runner.clean(doc), indent=1, sort_keys=True, allow_nan=False))


def _load_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise FixtureError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FixtureError(f"{what} {path} is not valid JSON: {exc}") from exc


def _functions(args, mu, positive=True):
    if args.functions:
        doc = _load_json(args.functions, "functions file")
        try:
            f = np.asarray(doc["f"], float)
            g = np.asarray(doc["g"], float)
        except (KeyError, TypeError, ValueError) as exc:
            raise FixtureError(f"functions file needs 'f' and 'g' lists: {exc}") from exc
        if f.shape != (mu.size,) or g.shape != (mu.size,):
            raise FixtureError(f"functions must have {mu.size} values")
        return f, g
    f, g = random_functions(mu, 2, args.seed, positive)
    return f, g


def _stopping(args, mu) -> StoppingConfig:
    k = mu.grids.k
    C = args.C_stop if args.C_stop is not None else 1.5 * min_stopping_constant(k, mu.alpha, args.q)
    return StoppingConfig(C, args.q, k, mu.alpha).validate()


def cmd_run(args) -> int:
    cfg = runner.load_config(args.config)
    out = Path(args.out) if args.out else cfg.resolve(cfg.output)
    report = runner.run(cfg)
    paths = runner.write_report(report, out, cfg.format, timing=not args.no_timing)
    for s in report.suites:
        flag = "ok" if s.passed else "FAILED"
        soft = sum(1 for c in s.checks if not c.passed and not c.hard)
        extra = f" ({soft} soft check(s) outside tolerance)" if soft else ""
        print(f"{s.name:15s} {flag}{extra}  {s.seconds:.2f}s")
        for c in s.checks:
            if not c.passed and c.hard:
                print(f"  {c.name}: value {c.value!r} bound {c.bound!r} witness {c.witness}")
    print(f"report: {paths[0]}")
    return EXIT_OK if report.passed else EXIT_ASSERT


def cmd_fixtures(args) -> int:
    if args.action == "list":
        for name in FIXTURES:
            print(name)
        return EXIT_OK
    if args.name not in FIXTURES:
        print(f"unknown fixture {args.name!r}; known: {', '.join(FIXTURES)}", file=sys.stderr)
        return EXIT_CONFIG
    for p in generate(args.name, args.out):
        print(p)
    return EXIT_OK


def cmd_sparse(args) -> int:
    mu = load_measure_file(args.measure)
    if args.action == "dominate":
        if args.kernel is None:
            raise ConfigError("dominate needs --kernel")
        kspec = _load_json(args.kernel, "kernel file")
        if not isinstance(kspec, dict):
            raise ConfigError("kernel file must hold an object")
        kernel, trunc = build_kernel({**kspec, "gamma": args.gamma if args.gamma is not None else kspec.get("gamma")})
        if trunc is None:
            raise ConfigError("dominate needs --gamma or a kernel file with gamma")
        f, g = _functions(args, mu, positive=False)
        rep = domination_report(Operator(kernel, mu, trunc), mu, f, g, _stopping(args, mu))
        _emit({"dual_pair": rep.dual_pair, "sparse_form": rep.sparse_value, "ratio": rep.ratio,
               "family_sizes": rep.family_sizes, "packing": rep.packing})
        return EXIT_OK if math.isfinite(rep.ratio) else EXIT_ASSERT
    f, g = _functions(args, mu)
    if np.any(f < 0) or np.any(g < 0):
        f, g = np.abs(f), np.abs(g)
    fam = build_family(mu, f, g, _stopping(args, mu))
    if args.action == "build":
        _emit(fam.to_dict())
        return EXIT_OK
    rep = packing_check(mu, fam)
    _emit({"ok": rep.ok, "worst_ratio": rep.worst_ratio, "offending": None if rep.offending is None else str(rep.offending),
           "level_ratio": rep.level_ratio, "level_bound": rep.level_bound,
           "chain_ratio": rep.chain_ratio, "chain_bound": rep.chain_bound})
    return EXIT_OK if rep.ok else EXIT_ASSERT


def cmd_probe(args) -> int:
    mu = load_measure_file(args.measure)
    root = DyadicCube(0, -2, (-1,) * mu.n)
    params = SquareParams(e=args.e, alpha=mu.alpha, coeff_policy=args.policy)
    system = SquareSystem(mu, root, args.depth, params)
    corpus = random_functions(mu, args.count, args.seed, positive=False)
    out = []
    for j in args.j:
        for sign in (1, -1):
            rep = operator_norm_probe(system, args.probe, j, sign, corpus)
            out.append({"j": j, "sign": sign, "e": args.e, "probe": args.probe,
                        "constant": rep.constant, "witness": rep.witness, "a": rep.a})
    _emit(out)
    return EXIT_OK if all(math.isfinite(r["constant"]) for r in out) else EXIT_ASSERT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the suites of an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (default: the config's output)")
    r.add_argument("--no-timing", action="store_true", help="omit wall-clock fields from report.json")
    r.set_defaults(func=cmd_run)

    fx = sub.add_parser("fixtures", help="deterministic fixture files")
    fsub = fx.add_subparsers(dest="action", required=True)
    gen = fsub.add_parser("generate")
    gen.add_argument("name")
    gen.add_argument("--out", default="fixtures")
    fsub.add_parser("list")
    fx.set_defaults(func=cmd_fixtures)

    sp = sub.add_parser("sparse", help="sparse families and the domination ratio")
    sp.add_argument("action", choices=("build", "check", "dominate"))
    sp.add_argument("--measure", required=True)
    sp.add_argument("--functions", help="JSON with 'f' and 'g' atom-value lists")
    sp.add_argument("--kernel")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--C-stop", dest="C_stop", type=float)
    sp.add_argument("--q", type=int, default=1)
    sp.add_argument("--seed", type=int, default=1234)
    sp.set_defaults(func=cmd_sparse)

    pr = sub.add_parser("probe", help="empirical L2 / weak-L1 constants of the square functions")
    pr.add_argument("--measure", required=True)
    pr.add_argument("--probe", choices=("L2", "weakL1"), default="L2")
    pr.add_argument("--j", type=int, nargs="+", choices=(1, 2, 3), default=[1, 2, 3])
    pr.add_argument("--e", type=int, default=0)
    pr.add_argument("--depth", type=int, default=6)
    pr.add_argument("--count", type=int, default=50)
    pr.add_argument("--seed", type=int, default=11)
    pr.add_argument("--policy", choices=("unit", "F-sup"), default="unit")
    pr.set_defaults(func=cmd_probe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FixtureError as exc:
        print(f"fixture error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
