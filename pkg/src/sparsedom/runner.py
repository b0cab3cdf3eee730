"""Config-driven experiment runner: builds the measure and kernel, runs the
verification suites and writes ``report.json`` plus per-suite CSV tables."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import geometry as geo
from .fixtures import (FIXTURES, FixtureError, build_kernel, build_measure, fixture_measure,
                       load_measure_file, random_functions)
from .geometry import DyadicCube
from .haar import haar, haar_values, plancherel, telescope, universe
from .kernel import BumpParams, KernelSpec, Operator, TruncationSpec, bump_bound, bump_entry, regime
from .measure import boundary_gap, carve_subset, extend
from .sparse import (ConfigError, StoppingConfig, build_family, cz_decompose, domination_report,
                     min_stopping_constant, packing_check)
from .squarefns import SquareParams, SquareSystem, operator_norm_probe, paraproduct

SCHEMA_VERSION = 1
SUITES = ("geometry", "measure-lemmas", "haar", "bumps", "sparse", "squarefns", "domination")
DEFAULT_GAMMAS = tuple(2.0 ** -j for j in range(3, 10))

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "package_version", "config", "environment", "suites", "constants", "passed"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "package_version": {"type": "string"},
        "config": {"type": "object"},
        "environment": {"type": "object", "required": ["python", "numpy", "digest"]},
        "passed": {"type": "boolean"},
        "constants": {"type": "object"},
        "timing": {"type": "object"},
        "suites": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "passed", "checks", "constants"],
                "properties": {
                    "name": {"enum": list(SUITES)},
                    "passed": {"type": "boolean"},
                    "constants": {"type": "object"},
                    "checks": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["name", "passed", "hard", "value", "bound", "tolerance"],
                            "properties": {"witness": {"type": ["string", "null"]}},
                        },
                    },
                },
            },
        },
    },
}


class AssertionFailure(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    measure: dict = field(default_factory=lambda: {"fixture": "cantor6"})
    kernel: dict = field(default_factory=lambda: {"family": "signed_power"})
    seed: int = 0
    C_stop: float | None = None
    q: int = 1
    gammas: list = field(default_factory=lambda: list(DEFAULT_GAMMAS))
    N_max: int = 6
    suites: list = field(default_factory=lambda: list(SUITES))
    output: str = "lab_out"
    format: str = "json"
    pairs: int = 10

    @classmethod
    def from_dict(cls, doc: dict, base: Path | None = None) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**doc)
        cfg._base = base
        return cfg

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def validate(self):
        bad = [s for s in self.suites if s not in SUITES]
        if bad:
            raise ConfigError(f"unknown suites {bad}")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be 'json' or 'csv'")
        if not self.gammas or any(not (0 < g <= 1) for g in self.gammas):
            raise ConfigError("gammas must lie in (0, 1]")
        if self.N_max < 1:
            raise ConfigError("N_max must be positive")
        if not isinstance(self.measure, dict):
            raise ConfigError("measure must be an object")
        path = self.measure.get("file")
        if path is not None and not self.resolve(path).exists():
            raise FixtureError(f"measure file {path} does not exist")
        name = self.measure.get("fixture")
        if name is not None and name not in FIXTURES:
            raise FixtureError(f"unknown fixture {name!r}")
        return self

    def resolve(self, path) -> Path:
        p = Path(path)
        base = getattr(self, "_base", None)
        return p if p.is_absolute() or base is None else base / p


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    try:
        return ExperimentConfig.from_dict(doc, path.parent)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_measure(cfg: ExperimentConfig):
    m = dict(cfg.measure)
    if "file" in m:
        return load_measure_file(cfg.resolve(m["file"]))
    if "fixture" in m:
        return fixture_measure(m["fixture"])
    m.setdefault("seed", cfg.seed)
    return build_measure(m)


# ------------------------------------------------------------------ results

@dataclass
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    tolerance: float = 0.0
    hard: bool = True
    witness: str | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "hard": self.hard,
                "value": _num(self.value), "bound": _num(self.bound), "tolerance": _num(self.tolerance),
                "witness": None if self.passed else self.witness}


@dataclass
class SuiteResult:
    name: str
    checks: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    table: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.hard)

    def check(self, name, value, bound, tolerance=0.0, hard=True, witness=None, upper=True):
        ok = value <= bound + tolerance if upper else value >= bound - tolerance
        if isinstance(value, float) and math.isnan(value):
            ok = False
        self.checks.append(Check(name, bool(ok), float(value), float(bound), float(tolerance), hard,
                                 None if witness is None else str(witness)))
        return ok

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks],
                "constants": {k: _num(v) for k, v in self.constants.items()}}


@dataclass
class RunReport:
    config: dict
    suites: list
    environment: dict
    timing: dict

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    @property
    def constants(self) -> dict:
        out = {}
        for s in self.suites:
            for k, v in s.constants.items():
                out[f"{s.name}.{k}"] = v
        return out

    def to_dict(self, timing: bool = True) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "package_version": __version__,
            "config": self.config,
            "environment": self.environment,
            "passed": self.passed,
            "constants": {k: _num(v) for k, v in self.constants.items()},
            "suites": [s.to_dict() for s in self.suites],
        }
        if timing:
            doc["timing"] = self.timing
        return doc

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(clean(self.to_dict(timing)), indent=1, sort_keys=True, allow_nan=False)


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def clean(doc):
    """Recursively replace non-finite floats and numpy scalars by JSON-safe values."""
    if isinstance(doc, dict):
        return {str(k): clean(v) for k, v in doc.items()}
    if isinstance(doc, (list, tuple)):
        return [clean(v) for v in doc]
    if isinstance(doc, (float, int, np.floating, np.integer, np.bool_)) and not isinstance(doc, bool):
        return _num(doc)
    return doc


def environment() -> dict:
    env = {"python": platform.python_version(), "numpy": np.__version__,
           "platform": sys.platform, "package": __version__}
    env["digest"] = hashlib.sha256(json.dumps(env, sort_keys=True).encode()).hexdigest()[:16]
    return env


def lab_threads() -> int:
    raw = os.environ.get("LAB_THREADS")
    if raw is None:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"LAB_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("LAB_THREADS must be at least 1")
    return n


# ------------------------------------------------------------------- suites

class Context:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.mu = load_measure(cfg)
        self.kernel, self.trunc = build_kernel(cfg.kernel)
        if "alpha" not in cfg.kernel:
            self.kernel = KernelSpec(self.kernel.family, self.mu.alpha, self.kernel.delta)
        n = self.mu.n
        self.root = DyadicCube(0, -2, (-1,) * n)
        k = self.mu.grids.k
        C = cfg.C_stop if cfg.C_stop is not None else 1.5 * min_stopping_constant(k, self.mu.alpha, cfg.q)
        self.stopping = StoppingConfig(float(C), cfg.q, k, self.mu.alpha).validate()
        self.theta = geo.default_theta(self.mu.alpha, self.kernel.delta)

    def functions(self, count, seed_offset, positive=True):
        return random_functions(self.mu, count, self.cfg.seed * 1000 + seed_offset, positive)


def suite_geometry(ctx: Context) -> SuiteResult:
    res = SuiteResult("geometry")
    mu, grids = ctx.mu, ctx.mu.grids
    res.constants["k"] = grids.k
    res.check("grid count", grids.k, geo.grid_count(mu.n, mu.alpha), 0.0)
    gap = boundary_gap(mu.points, grids) if mu.size else 1.0
    res.check("atoms off grid boundaries", gap, 0.0, upper=False, witness=f"gap={gap}")
    if gap <= 0:
        res.checks[-1].passed = False
    cubes = [c for c in mu.cubes_in(ctx.root, min(ctx.cfg.N_max, 5)) if c != ctx.root]
    asym = 0
    counts = {c: 0 for c in geo.CLASSES}
    wit = None
    for I in cubes:
        for J in cubes:
            a = geo.pair_metrics(I, J, ctx.theta)
            b = geo.pair_metrics(J, I, ctx.theta)
            if (a.ec, a.rdist, a.inrdist, a.cls) != (b.ec, b.rdist, b.inrdist, b.cls):
                asym += 1
                wit = f"{I} {J}"
            counts[a.cls] += 1
    res.check("pair metrics symmetric", asym, 0, witness=wit)
    res.constants.update({f"pairs_{k}": v for k, v in counts.items()})
    return res


def suite_measure(ctx: Context) -> SuiteResult:
    res = SuiteResult("measure-lemmas")
    mu = ctx.mu
    res.constants["C_growth"] = mu.C_growth
    rng = np.random.default_rng(ctx.cfg.seed + 5)
    cubes = [c for c in mu.cubes_in(ctx.root, ctx.cfg.N_max) if mu.mass(c) > 0]
    fails, wit, tried = 0, None, 0
    for _ in range(200):
        I = cubes[rng.integers(len(cubes))]
        wmax = float(np.max(mu.weights[mu.mask(I)]))
        if mu.mass(I) <= 2 * wmax:
            continue
        a = float(rng.uniform(2 * wmax, mu.mass(I)))
        r = carve_subset(mu, I, a)
        tried += 1
        if not (a / 2 < r.mass <= a * (1 + 1e-12)):
            fails += 1
            wit = f"{I} a={a!r} got {r.mass!r}"
    res.constants["carve_trials"] = tried
    res.check("carving a/2 < mu(A) <= a", fails, 0, witness=wit)
    ext = extend(mu, ctx.root)
    bad, wit = 0, None
    sweep = mu.cubes_in(ctx.root, ctx.cfg.N_max)
    sweep += [geo.ancestor(ctx.root, ctx.root.scale - j) for j in (1, 2, 3)]
    sweep += [geo.translate(ctx.root, [1] * mu.n), geo.translate(ctx.root, [-2] * mu.n)]
    for A in sweep:
        if mu.mass(A) > ext.mass(A):
            bad += 1
            wit = str(A)
    res.check("mu <= extended measure", bad, 0, witness=wit)
    return res


def suite_haar(ctx: Context) -> SuiteResult:
    res = SuiteResult("haar")
    mu, N = ctx.mu, ctx.cfg.N_max
    cubes = [c for c in universe(mu, ctx.root, N) if c != ctx.root]
    worst_mean, worst_norm, wit = 0.0, 0.0, None
    for I in cubes:
        h = haar(mu, I)
        v = h.values(mu)
        mean = abs(float(np.sum(v * mu.weights)))
        mp = mu.mass(geo.parent(I))
        target = 0.0 if mp == 0 else 1 - mu.mass(I) / mp
        err = abs(float(np.sum(v * v * mu.weights)) - target)
        if err > worst_norm:
            worst_norm, wit = err, str(I)
        worst_mean = max(worst_mean, mean)
    res.check("haar mean zero", worst_mean, 0.0, 1e-12)
    res.check("haar norm identity", worst_norm, 0.0, 1e-12, witness=wit)
    fs = ctx.functions(20, 1, positive=False)
    worst, wit = 0.0, None
    for i, f in enumerate(fs[:10]):
        R = cubes[(7 * i) % len(cubes)]
        lhs, rhs = telescope(mu, f, R)
        scale = max(1.0, float(np.max(np.abs(lhs))))
        err = float(np.max(np.abs(lhs - rhs))) / scale
        if err > worst:
            worst, wit = err, str(R)
    res.check("telescoping", worst, 0.0, 1e-12, witness=wit)
    # full-resolution sum: the adapted Haar system is then an isometry onto f - E_Q f
    ratios = []
    for f in fs:
        energy, norm = plancherel(mu, f, ctx.root)
        ratios.append(energy / norm if norm else 0.0)
    res.constants["C_P"] = max(ratios)
    res.check("Plancherel bound", max(ratios), 1.0, 1e-12)
    return res


def fit_bumps(mu, op, root, depth, theta, delta=1.0) -> dict:
    """Fitted constant per regime over the exhaustive sweep, with witnesses.

    Entries below ``1e-12`` times the largest entry of the sweep are round-off
    and do not take part in the fit.
    """
    params = BumpParams(mu.alpha, delta, theta)
    cubes = [c for c in mu.cubes_in(root, depth) if c != root]
    rows = []
    count = {1: 0, 2: 0, 3: 0}
    for I in cubes:
        for J in cubes:
            r = regime(I, J, theta)
            if r is None:
                continue
            count[r] += 1
            rows.append((r, abs(bump_entry(op, I, J, r, root)), bump_bound(mu, I, J, r, params), I, J))
    floor = 1e-12 * max((e for _, e, _, _, _ in rows), default=0.0)
    fit = {1: 0.0, 2: 0.0, 3: 0.0}
    wit = {1: None, 2: None, 3: None}
    unbounded = []
    for r, e, b, I, J in rows:
        if e <= floor:
            continue
        if b == 0:
            unbounded.append((r, str(I), str(J)))
        elif e / b > fit[r]:
            fit[r], wit[r] = e / b, f"{I} {J}"
    return {"C": fit, "witness": wit, "count": count, "unbounded": unbounded}


def suite_bumps(ctx: Context) -> SuiteResult:
    res = SuiteResult("bumps")
    mu = ctx.mu
    op = Operator(ctx.kernel, mu)
    d = min(ctx.cfg.N_max, 6)
    a = fit_bumps(mu, op, ctx.root, d, ctx.theta, ctx.kernel.delta)
    b = fit_bumps(mu, op, ctx.root, d + 1, ctx.theta, ctx.kernel.delta)
    res.check("bump bounds finite", len(a["unbounded"]) + len(b["unbounded"]), 0,
              witness=(a["unbounded"] + b["unbounded"])[:3])
    for r in (1, 2, 3):
        res.constants[f"C_bump_{r}"] = a["C"][r]
        res.constants[f"C_bump_{r}_next"] = b["C"][r]
        res.constants[f"pairs_{r}"] = a["count"][r]
        x, y = a["C"][r], b["C"][r]
        change = 0.0 if x == y else (abs(y - x) / x if x else math.inf)
        res.check(f"C_bump regime {r} stable", change, 0.25, hard=False,
                  witness=f"{x!r} -> {y!r} at {b['witness'][r]}")
        res.table.append({"regime": r, "depth": d, "C_bump": x, "C_bump_next": y, "pairs": a["count"][r]})
    return res


def suite_sparse(ctx: Context) -> SuiteResult:
    res = SuiteResult("sparse")
    mu = ctx.mu
    rng = np.random.default_rng(ctx.cfg.seed + 17)
    worst_lvl, worst_chain, wit = 0.0, 0.0, None
    bad = 0
    for i in range(10):
        f = np.exp(rng.normal(0, 3, mu.size))
        g = np.exp(rng.normal(0, 3, mu.size))
        fam = build_family(mu, f, g, ctx.stopping)
        rep = packing_check(mu, fam)
        worst_lvl = max(worst_lvl, rep.level_ratio)
        worst_chain = max(worst_chain, rep.chain_ratio)
        if not rep.ok:
            bad += 1
            wit = f"{rep.offending} ratio={rep.worst_ratio!r}"
        res.table.append({"trial": i, "cubes": len(fam.cubes()), "level_ratio": rep.level_ratio,
                          "chain_ratio": rep.chain_ratio})
    res.constants["tau"] = ctx.stopping.tau
    res.constants["level_ratio"] = worst_lvl
    res.constants["chain_ratio"] = worst_chain
    res.check("packing bounds", bad, 0, witness=wit)
    fails, wit = 0, None
    for i in range(10):
        f = rng.standard_normal(mu.size) * np.exp(rng.normal(0, 2, mu.size))
        lam = float(rng.uniform(0.1, 5.0)) * float(np.sum(np.abs(f) * mu.weights))
        a = float(rng.uniform(0.5, 4.0))
        cz = cz_decompose(mu, f, lam, a)
        recon = cz.good + sum(cz.bad_parts.values()) if cz.bad_parts else cz.good
        err = float(np.max(np.abs(recon - f)))
        if err > 1e-12 * max(1.0, float(np.max(np.abs(f)))) or cz.mass_E > cz.bound_E * (1 + 1e-12):
            fails += 1
            wit = f"trial {i}: err={err!r} mu(E)={cz.mass_E!r} bound={cz.bound_E!r}"
    res.check("CZ decomposition", fails, 0, witness=wit)
    return res


def suite_squarefns(ctx: Context) -> SuiteResult:
    res = SuiteResult("squarefns")
    mu = ctx.mu
    depth = min(ctx.cfg.N_max, 6)
    sysm = SquareSystem(mu, ctx.root, depth, SquareParams(alpha=mu.alpha, delta=ctx.kernel.delta))
    A = ctx.functions(50, 11, positive=False)
    B = ctx.functions(50, 12, positive=False)
    for probe in ("L2", "weakL1"):
        for j in (1, 2, 3):
            for s in (1, -1):
                ra = operator_norm_probe(sysm, probe, j, s, A)
                rb = operator_norm_probe(sysm, probe, j, s, B)
                tag = f"{probe}_S{j}{'+' if s > 0 else '-'}"
                res.constants[tag] = ra.constant
                lo, hi = sorted((ra.constant, rb.constant))
                ratio = 1.0 if hi == lo else (hi / lo if lo > 0 else math.inf)
                res.check(f"{tag} corpus agreement", ratio, 2.0, hard=False,
                          witness=f"{ra.constant!r} vs {rb.constant!r}")
                res.check(f"{tag} finite", hi, math.inf, hard=True, upper=True)
                if not math.isfinite(hi):
                    res.checks[-1].passed = False
    aux = sysm.aux_report()
    res.constants["aux_infeasible"] = aux["infeasible"]
    res.check("aux sets within caps", len(aux["violations"]), 0, witness=aux["violations"][:3])
    if ctx.trunc is not None or ctx.kernel.is_antisymmetric:
        op = Operator(ctx.kernel, mu, ctx.trunc)
        f, g = A[0], B[0]
        nf = math.sqrt(float(np.sum(f * f * mu.weights)))
        ng = math.sqrt(float(np.sum(g * g * mu.weights)))
        for side in (1, 2):
            full = mu.resolving_scale(0, ctx.root.scale) - ctx.root.scale
            p = paraproduct(op, f, g, side, ctx.root, min(full, 10), ctx.theta)
            res.constants[f"C_Pi_{side}"] = abs(p) / (nf * ng)
    return res


def suite_domination(ctx: Context) -> SuiteResult:
    res = SuiteResult("domination")
    mu = ctx.mu
    fs = ctx.functions(2 * ctx.cfg.pairs, 23)
    gammas = sorted(ctx.cfg.gammas, reverse=True)
    running, best = [], 0.0
    inf_cells = []
    for gam in gammas:
        op = Operator(ctx.kernel, mu, TruncationSpec(gam))
        cell = 0.0
        for i in range(ctx.cfg.pairs):
            rep = domination_report(op, mu, fs[2 * i], fs[2 * i + 1], ctx.stopping)
            if not math.isfinite(rep.ratio):
                inf_cells.append(f"gamma={gam!r} pair={i}")
            cell = max(cell, rep.ratio)
            res.table.append({"gamma": gam, "pair": i, "dual_pair": rep.dual_pair,
                              "sparse_form": rep.sparse_value, "ratio": rep.ratio})
        best = max(best, cell)
        running.append(best)
    res.check("ratio finite", len(inf_cells), 0, witness=inf_cells[:3])
    res.constants["C_dom"] = best
    if len(running) >= 2:
        growth = running[-1] / running[-2] - 1 if running[-2] > 0 else (0.0 if running[-1] == 0 else math.inf)
        res.constants["growth"] = growth
        res.check("no blow-up as truncation is removed", growth, 0.10, hard=False,
                  witness=f"{running[-2]!r} -> {running[-1]!r}")
    return res


RUNNERS = {"geometry": suite_geometry, "measure-lemmas": suite_measure, "haar": suite_haar,
           "bumps": suite_bumps, "sparse": suite_sparse, "squarefns": suite_squarefns,
           "domination": suite_domination}


def _timed(fn, ctx):
    t = time.perf_counter()
    r = fn(ctx)
    r.seconds = time.perf_counter() - t
    return r


def run(cfg: ExperimentConfig, threads: int | None = None) -> RunReport:
    cfg.validate()
    order = [s for s in SUITES if s in cfg.suites]
    timing: dict = {}
    if not order:
        return RunReport(cfg.to_dict(), [], environment(), timing)
    try:
        ctx = Context(cfg)
    except FixtureError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    threads = lab_threads() if threads is None else threads
    t0 = time.perf_counter()
    if threads > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            futs = {s: ex.submit(_timed, RUNNERS[s], ctx) for s in order}
            results = [futs[s].result() for s in order]
    else:
        results = [_timed(RUNNERS[s], ctx) for s in order]
    for r in results:
        timing[r.name] = r.seconds
    timing["total"] = time.perf_counter() - t0
    return RunReport(cfg.to_dict(), results, environment(), timing)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_report(report: RunReport, out, fmt: str = "json", timing: bool = True) -> list:
    """Write ``report.json`` (and ``tables/*.csv`` when ``fmt == 'csv'``)."""
    out = Path(out)
    paths = [out / "report.json"]
    _atomic_write(paths[0], report.to_json(timing))
    if fmt == "csv":
        for s in report.suites:
            rows = s.table or [c.to_dict() for c in s.checks]
            if not rows:
                continue
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
            p = out / "tables" / f"{s.name}.csv"
            _atomic_write(p, buf.getvalue())
            paths.append(p)
    return paths
