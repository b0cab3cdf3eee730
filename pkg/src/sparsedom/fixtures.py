"""Deterministic measures, functions and kernels used by the tests, the
runner and the example scripts."""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .geometry import GridFamily, make_grids
from .kernel import KernelSpec, TruncationSpec
from .measure import MeasureModel, separate_atoms

CANTOR_ALPHA = math.log(2) / math.log(3)


class FixtureError(ValueError):
    pass


def cantor_points(depth: int, n: int = 1) -> np.ndarray:
    """Left endpoints of the ``2**depth`` construction intervals (product in ``n`` dims)."""
    digits = np.array(list(np.ndindex(*([2] * depth))), dtype=float) if depth else np.zeros((1, 0))
    scales = 3.0 ** -np.arange(1, depth + 1)
    pts1 = (2 * digits) @ scales if depth else np.zeros(1)
    pts1 = np.sort(pts1)
    if n == 1:
        return pts1[:, None]
    mesh = np.stack(np.meshgrid(*([pts1] * n), indexing="ij"), -1)
    return mesh.reshape(-1, n)


def uniform_points(count: int, n: int = 1) -> np.ndarray:
    side = round(count ** (1.0 / n))
    if side ** n != count:
        raise FixtureError(f"{count} atoms do not form a {n}-dimensional lattice")
    x = (np.arange(side) + 0.5) / side
    mesh = np.stack(np.meshgrid(*([x] * n), indexing="ij"), -1)
    return mesh.reshape(-1, n)


def twocluster_points(per_cluster: int = 16, spacing: float = 1 / 128) -> np.ndarray:
    a = 0.05 + (np.arange(per_cluster) + 0.5) * spacing
    b = 0.825 + (np.arange(per_cluster) + 0.5) * spacing
    return np.concatenate([a, b])[:, None]


def build_measure(spec: dict) -> MeasureModel:
    """Measure from a JSON-style spec.

    ``{"type": "cantor", "depth": 6, "n": 1}``, ``{"type": "uniform", "count": 64}``,
    ``{"type": "twocluster"}`` or ``{"type": "atomic", "atoms": [[x.., w], ...]}``;
    optional ``alpha``, ``seed`` (grid offsets), ``n_max`` and ``separate``.
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise FixtureError("measure spec needs a 'type'")
    kind = spec["type"]
    n = int(spec.get("n", 1))
    try:
        if kind == "cantor":
            depth = int(spec.get("depth", 6))
            pts = cantor_points(depth, n)
            w = np.full(len(pts), 2.0 ** (-depth * n))
            alpha = spec.get("alpha", n * CANTOR_ALPHA)
        elif kind == "uniform":
            count = int(spec.get("count", 64))
            pts = uniform_points(count, n)
            w = np.full(len(pts), 1.0 / count)
            alpha = spec.get("alpha", float(n))
        elif kind == "twocluster":
            pts = twocluster_points(int(spec.get("per_cluster", 16)), float(spec.get("spacing", 1 / 128)))
            w = np.full(len(pts), 1.0 / len(pts))
            alpha = spec.get("alpha", 1.0)
            n = 1
        elif kind == "atomic":
            arr = np.asarray(spec["atoms"], float)
            if arr.ndim != 2 or arr.shape[1] < 2:
                raise FixtureError("atoms must be rows of coordinates followed by a weight")
            pts, w = arr[:, :-1], arr[:, -1]
            n = pts.shape[1]
            alpha = spec["alpha"]
        else:
            raise FixtureError(f"unknown measure type {kind!r}")
    except (KeyError, TypeError) as exc:
        raise FixtureError(f"malformed measure spec: {exc}") from exc
    grids = make_grids(n, float(alpha), 1.0, int(spec.get("seed", 0)), int(spec.get("n_max", 12)))
    if spec.get("separate", True):
        pts = separate_atoms(pts, grids)
    try:
        return MeasureModel(pts, w, grids, float(alpha), spec.get("C_growth"))
    except ValueError as exc:
        raise FixtureError(str(exc)) from exc


FIXTURES = {
    "cantor6": {"type": "cantor", "depth": 6, "n": 1, "n_max": 12},
    "cantor5": {"type": "cantor", "depth": 5, "n": 1, "n_max": 10},
    "cantor2d3": {"type": "cantor", "depth": 3, "n": 2, "n_max": 7},
    "uniform8-1d": {"type": "uniform", "count": 8, "n": 1, "n_max": 5},
    "uniform16": {"type": "uniform", "count": 16, "n": 1, "n_max": 6},
    "uniform64": {"type": "uniform", "count": 64, "n": 1, "n_max": 8},
    "uniform2d": {"type": "uniform", "count": 64, "n": 2, "alpha": 1.0, "n_max": 6},
    "twocluster": {"type": "twocluster", "n_max": 9},
}


def fixture_measure(name: str) -> MeasureModel:
    if name not in FIXTURES:
        raise FixtureError(f"unknown fixture {name!r}")
    return build_measure(FIXTURES[name])


def random_functions(mu: MeasureModel, count: int, seed: int, positive: bool = True) -> list:
    rng = np.random.default_rng(seed)
    if positive:
        return [rng.uniform(0.0, 1.0, mu.size) for _ in range(count)]
    return [rng.standard_normal(mu.size) for _ in range(count)]


def build_kernel(spec: dict):
    """``(KernelSpec, TruncationSpec or None)`` from a JSON-style spec."""
    try:
        k = KernelSpec(spec.get("family", "signed_power"), float(spec.get("alpha", 1.0)),
                       float(spec.get("delta", 1.0)))
        gamma = spec.get("gamma")
        t = None if gamma is None else TruncationSpec(float(gamma), int(spec.get("Q_exponent", 2)))
    except (TypeError, ValueError) as exc:
        raise FixtureError(f"malformed kernel spec: {exc}") from exc
    return k, t


def measure_document(name: str, mu: MeasureModel) -> dict:
    return {
        "name": name,
        "spec": FIXTURES.get(name),
        "type": "atomic",
        "alpha": mu.alpha,
        "n": mu.n,
        "seed": mu.grids.seed,
        "n_max": mu.grids.n_max,
        "grids": mu.grids.to_dict(),
        "atoms": [[*map(float, p), float(w)] for p, w in zip(mu.points, mu.weights)],
        "C_growth": mu.C_growth,
    }


def generate(name: str, out: str | os.PathLike) -> list:
    """Write the measure of fixture ``name``, an f/g pair and a kernel; returns paths."""
    mu = fixture_measure(name)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    doc = measure_document(name, mu)
    mpath = out / f"{name}.measure.json"
    _atomic_write(mpath, json.dumps(doc, indent=1))
    f, g = random_functions(mu, 2, seed=1234)
    fpath = out / f"{name}.functions.json"
    _atomic_write(fpath, json.dumps({"seed": 1234, "f": f.tolist(), "g": g.tolist()}))
    kpath = out / f"{name}.kernel.json"
    kdoc = {"family": "signed_power", "alpha": mu.alpha, "delta": 1.0, "gamma": 2.0 ** -6, "Q_exponent": 2}
    _atomic_write(kpath, json.dumps(kdoc, indent=1))
    return [mpath, fpath, kpath]


def load_measure_file(path) -> MeasureModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FixtureError(f"cannot read measure file {path}: {exc}") from exc
    if "atoms" in doc and doc.get("type", "atomic") == "atomic":
        spec = {"type": "atomic", "atoms": doc["atoms"], "alpha": doc.get("alpha"),
                "seed": doc.get("seed", 0), "n_max": doc.get("n_max", 12), "separate": False}
        if spec["alpha"] is None:
            raise FixtureError("measure file lacks alpha")
        return build_measure(spec)
    return build_measure(doc)


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
