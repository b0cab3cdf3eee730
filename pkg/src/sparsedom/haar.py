"""Measure-adapted Haar functions, modified wavelets, projections and the
telescoping identities."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .geometry import DyadicCube
from .measure import MeasureModel


@dataclass(frozen=True)
class HaarFn:
    cube: DyadicCube
    value_on_I: float
    value_on_ring: float
    mass_I: float
    mass_parent: float

    @property
    def support(self) -> DyadicCube:
        return geo.parent(self.cube)

    @property
    def zero_flag(self) -> bool:
        return self.mass_I == 0

    def norm_sq(self) -> float:
        if self.mass_I == 0:
            return 0.0
        return 1.0 - self.mass_I / self.mass_parent

    def values(self, mu: MeasureModel) -> np.ndarray:
        out = np.zeros(mu.size)
        if self.zero_flag:
            return out
        on_parent = mu.mask(self.support)
        on_I = mu.mask(self.cube)
        out[on_parent] = self.value_on_ring
        out[on_I] = self.value_on_I
        return out


def haar(mu: MeasureModel, I: DyadicCube) -> HaarFn:
    m = mu.mass(I)
    if m == 0:
        return HaarFn(I, 0.0, 0.0, 0.0, mu.mass(geo.parent(I)))
    mp = mu.mass(geo.parent(I))
    ring = -math.sqrt(m) / mp
    return HaarFn(I, 1.0 / math.sqrt(m) + ring, ring, m, mp)


def haar_values(mu: MeasureModel, I: DyadicCube) -> np.ndarray:
    return haar(mu, I).values(mu)


@dataclass(frozen=True)
class ModifiedHaar:
    """A constant times the indicator of ``region``."""

    constant: float
    region: object  # DyadicCube or (lo, hi) closed box

    def values(self, mu: MeasureModel) -> np.ndarray:
        if isinstance(self.region, DyadicCube):
            m = mu.mask(self.region)
        else:
            m = mu.box_mask(*self.region)
        return np.where(m, self.constant, 0.0)


def _center_in(J: DyadicCube, I: DyadicCube) -> bool:
    num, sc = geo.center_num(J)
    if I.grid != J.grid:
        raise ValueError("cubes from different grids")
    return geo.point_in_cube(num, sc, I)


def modified_haar(mu: MeasureModel, I: DyadicCube, J: DyadicCube, Q) -> ModifiedHaar:
    m = mu.mass(I)
    if m == 0:
        return ModifiedHaar(0.0, Q)
    mp = mu.mass(geo.parent(I))
    c = math.sqrt(m) * ((1.0 / m if _center_in(J, I) else 0.0)
                        - (1.0 / mp if _center_in(J, geo.parent(I)) else 0.0))
    return ModifiedHaar(c, Q)


# ------------------------------------------------------------ coefficients

@dataclass
class CoefficientMap:
    entries: dict
    source_hash: str

    def __getitem__(self, I):
        return self.entries.get(I, 0.0)

    def energy(self) -> float:
        return math.fsum(v * v for v in self.entries.values())

    def to_json(self) -> str:
        rows = [{"cube": str(c), "coeff": v} for c, v in
                sorted(self.entries.items(), key=lambda kv: (kv[0].scale, kv[0].coords, kv[0].grid))]
        return json.dumps(rows)


def source_hash(mu: MeasureModel, f) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(np.asarray(f, float)).tobytes())
    h.update(mu.points.tobytes())
    h.update(mu.weights.tobytes())
    h.update(np.asarray(mu.grids.offsets, float).tobytes())
    return h.hexdigest()[:16]


def coefficient(mu: MeasureModel, f, I: DyadicCube) -> float:
    m = mu.mass(I)
    if m == 0:
        return 0.0
    P = geo.parent(I)
    return math.sqrt(m) * (mu.integral(f, I) / m - mu.integral(f, P) / mu.mass(P))


def analyze(mu: MeasureModel, f, cubes) -> CoefficientMap:
    """Exact coefficients ``<f, h_I>`` for the nonempty cubes given."""
    f = np.asarray(f, float)
    cubes = list(cubes)
    by_level: dict = {}
    for c in cubes:
        by_level.setdefault((c.grid, c.scale), []).append(c)
    entries = {}
    for (g, s), cs in sorted(by_level.items()):
        here = mu.cell_integrals(f, g, s)
        up = mu.cell_integrals(f, g, s - 1)
        for c in cs:
            if c.is_open:
                v = coefficient(mu, f, c)
                if mu.mass(c) > 0:
                    entries[c] = v
                continue
            fi, mi = here.get(c.coords, (0.0, 0.0))
            if mi == 0:
                continue
            fp, mp = up[tuple(x >> 1 for x in c.coords)]
            entries[c] = math.sqrt(mi) * (fi / mi - fp / mp)
    return CoefficientMap(entries, source_hash(mu, f))


def synthesize(mu: MeasureModel, coeffs: CoefficientMap) -> np.ndarray:
    out = np.zeros(mu.size)
    for c, v in sorted(coeffs.entries.items(), key=lambda kv: kv[0].sort_key()):
        if v != 0.0:
            out += v * haar_values(mu, c)
    return out


def universe(mu: MeasureModel, Q: DyadicCube, N: int) -> list:
    """Nonempty cubes ``I`` contained in ``Q`` with side at least ``2**-N`` side(Q)."""
    return mu.cubes_in(Q, N)


def average_fn(mu: MeasureModel, f, I: DyadicCube) -> np.ndarray:
    return np.where(mu.mask(I), mu.average(f, I), 0.0)


def expectation(mu: MeasureModel, f, g: int, s: int) -> np.ndarray:
    """Conditional expectation onto the cells of grid ``g`` at scale ``s``."""
    cells, inv, masses, _ = mu._table(g, s)
    fw = np.bincount(inv, weights=np.asarray(f, float) * mu.weights, minlength=len(cells))
    return (fw / masses)[inv]


def project(mu: MeasureModel, f, Q: DyadicCube, N: int, Qp: DyadicCube | None = None):
    """``(P, E, D)`` with ``P`` the Haar projection down to ``N`` levels,
    ``E`` the average over ``Q`` and ``D = f - P - E``."""
    f = np.asarray(f, float)
    if Qp is not None and not geo.contains(Q, Qp):
        raise ValueError("Q must contain Q'")
    if mu.size and not np.all(mu.mask(Q)[np.asarray(f) != 0]):
        raise ValueError("f must be supported in Q")
    coeffs = analyze(mu, f, universe(mu, Q, N))
    P = synthesize(mu, coeffs)
    E = average_fn(mu, f, Q)
    D = f - P - E
    return P, E, D


def telescope(mu: MeasureModel, f, R: DyadicCube, J: DyadicCube | None = None, Q=None):
    """Both sides of the telescoping identity on ``R``; the modified variant is
    used when ``J`` and ``Q`` are given (wavelets frozen at the centre of the
    parent of ``J``)."""
    f = np.asarray(f, float)
    kids = geo.children(R)
    lhs = np.zeros(mu.size)
    rhs = np.zeros(mu.size)
    if J is None:
        for I in kids:
            c = coefficient(mu, f, I)
            if c != 0.0:
                lhs += c * haar_values(mu, I)
            rhs += average_fn(mu, f, I)
        rhs -= average_fn(mu, f, R)
        return lhs, rhs
    Jh = geo.parent(J)
    for I in kids:
        c = coefficient(mu, f, I)
        if c != 0.0:
            lhs += c * modified_haar(mu, I, Jh, Q).values(mu)
    qmask = mu.mask(Q) if isinstance(Q, DyadicCube) else mu.box_mask(*Q)
    total = 0.0
    for I in kids:
        if _center_in(Jh, I):
            total += mu.average(f, I)
    if _center_in(Jh, R):
        total -= mu.average(f, R)
    rhs = np.where(qmask, total, 0.0)
    return lhs, rhs


def norm_sq(mu: MeasureModel, f) -> float:
    f = np.asarray(f, float)
    return float(np.sum(f * f * mu.weights))


def plancherel(mu: MeasureModel, f, Q: DyadicCube, N: int | None = None):
    """``(coefficient energy, squared L2 norm)`` over the cubes of ``Q``."""
    f = np.asarray(f, float)
    if N is None:
        N = max(0, mu.resolving_scale(Q.grid, Q.scale) - Q.scale)
    coeffs = analyze(mu, f, universe(mu, Q, N))
    return coeffs.energy(), norm_sq(mu, f)
