"""Finite atomic measures with power growth, with the density surrogate,
the extended measure and carving of subsets of prescribed mass."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import DyadicCube, GridFamily


class GrowthError(ValueError):
    pass


class MeasureModel:
    """Atoms ``points`` with ``weights`` on top of a grid family.

    Masses of grid cubes are served from per-(grid, scale) cell tables built
    lazily; the tables are guarded by a lock so concurrent readers are safe.
    """

    def __init__(self, points, weights, grids: GridFamily, alpha: float,
                 C_growth: float | None = None, check_separation: bool = True):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != grids.n:
            raise ValueError("atom dimension does not match the grids")
        w = np.asarray(weights, dtype=float)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights differ in length")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be positive and finite")
        self.points = pts
        self.weights = w
        self.grids = grids
        self.alpha = float(alpha)
        self.n = grids.n
        self._tables: dict = {}
        self._lock = threading.Lock()
        if check_separation and len(w):
            gap = boundary_gap(pts, grids)
            if gap <= math.ldexp(grids.base_side, -grids.n_max - 4):
                raise ValueError(f"atoms within {gap:.3g} of a grid hyperplane")
        measured = self.measured_growth()
        if C_growth is None:
            C_growth = measured
        elif C_growth < measured * (1 - 1e-12):
            raise GrowthError(f"growth constant {C_growth} below measured {measured}")
        self.C_growth = float(C_growth)

    # -- basic queries ---------------------------------------------------
    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def total(self) -> float:
        return float(np.sum(self.weights))

    def rel(self, g: int) -> np.ndarray:
        return (self.points - self.grids.offsets[g]) / self.grids.base_side

    def _table(self, g: int, s: int):
        key = (g, s)
        tab = self._tables.get(key)
        if tab is not None:
            return tab
        codes = np.floor(np.ldexp(self.rel(g), s)).astype(np.int64)
        if len(self.weights):
            cells, inv = np.unique(codes, axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            masses = np.bincount(inv, weights=self.weights, minlength=len(cells))
        else:
            cells = np.zeros((0, self.n), dtype=np.int64)
            inv = np.zeros(0, dtype=np.int64)
            masses = np.zeros(0)
        lookup = {tuple(c): i for i, c in enumerate(cells.tolist())}
        tab = (cells, inv, masses, lookup)
        with self._lock:
            self._tables.setdefault(key, tab)
        return self._tables[key]

    def mass(self, I: DyadicCube) -> float:
        if I.is_open:
            return float(np.sum(self.weights[self.mask(I)]))
        cells, inv, masses, lookup = self._table(I.grid, I.scale)
        i = lookup.get(I.coords)
        return 0.0 if i is None else float(masses[i])

    def mask(self, I: DyadicCube) -> np.ndarray:
        x = np.ldexp(self.rel(I.grid), I.scale)
        c = np.asarray(I.coords, dtype=float)
        if I.is_open:
            return np.all((x > c) & (x < c + 1), axis=1)
        cells, inv, masses, lookup = self._table(I.grid, I.scale)
        i = lookup.get(I.coords)
        if i is None:
            return np.zeros(self.size, dtype=bool)
        return inv == i

    def box_mask(self, lo, hi, closed: bool = True) -> np.ndarray:
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        if closed:
            return np.all((self.points >= lo) & (self.points <= hi), axis=1)
        return np.all((self.points >= lo) & (self.points < hi), axis=1)

    def box_mass(self, lo, hi, closed: bool = True) -> float:
        return float(np.sum(self.weights[self.box_mask(lo, hi, closed)]))

    def integral(self, f, I: DyadicCube | None = None) -> float:
        f = np.asarray(f, float)
        if I is None:
            return float(np.sum(f * self.weights))
        return float(np.sum((f * self.weights)[self.mask(I)]))

    def average(self, f, I: DyadicCube) -> float:
        m = self.mass(I)
        return 0.0 if m == 0 else self.integral(f, I) / m

    def cell_integrals(self, f, g: int, s: int) -> dict:
        """Map coords -> (integral of f, mass) over nonempty cells."""
        cells, inv, masses, lookup = self._table(g, s)
        fw = np.bincount(inv, weights=np.asarray(f, float) * self.weights, minlength=len(cells))
        return {tuple(c): (fw[i], masses[i]) for i, c in enumerate(cells.tolist())}

    def nonempty(self, g: int, s: int) -> list:
        cells, _, _, _ = self._table(g, s)
        return [DyadicCube(g, s, tuple(c)) for c in cells.tolist()]

    def cubes_in(self, root: DyadicCube, depth: int, include_empty: bool = False) -> list:
        """Cubes inside ``root`` down to ``root.scale + depth``, sorted."""
        out = []
        for s in range(root.scale, root.scale + depth + 1):
            if include_empty:
                out.extend(geo.descendants(root, s - root.scale))
            else:
                out.extend(c for c in self.nonempty(root.grid, s) if geo.contains(root, c))
        return sorted(out, key=lambda c: (c.scale, c.coords))

    def resolving_scale(self, g: int = 0, start: int = 0) -> int:
        """Smallest scale at which every atom sits alone in its cell."""
        s = start
        while True:
            cells, _, _, _ = self._table(g, s)
            if len(cells) == self.size:
                return s
            s += 1
            if s > 60:
                raise ValueError("coincident atoms cannot be resolved")

    def measured_growth(self, s_min: int = -4) -> float:
        best = 0.0
        for g in range(self.grids.k):
            for s in range(s_min, self.grids.n_max + 1):
                _, _, masses, _ = self._table(g, s)
                if len(masses):
                    side = math.ldexp(self.grids.base_side, -s)
                    best = max(best, float(masses.max()) / side ** self.alpha)
        return best

    def growth_ok(self, I: DyadicCube) -> bool:
        return self.mass(I) <= self.C_growth * self.grids.side(I) ** self.alpha * (1 + 1e-12)

    def min_positive_mass(self, root: DyadicCube, depth: int) -> float:
        vals = [self.mass(c) for c in self.cubes_in(root, depth)]
        vals = [v for v in vals if v > 0]
        return min(vals) if vals else 0.0

    def restrict(self, keep) -> "MeasureModel":
        keep = np.asarray(keep, bool)
        return MeasureModel(self.points[keep], self.weights[keep], self.grids, self.alpha,
                            None, check_separation=False)

    def to_dict(self) -> dict:
        return {"type": "atomic", "alpha": self.alpha, "n": self.n,
                "atoms": [[*map(float, p), float(w)] for p, w in zip(self.points, self.weights)],
                "C_growth": self.C_growth}


def boundary_gap(points, grids: GridFamily, depth: int | None = None) -> float:
    """Smallest distance from an atom to a grid hyperplane of depth <= ``depth``."""
    depth = grids.n_max if depth is None else depth
    pts = np.atleast_2d(np.asarray(points, float))
    if pts.size == 0:
        return math.inf
    unit = math.ldexp(grids.base_side, -depth)
    best = math.inf
    for g in range(grids.k):
        r = (pts - grids.offsets[g]) / unit
        frac = r - np.floor(r)
        best = min(best, float(np.min(np.minimum(frac, 1 - frac))) * unit)
    return best


def separate_atoms(points, grids: GridFamily, box=(0.0, 1.0)) -> np.ndarray:
    """Nudge atoms deterministically until each is more than
    ``2**(-n_max-4) * base_side`` away from every hyperplane up to ``n_max``."""
    pts = np.atleast_2d(np.array(points, float))
    need = math.ldexp(grids.base_side, -grids.n_max - 4)
    eta = math.ldexp(grids.base_side, -grids.n_max - 3)
    lo, hi = box
    for i in range(pts.shape[0]):
        for axis in range(pts.shape[1]):
            x0 = pts[i, axis]
            for j in range(0, 64):
                step = (j + 1) // 2 * (1 if j % 2 else -1)
                x = x0 + step * eta * 0.75
                if not (lo <= x < hi):
                    continue
                ok = True
                for g in range(grids.k):
                    r = (x - grids.offsets[g]) / math.ldexp(grids.base_side, -grids.n_max)
                    fr = r - math.floor(r)
                    if min(fr, 1 - fr) * math.ldexp(grids.base_side, -grids.n_max) <= need * 1.01:
                        ok = False
                        break
                if ok:
                    pts[i, axis] = x
                    break
            else:
                raise ValueError(f"could not separate atom {i} from the grid boundaries")
    return pts


# ------------------------------------------------------------------ density

@dataclass
class DensityReport:
    sup_term: float
    series_term: float
    rho: float
    M: int
    tail_bound: float
    sup_is_estimate: bool = True


def _as_box(I, grids: GridFamily):
    if isinstance(I, DyadicCube):
        return grids.center(I), grids.side(I)
    c, side = I
    return np.asarray(c, float), float(side)


def dilate_masses(mu: MeasureModel, center, side: float, ms) -> np.ndarray:
    """Masses of the closed concentric boxes of sides ``m * side``."""
    if mu.size == 0:
        return np.zeros(len(ms))
    cheb = np.max(np.abs(mu.points - center), axis=1)
    order = np.argsort(cheb, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(mu.weights[order])])
    radii = 0.5 * np.asarray(ms, float) * side
    idx = np.searchsorted(cheb[order], radii, side="right")
    return cum[idx]


def density(mu: MeasureModel, I, M: int = 64, samples: int = 16, delta: float = 1.0,
            r_min: float | None = None) -> DensityReport:
    """Density of ``mu`` at the cube (or ``(center, side)`` box) ``I``.

    The ball term is a lower estimate over a deterministic lattice of centres
    (plus the atoms of ``I``) and radii ``r`` in ``[r_min, side)``; the series
    is summed exactly up to ``M``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    alpha = mu.alpha
    c, side = _as_box(I, mu.grids)
    ms = np.arange(1, M + 1)
    dm = dilate_masses(mu, c, side, ms)
    series = float(np.sum(dm / (ms * side) ** alpha * ms ** -(delta / 2 + 1)))
    tail = mu.C_growth * float(np.sum(np.arange(M + 1, 200 * M) ** -(delta / 2 + 1.0)))
    sup = 0.0
    inside = np.all(np.abs(mu.points - c) <= side / 2, axis=1) if mu.size else np.zeros(0, bool)
    if np.any(inside):
        if r_min is None:
            r_min = math.ldexp(mu.grids.base_side, -mu.grids.n_max)
        grid1 = (np.arange(samples) + 0.5) / samples - 0.5
        mesh = np.stack(np.meshgrid(*([grid1] * mu.n), indexing="ij"), -1).reshape(-1, mu.n)
        centers = np.vstack([c + side * mesh, mu.points[inside]])
        pts = mu.points[inside]
        w = mu.weights[inside]
        nr = max(1, int(math.ceil(4 * math.log2(side / r_min))))
        radii = side * 2.0 ** (-np.arange(nr + 1) / 4.0)
        radii = radii[(radii >= r_min) & (radii < side)]
        if radii.size == 0:
            radii = np.array([side * (1 - 1e-9)])
        d = np.sqrt(((centers[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        for r in radii:
            mass = ((d < r) * w).sum(1)
            sup = max(sup, float(mass.max()) / r ** alpha)
    return DensityReport(sup_term=sup, series_term=series, rho=sup + series, M=M,
                         tail_bound=tail, sup_is_estimate=True)


def shell_series_check(mu: MeasureModel, I, M: int = 64, delta: float = 1.0,
                       samples: int = 16):
    """``(lhs, rhs)`` of the shell-sum / density comparison."""
    if M < 2:
        raise ValueError("M must be at least 2")
    c, side = _as_box(I, mu.grids)
    ms = np.arange(0, M + 1)
    dm = dilate_masses(mu, c, side, ms)
    shells = np.diff(dm)
    mm = np.arange(1, M + 1)
    lhs = float(np.sum(mm ** -(mu.alpha + delta) * shells)) / side ** mu.alpha
    rhs = density(mu, I, M, samples, delta).rho
    return lhs, rhs


# --------------------------------------------------------- extended measure

class ExtendedMeasure:
    """Extension of ``mu`` beyond ``Qp``: cubes disjoint from ``Qp`` carry
    ``C * side**alpha`` and ancestors of ``Qp`` are filled in additively."""

    def __init__(self, inner: MeasureModel, Qp: DyadicCube, C: float | None = None):
        if inner.size and not np.all(inner.mask(Qp)):
            raise ValueError("atoms outside Q'")
        self.inner = inner
        self.Qp = Qp
        self.C = inner.C_growth if C is None else float(C)
        self.alpha = inner.alpha

    def outer(self, side: float) -> float:
        return self.C * side ** self.alpha

    def mass(self, A: DyadicCube) -> float:
        g = self.inner.grids
        Qp = self.Qp
        if A.grid != Qp.grid:
            raise ValueError("extended measure is defined on the grid of Q'")
        if geo.contains(Qp, A):
            return self.inner.mass(A)
        if geo.contains(A, Qp):
            r = Qp.scale - A.scale
            return self.inner.mass(Qp) + (2 ** (r * g.n) - 1) * self.outer(g.side(Qp))
        return self.outer(g.side(A))

    def average(self, f, A: DyadicCube) -> float:
        m = self.mass(A)
        if m == 0:
            return 0.0
        if geo.contains(A, self.Qp) or geo.contains(self.Qp, A):
            return self.inner.integral(f, A) / m
        return 0.0


def extend(mu: MeasureModel, Qp: DyadicCube, C: float | None = None) -> ExtendedMeasure:
    return ExtendedMeasure(mu, Qp, C)


# ------------------------------------------------------------------ carving

@dataclass
class CarveResult:
    cubes: list
    mass: float
    scale: int
    trace: list = field(default_factory=list)


def carve_scale(mu: MeasureModel, I: DyadicCube, a: float) -> int:
    """Smallest positive ``s`` with ``2**-s <= (a / (2 C))**(1/alpha) / side(I)``."""
    side = mu.grids.side(I)
    bound = (0.5 * a / mu.C_growth) ** (1.0 / mu.alpha) / side
    s = max(1, math.ceil(-math.log2(bound)))
    while math.ldexp(1.0, -s) > bound:
        s += 1
    while s > 1 and math.ldexp(1.0, -(s - 1)) <= bound:
        s -= 1
    return s


def carve_subset(mu: MeasureModel, I: DyadicCube, a: float, order=None) -> CarveResult:
    """Greedy removal: drop equal-scale subcubes of ``I`` until the mass is
    at most ``a``. Only nonempty subcubes are listed in the result."""
    total = mu.mass(I)
    if not (0 < a < total):
        raise ValueError(f"need 0 < a < mu(I); got a={a}, mu(I)={total}")
    s = carve_scale(mu, I, a)
    cubes = [c for c in mu.nonempty(I.grid, I.scale + s) if geo.contains(I, c)]
    masses = {c: mu.mass(c) for c in cubes}
    # below n_max the growth certificate says nothing, so heavy cells are split
    # until every cell is light or holds a single atom
    stop = mu.resolving_scale(I.grid, I.scale)
    while True:
        heavy = [c for c in cubes if masses[c] > a / 2]
        if not heavy:
            break
        if all(c.scale >= stop for c in heavy):
            raise ValueError(f"cell {heavy[0]} heavier than a/2; growth fails below the atom scale")
        refined = []
        for c in cubes:
            if masses[c] > a / 2 and c.scale < stop:
                for k in geo.children(c):
                    m = mu.mass(k)
                    if m > 0:
                        masses[k] = m
                        refined.append(k)
            else:
                refined.append(c)
        cubes = refined
    if order is None:
        cubes.sort(key=lambda c: (tuple(mu.grids.lower(c)), c.scale))
    else:
        cubes = list(order(cubes)) if callable(order) else [cubes[i] for i in order]
    kept = list(cubes)
    cur = total
    trace = [cur]
    for c in cubes:
        if cur <= a:
            break
        kept.remove(c)
        cur = math.fsum(masses[k] for k in kept)
        trace.append(cur)
    return CarveResult(sorted(kept), cur, I.scale + s, trace)


# --------------------------------------------------------- boundary shells

def boundary_shell_mass(mu: MeasureModel, Q: DyadicCube, N0: int, theta: float, r: int,
                        return_cubes: bool = False):
    """Mass of the union of small open cubes near the inner boundaries of the
    cubes of ``D(Q)`` down to ``N0`` levels, at relative level ``r``."""
    if r <= N0:
        raise ValueError("need r > N0")
    s = Q.scale + r
    hit = np.zeros(mu.size, dtype=bool)
    found = set()
    if mu.size == 0:
        return (0.0, []) if return_cubes else 0.0
    grid = Q.grid
    rel = np.ldexp(mu.rel(grid), s)
    codes = np.floor(rel).astype(np.int64)
    interior = np.all(rel > codes, axis=1)
    for d in range(N0 + 1):
        for I in geo.descendants(Q, d):
            three_lo = [(c - 1) << (s - I.scale) for c in I.coords]
            three_hi = [(c + 2) << (s - I.scale) for c in I.coords]
            for p in range(mu.size):
                if hit[p] or not interior[p]:
                    continue
                j = codes[p]
                if not all(lo <= v < hi for v, lo, hi in zip(j, three_lo, three_hi)):
                    continue
                J = DyadicCube(grid, s, tuple(int(v) for v in j), True)
                Jp = geo.parent(J)
                # parent strictly inside the dilate 3I
                pl = [v << 1 for v in Jp.coords]
                if not all(lo <= v and v + 2 <= hi for v, lo, hi in zip(pl, three_lo, three_hi)):
                    continue
                if geo.lam(I, J, theta) <= 1:
                    hit[p] = True
                    found.add(J)
    m = float(np.sum(mu.weights[hit]))
    if return_cubes:
        return m, sorted(found)
    return m
