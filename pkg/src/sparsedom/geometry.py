"""Shifted dyadic grids, integer cube arithmetic and pairwise cube metrics.

Cubes are addressed by ``(grid, scale, coords)``: the cube of grid ``g`` at
scale ``s`` with integer coordinates ``j`` is

    offset_g + 2**-s * base_side * prod_i [j_i, j_i + 1)

Everything that decides membership, containment or a threshold comparison
is done with exact integers; real coordinates are produced on demand.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CLASSES = ("distant", "close", "nested", "attached")


@dataclass(frozen=True)
class DyadicCube:
    grid: int
    scale: int
    coords: tuple
    is_open: bool = False

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))

    @property
    def n(self) -> int:
        return len(self.coords)

    def sort_key(self):
        return (self.grid, self.scale, self.coords)

    def __lt__(self, other):
        return self.sort_key() < other.sort_key()

    def __str__(self):
        return "g{}:s{}:[{}]".format(self.grid, self.scale, ",".join(str(c) for c in self.coords))

    def as_open(self) -> "DyadicCube":
        return DyadicCube(self.grid, self.scale, self.coords, True)


def parse_cube(text: str) -> DyadicCube:
    """Inverse of ``str(cube)``."""
    try:
        g, s, c = text.strip().split(":", 2)
        coords = tuple(int(v) for v in c.strip("[]").split(",") if v != "")
        return DyadicCube(int(g[1:]), int(s[1:]), coords)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed cube string {text!r}") from exc


@dataclass(frozen=True)
class GridFamily:
    """``k`` translated copies of the standard dyadic lattice."""

    n: int
    k: int
    offsets: tuple
    base_side: float = 1.0
    n_max: int = 12
    seed: int = 0
    radicands: tuple = ()

    def offset(self, g: int) -> np.ndarray:
        return np.full(self.n, self.offsets[g], dtype=float)

    def side(self, cube: DyadicCube) -> float:
        return math.ldexp(self.base_side, -cube.scale)

    def lower(self, cube: DyadicCube) -> np.ndarray:
        return self.offsets[cube.grid] + math.ldexp(self.base_side, -cube.scale) * np.asarray(cube.coords, float)

    def bounds(self, cube: DyadicCube):
        lo = self.lower(cube)
        return lo, lo + self.side(cube)

    def center(self, cube: DyadicCube) -> np.ndarray:
        return self.lower(cube) + 0.5 * self.side(cube)

    def cube_at(self, g: int, scale: int, point) -> DyadicCube:
        """The half-open cube of grid ``g`` at ``scale`` containing ``point``."""
        rel = (np.asarray(point, float) - self.offsets[g]) / self.base_side
        coords = np.floor(np.ldexp(rel, scale)).astype(np.int64)
        return DyadicCube(g, scale, tuple(coords.tolist()))

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "offsets": [float(o) for o in self.offsets],
                "base_side": self.base_side, "n_max": self.n_max, "seed": self.seed,
                "radicands": list(self.radicands)}


def grid_count(n: int, alpha: float) -> int:
    fl = math.floor(alpha)
    return n - fl + (1 if alpha - fl == 0 else 0)


def _offsets_clash(values: Sequence[float], n_max: int, tol: float = 1e-6) -> bool:
    # two grids share a hyperplane at depth <= n_max iff the offset difference
    # is an integer multiple of 2**-n_max
    for a, b in itertools.combinations(values, 2):
        x = math.ldexp(abs(a - b), n_max)
        if abs(x - round(x)) < tol:
            return True
    return False


def make_grids(n: int, alpha: float, base_side: float = 1.0, offset_seed: int = 0,
               n_max: int = 12) -> GridFamily:
    """Build the shifted grid family for dimension ``n`` and growth ``alpha``.

    Offsets are ``(2 + frac(sqrt(m))) * base_side`` for distinct non-square
    integers ``m`` drawn from ``offset_seed``. The shift by 2 puts the unit
    data box ``[0, base_side)^n`` inside the central half of the side-4 cube
    at coordinates ``(-1, ..., -1)`` and scale ``-2`` in every grid.
    """
    if n < 1:
        raise ValueError("dimension must be at least 1")
    if not (0 < alpha <= n):
        raise ValueError(f"alpha={alpha} outside (0, {n}]")
    k = grid_count(n, alpha)
    rng = np.random.default_rng(offset_seed)
    radicands: list = []
    values: list = []
    while len(values) < k:
        m = int(rng.integers(2, 10**6))
        r = math.isqrt(m)
        if r * r == m or m in radicands:
            continue
        frac = math.sqrt(m) - r
        if not (0.01 < frac < 0.99):
            continue
        cand = (2.0 + frac) * base_side
        if _offsets_clash(values + [cand], n_max):
            continue
        radicands.append(m)
        values.append(cand)
    return GridFamily(n=n, k=k, offsets=tuple(values), base_side=base_side, n_max=n_max,
                      seed=offset_seed, radicands=tuple(radicands))


# ---------------------------------------------------------------- relatives

def parent(I: DyadicCube) -> DyadicCube:
    return DyadicCube(I.grid, I.scale - 1, tuple(c >> 1 for c in I.coords), I.is_open)


def ancestor(I: DyadicCube, scale: int) -> DyadicCube:
    d = I.scale - scale
    if d < 0:
        raise ValueError("ancestor scale finer than cube")
    return DyadicCube(I.grid, scale, tuple(c >> d for c in I.coords), I.is_open)


def children(I: DyadicCube) -> list:
    return descendants(I, 1)


def descendants(I: DyadicCube, depth: int) -> list:
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    m = 1 << depth
    base = [c * m for c in I.coords]
    out = []
    for off in itertools.product(range(m), repeat=I.n):
        out.append(DyadicCube(I.grid, I.scale + depth, tuple(b + o for b, o in zip(base, off)), I.is_open))
    return out


def friends(I: DyadicCube) -> list:
    return [DyadicCube(I.grid, I.scale, tuple(c + d for c, d in zip(I.coords, off)), I.is_open)
            for off in itertools.product((-1, 0, 1), repeat=I.n)]


def relatives(I: DyadicCube, depth: int = 1) -> dict:
    if depth < 1:
        raise ValueError("depth must be at least 1")
    return {"parent": parent(I), "children": children(I),
            "descendants": descendants(I, depth), "friends": friends(I)}


def translate(I: DyadicCube, shift) -> DyadicCube:
    return DyadicCube(I.grid, I.scale, tuple(c + int(d) for c, d in zip(I.coords, shift)), I.is_open)


def contains(I: DyadicCube, J: DyadicCube) -> bool:
    """True when ``J`` is a subset of ``I`` (same grid)."""
    if I.grid != J.grid or J.scale < I.scale:
        return False
    d = J.scale - I.scale
    return all((j >> d) == i for i, j in zip(I.coords, J.coords))


def strictly_contains(I: DyadicCube, J: DyadicCube) -> bool:
    return J.scale > I.scale and contains(I, J)


def in_central_half(I: DyadicCube, J: DyadicCube) -> bool:
    """True when ``J`` lies in the concentric half-size cube of ``I``."""
    if I.grid != J.grid or J.scale < I.scale + 2:
        return False
    d = J.scale - I.scale
    m = 1 << d
    for i, j in zip(I.coords, J.coords):
        lo = i * m + m // 4
        hi = i * m + 3 * m // 4
        if not (lo <= j < hi):
            return False
    return True


# ------------------------------------------------------------ exact metrics

def _intervals(I: DyadicCube, t: int):
    f = 1 << (t - I.scale)
    return [(c * f, (c + 1) * f) for c in I.coords]


def _box_gap2(a, b) -> int:
    s = 0
    for (alo, ahi), (blo, bhi) in zip(a, b):
        g = max(0, blo - ahi, alo - bhi)
        s += g * g
    return s


def _boundary_gap2(small, big) -> int:
    """Squared distance from closed box ``small`` to the faces of the children of ``big``."""
    best = None
    n = len(big)
    for axis in range(n):
        lo, hi = big[axis]
        mid = (lo + hi) // 2
        for v in (lo, mid, hi):
            face = list(big)
            face[axis] = (v, v)
            d = _box_gap2(small, face)
            if best is None or d < best:
                best = d
    return best


@dataclass(frozen=True)
class CubePairMetrics:
    ec: float
    rdist: float
    inrdist: float
    lam: float
    dist: float
    enclosing: tuple
    cls: str = ""
    # exact data: squared distances in units of 2**-unit_scale
    dist2: int = 0
    inr2: int = 0
    big_side: int = 1
    small_side: int = 1
    unit_scale: int = 0

    @property
    def lambda_(self) -> float:
        return self.lam

    def rdist_in(self, lo: float, hi: float) -> bool:
        """Exact test of ``lo <= rdist < hi``."""
        return _ratio_in(self.dist2, self.big_side, lo, hi)

    def inrdist_in(self, lo: float, hi: float) -> bool:
        return _ratio_in(self.inr2, self.small_side, lo, hi)


def _ratio_in(d2: int, side: int, lo: float, hi: float) -> bool:
    # lo <= sqrt(d2)/side < hi with integer lo, hi (hi may be inf)
    if lo > 0 and d2 < int(lo) ** 2 * side * side:
        return False
    if hi != math.inf and d2 >= int(hi) ** 2 * side * side:
        return False
    return True


def _raw_metrics(I: DyadicCube, J: DyadicCube, theta: float):
    if I.grid != J.grid:
        raise ValueError("cube metrics need cubes of the same grid")
    if I.n != J.n:
        raise ValueError("dimension mismatch")
    # J is the smaller one when the sides agree
    if J.scale >= I.scale:
        big, small = I, J
    else:
        big, small = J, I
    t = max(I.scale, J.scale) + 1
    bi, si = _intervals(big, t), _intervals(small, t)
    d2 = _box_gap2(bi, si)
    inr2 = _boundary_gap2(si, bi)
    bside = bi[0][1] - bi[0][0]
    sside = si[0][1] - si[0][0]
    ec = math.ldexp(1.0, -(small.scale - big.scale))
    rdist = math.sqrt(d2) / bside
    inrdist = math.sqrt(inr2) / sside
    lam = ec ** theta * (1.0 + inrdist)
    return ec, rdist, inrdist, lam, d2, inr2, bside, sside, t, bi, si


def enclosing_box(I: DyadicCube, J: DyadicCube, grids: GridFamily | None = None):
    """Smallest closed cube containing both, lowest coordinate sum on ties.

    Returned as ``(lower_corner, side)``; exact integers at the finer scale
    when ``grids`` is None, otherwise real coordinates.
    """
    t = max(I.scale, J.scale)
    a, b = _intervals(I, t), _intervals(J, t)
    lo = [min(x[0], y[0]) for x, y in zip(a, b)]
    hi = [max(x[1], y[1]) for x, y in zip(a, b)]
    side = max(h - l for l, h in zip(lo, hi))
    corner = [h - side for h in hi]
    if grids is None:
        return tuple(corner), side, t
    unit = math.ldexp(grids.base_side, -t)
    return grids.offsets[I.grid] + unit * np.asarray(corner, float), unit * side


def pair_metrics(I: DyadicCube, J: DyadicCube, theta: float = 0.5,
                 grids: GridFamily | None = None) -> CubePairMetrics:
    ec, rdist, inrdist, lam, d2, inr2, bs, ss, t, _, _ = _raw_metrics(I, J, theta)
    unit = 1.0 if grids is None else math.ldexp(grids.base_side, -t)
    enc = enclosing_box(I, J, grids) if grids is not None else enclosing_box(I, J)
    pm = CubePairMetrics(ec=ec, rdist=rdist, inrdist=inrdist, lam=lam, dist=math.sqrt(d2) * unit,
                         enclosing=enc, dist2=d2, inr2=inr2, big_side=bs, small_side=ss,
                         unit_scale=t)
    return _with_class(pm, I, J, theta)


def lam(I: DyadicCube, J: DyadicCube, theta: float) -> float:
    return _raw_metrics(I, J, theta)[3]


def classify(I: DyadicCube, J: DyadicCube, theta: float) -> str:
    ec, rdist, inrdist, _, d2, _, bs, _, _, _, _ = _raw_metrics(I, J, theta)
    if d2 >= bs * bs:
        return "distant"
    lp = lam(parent(I), parent(J), theta)
    if d2 > 0:
        return "close" if lp > 1 else "attached"
    return "nested" if lp > 1 else "attached"


def _with_class(pm: CubePairMetrics, I, J, theta) -> CubePairMetrics:
    return CubePairMetrics(**{**pm.__dict__, "cls": classify(I, J, theta)})


def default_theta(alpha: float, delta: float) -> float:
    return alpha / (alpha + delta / 2)


def cube_family(J: DyadicCube, e: int, m: int, universe: Iterable[DyadicCube],
                k_band: int | None = None) -> list:
    """Cubes ``I`` of the universe with side ``2**e`` times that of ``J`` and
    ``m-1 <= rdist(I^, J^) < m`` (plus the inner-distance band when given)."""
    if m < 1:
        raise ValueError("m must be positive")
    if k_band is not None and m != 1:
        raise ValueError("the inner-distance band is only defined for m = 1")
    target = J.scale - e
    Jp = parent(J)
    out = []
    for I in universe:
        if I.grid != J.grid or I.scale != target:
            continue
        _, _, _, _, d2, inr2, bs, ss, _, _, _ = _raw_metrics(parent(I), Jp, 0.5)
        if not _ratio_in(d2, bs, m - 1, m):
            continue
        if k_band is not None and not _ratio_in(inr2, ss, k_band - 1, k_band):
            continue
        out.append(I)
    return sorted(out)


def box_of(cube: DyadicCube, grids: GridFamily):
    lo, hi = grids.bounds(cube)
    return lo, hi


def dilate(cube: DyadicCube, r: float, grids: GridFamily):
    """Closed box ``rI`` as (lower, upper) real corners."""
    c = grids.center(cube)
    h = 0.5 * r * grids.side(cube)
    return c - h, c + h


def point_in_cube(point_num: Sequence[int], point_scale: int, I: DyadicCube) -> bool:
    """Exact membership of the point ``offset + 2**-point_scale * point_num``
    (grid units) in the cube ``I``, honouring openness."""
    t = max(point_scale, I.scale)
    p = [v << (t - point_scale) for v in point_num]
    f = 1 << (t - I.scale)
    for x, c in zip(p, I.coords):
        lo, hi = c * f, (c + 1) * f
        if I.is_open:
            if not (lo < x < hi):
                return False
        elif not (lo <= x < hi):
            return False
    return True


def center_num(J: DyadicCube):
    """Centre of ``J`` as exact grid units at scale ``J.scale + 1``."""
    return tuple(2 * c + 1 for c in J.coords), J.scale + 1


def rdist_floor(I: DyadicCube, J: DyadicCube) -> int:
    """``floor(rdist(I, J))`` computed exactly."""
    _, _, _, _, d2, _, bs, _, _, _, _ = _raw_metrics(I, J, 0.5)
    return math.isqrt(d2 // (bs * bs))


def inrdist_floor(I: DyadicCube, J: DyadicCube) -> int:
    _, _, _, _, _, inr2, _, ss, _, _, _ = _raw_metrics(I, J, 0.5)
    return math.isqrt(inr2 // (ss * ss))
