"""Stopping-time sparse families, packing verification, the sparse form,
the non-doubling Calderón–Zygmund decomposition and the domination
experiment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .geometry import DyadicCube, GridFamily
from .measure import ExtendedMeasure, MeasureModel


class ConfigError(ValueError):
    pass


class DegenerateCubeError(ValueError):
    pass


@dataclass(frozen=True)
class StoppingConfig:
    C_stop: float
    q: int = 1
    k: int = 1
    alpha: float = 1.0
    N_depth: int | None = None

    @property
    def tau(self) -> float:
        return self.k / (self.C_stop / 4.0 - 1.0)

    @property
    def chain_bound(self) -> float:
        return self.tau + 1.0 - 2.0 ** (-self.alpha * self.q)

    def validate(self):
        if self.q < 1:
            raise ConfigError("q must be at least 1")
        if self.C_stop <= 4:
            raise ConfigError("C_stop must exceed 4")
        if not (0 < self.tau < 2.0 ** (-self.alpha * self.q)):
            raise ConfigError(f"tau={self.tau:.4g} not in (0, 2^(-alpha q)={2.0 ** (-self.alpha * self.q):.4g})")
        return self


def min_stopping_constant(k: int, alpha: float, q: int) -> float:
    """Infimum of the admissible stopping constants."""
    return 4.0 * (1.0 + k * 2.0 ** (alpha * q))


def top_cubes(grids: GridFamily, g: int, q: int):
    """``Q'`` (side 4, containing the data box in its central half) and ``Q``."""
    Qp = DyadicCube(g, -2, (-1,) * grids.n)
    return Qp, geo.ancestor(Qp, Qp.scale - q)


@dataclass
class SparseFamily:
    levels: dict                      # grid -> list of lists of cubes (level 0, 1, ...)
    chain: dict                       # grid -> [R_1, ..., R_q] (R_q = Q)
    coefficients: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    level_of: dict = field(default_factory=dict)
    tops: dict = field(default_factory=dict)    # grid -> (Q', Q)
    config: StoppingConfig | None = None

    def cubes(self) -> list:
        out = []
        for g in sorted(self.levels):
            out.extend(self.chain.get(g, []))
            for lev in self.levels[g]:
                out.extend(lev)
        return out

    def coefficient(self, S) -> float:
        return self.coefficients.get(S, 1.0)

    def __contains__(self, S) -> bool:
        return S in self.level_of

    def to_dict(self) -> dict:
        lv = []
        for g in sorted(self.levels):
            for i, lev in enumerate(self.levels[g]):
                while len(lv) <= i:
                    lv.append([])
                lv[i].extend(str(c) for c in lev)
        return {
            "levels": lv,
            "chain": [str(c) for g in sorted(self.chain) for c in self.chain[g]],
            "coefficients": {str(c): self.coefficient(c) for c in self.cubes()},
            "provenance": {str(c): p for c, p in self.provenance.items()},
        }


class _Averages:
    def __init__(self, mu: MeasureModel, f):
        self.mu = mu
        self.f = np.asarray(f, float)
        self.tabs: dict = {}

    def __call__(self, I: DyadicCube):
        key = (I.grid, I.scale)
        tab = self.tabs.get(key)
        if tab is None:
            tab = self.mu.cell_integrals(self.f, I.grid, I.scale)
            self.tabs[key] = tab
        fi, mi = tab.get(I.coords, (0.0, 0.0))
        return (fi / mi if mi > 0 else 0.0), mi


def _central_start(I: DyadicCube) -> list:
    # cubes three levels down whose parents sit in the central half of I
    out = []
    base = [c * 8 for c in I.coords]
    for off in np.ndindex(*([4] * I.n)):
        out.append(DyadicCube(I.grid, I.scale + 3, tuple(b + 2 + o for b, o in zip(base, off))))
    return out


def build_family(mu: MeasureModel, f, g, cfg: StoppingConfig, grids: GridFamily | None = None,
                 max_cubes: int = 200000) -> SparseFamily:
    """Stopping-time selection in every grid.

    From each cube ``I`` of the previous level the maximal cubes ``J`` whose
    parents lie in the central half of ``I`` and with ``<f>_J > C <f>_I`` or
    ``<g>_J > C <g>_I`` are selected, together with their children and
    grandchildren of positive mass.
    """
    grids = mu.grids if grids is None else grids
    cfg.validate()
    f = np.asarray(f, float)
    g_ = np.asarray(g, float)
    if np.any(f < 0) or np.any(g_ < 0):
        raise ValueError("f and g must be nonnegative")
    depth = cfg.N_depth
    if depth is None:
        depth = max(mu.resolving_scale(gi, -2) for gi in range(grids.k)) if mu.size else 0
    C = cfg.C_stop
    fam = SparseFamily(levels={}, chain={}, config=cfg)
    Af, Ag = _Averages(mu, f), _Averages(mu, g_)
    for gi in range(grids.k):
        Qp, Q = top_cubes(grids, gi, cfg.q)
        fam.tops[gi] = (Qp, Q)
        support = (f != 0) | (g_ != 0)
        if np.any(support):
            lo, hi = grids.bounds(Qp)
            c = 0.5 * (lo + hi)
            inside = np.all(np.abs(mu.points[support] - c) < grids.side(Qp) / 4, axis=1)
            if not np.all(inside):
                raise ValueError("supports must lie in the central half of Q'")
        fam.chain[gi] = [geo.ancestor(Qp, Qp.scale - j) for j in range(1, cfg.q + 1)]
        for j, R in enumerate(fam.chain[gi], start=1):
            fam.provenance[R] = "ancestor chain"
            fam.level_of[R] = -1
        levels = [[Qp]]
        fam.provenance[Qp] = "root"
        fam.level_of[Qp] = 0
        count = 1
        i = 1
        while levels[-1] and i <= depth + 4:
            new = []
            for I in levels[-1]:
                af, _ = Af(I)
                ag, _ = Ag(I)
                stack = sorted(_central_start(I), key=lambda c: c.coords, reverse=True)
                while stack:
                    J = stack.pop()
                    if J.scale > depth:
                        continue
                    jf, mJ = Af(J)
                    if mJ == 0:
                        continue
                    jg, _ = Ag(J)
                    hit_f = jf > C * af
                    hit_g = jg > C * ag
                    if hit_f or hit_g:
                        if J not in fam.level_of:
                            fam.level_of[J] = i
                            fam.provenance[J] = "f-condition" if hit_f else "g-condition"
                            new.append(J)
                        for tag, d in (("offspring ch1", 1), ("offspring ch2", 2)):
                            for K in geo.descendants(J, d):
                                if K in fam.level_of or mu.mass(K) == 0:
                                    continue
                                fam.level_of[K] = i
                                fam.provenance[K] = tag
                                new.append(K)
                    else:
                        kids = [K for K in geo.children(J)]
                        stack.extend(sorted(kids, key=lambda c: c.coords, reverse=True))
            count += len(new)
            if count > max_cubes:
                raise RuntimeError("sparse family exceeded the cube budget")
            levels.append(sorted(new))
            i += 1
        if not levels[-1]:
            levels.pop()
        fam.levels[gi] = levels
    return fam


# ---------------------------------------------------------------- packing

@dataclass
class PackingReport:
    worst_ratio: float
    offending: DyadicCube | None
    level_ratio: float
    chain_ratio: float
    level_bound: float | None = None
    chain_bound: float | None = None

    @property
    def ok(self) -> bool:
        a = self.level_bound is None or self.level_ratio <= self.level_bound
        b = self.chain_bound is None or self.chain_ratio <= self.chain_bound
        return a and b and self.worst_ratio < 1


def packing_check(mu: MeasureModel, family: SparseFamily, extended: bool = True) -> PackingReport:
    """Packing ratios of ``family``: strict later-level subcubes under ``mu``
    for levels >= 0, and all strict subcubes under the extended measure for
    the ancestor chain."""
    worst, off = 0.0, None
    lvl_worst, chain_worst = 0.0, 0.0
    for gi, levels in family.levels.items():
        items = [(c, i) for i, lev in enumerate(levels) for c in lev]
        masses = {c: mu.mass(c) for c, _ in items}
        by_scale: dict = {}
        for c, i in items:
            by_scale.setdefault(c.scale, []).append((c, i))
        for S, i in items:
            mS = masses[S]
            if mS == 0:
                raise DegenerateCubeError(f"selected cube {S} has zero mass")
            tot = []
            for s, lst in by_scale.items():
                if s <= S.scale:
                    continue
                for c, j in lst:
                    if j > i and geo.contains(S, c):
                        tot.append(masses[c])
            r = math.fsum(tot) / mS
            if r > lvl_worst:
                lvl_worst = r
            if r > worst:
                worst, off = r, S
        chain = family.chain.get(gi, [])
        if chain:
            Qp = levels[0][0]
            ext = ExtendedMeasure(mu, Qp) if extended else None
            inside = math.fsum(masses[c] for c, _ in items)
            for k, R in enumerate(chain, start=1):
                below = [ext.mass(chain[j]) if ext else mu.mass(chain[j]) for j in range(k - 1)]
                num = inside + math.fsum(below)
                den = ext.mass(R) if ext else mu.mass(R)
                if den == 0:
                    raise DegenerateCubeError(f"chain cube {R} has zero mass")
                r = num / den
                chain_worst = max(chain_worst, r)
                if r > worst:
                    worst, off = r, R
    cfg = family.config
    return PackingReport(worst, off, lvl_worst, chain_worst,
                         cfg.tau if cfg else None, cfg.chain_bound if cfg else None)


def literal_packing(mu: MeasureModel, cubes) -> tuple:
    """Largest ratio of the mass of strict subcubes in ``cubes`` to the mass of
    the cube, over ``cubes``; returns ``(ratio, witness)``."""
    cubes = list(cubes)
    worst, wit = 0.0, None
    for S in cubes:
        mS = mu.mass(S)
        if mS == 0:
            raise DegenerateCubeError(f"cube {S} has zero mass")
        r = math.fsum(mu.mass(c) for c in cubes if c != S and geo.contains(S, c)) / mS
        if r > worst:
            worst, wit = r, S
    return worst, wit


# ------------------------------------------------------------ sparse form

def sparse_form(mu: MeasureModel, family, f, g, measure=None) -> float:
    """Sum over the family of ``a_S <|f|>_S <|g|>_S mu(S)``."""
    af = np.abs(np.asarray(f, float))
    ag = np.abs(np.asarray(g, float))
    cubes = family.cubes() if isinstance(family, SparseFamily) else list(family)
    coef = family.coefficient if isinstance(family, SparseFamily) else (lambda S: 1.0)
    terms = []
    for S in cubes:
        m = measure.mass(S) if measure is not None else mu.mass(S)
        if m == 0:
            continue
        fi = mu.integral(af, S)
        gi = mu.integral(ag, S)
        terms.append(coef(S) * fi * gi / m)
    return math.fsum(terms)


def unselected(family: SparseFamily, S: DyadicCube, mu: MeasureModel, depth: int) -> list:
    """Nonempty cubes inside ``S`` (down to absolute scale ``depth``) that are
    not inside any strictly smaller selected cube of the same grid."""
    if S not in family:
        raise ValueError(f"{S} is not in the family")
    inner = [T for T in family.level_of if T.grid == S.grid and T != S and geo.contains(S, T)]
    out = []
    for I in mu.cubes_in(S, max(0, depth - S.scale)):
        if not any(geo.contains(T, I) for T in inner):
            out.append(I)
    return out


# ---------------------------------------------- Calderón–Zygmund splitting

@dataclass
class CZDecomposition:
    level: float
    scale_const: float
    stopping_cubes: list
    good: np.ndarray
    bad_parts: dict
    exceptional: np.ndarray
    mass_E: float
    bound_E: float
    g_sup_ratio: float


def cz_decompose(mu: MeasureModel, f, lam: float, a: float, root: DyadicCube | None = None,
                 depth: int | None = None) -> CZDecomposition:
    """Maximal cubes ``P`` inside ``root`` with ``mu(3P)^-1 int_P |f| > lam / sqrt(a)``."""
    if lam <= 0 or a <= 0:
        raise ValueError("lambda and a must be positive")
    f = np.asarray(f, float)
    grids = mu.grids
    if root is None:
        root = DyadicCube(0, -2, (-1,) * grids.n)
    if depth is None:
        depth = mu.resolving_scale(root.grid, root.scale) if mu.size else root.scale
    thr = lam / math.sqrt(a)
    af = np.abs(f)
    A = _Averages(mu, af)
    P = []
    stack = [root]
    while stack:
        I = stack.pop()
        avg, m = A(I)
        if m == 0:
            continue
        lo, hi = geo.dilate(I, 3.0, grids)
        m3 = mu.box_mass(lo, hi)
        if avg * m / m3 > thr:
            P.append(I)
        elif I.scale < depth:
            stack.extend(geo.children(I))
    P.sort()
    good = f.copy()
    bad = {}
    E = np.zeros(mu.size, dtype=bool)
    for I in P:
        inP = mu.mask(I)
        par = geo.parent(I)
        onpar = mu.mask(par)
        avg = float(np.sum((f * mu.weights)[inP])) / mu.mass(par)
        b = np.where(inP, f, 0.0) - np.where(onpar, avg, 0.0)
        bad[I] = b
        good = good - b
        lo, hi = geo.dilate(I, 3.0, grids)
        E |= mu.box_mask(lo, hi)
    mE = float(np.sum(mu.weights[E]))
    l1 = float(np.sum(af * mu.weights))
    gsup = float(np.max(np.abs(good))) * math.sqrt(a) / lam if mu.size else 0.0
    return CZDecomposition(lam, math.sqrt(a), P, good, bad, E, mE, math.sqrt(a) / lam * l1, gsup)


# -------------------------------------------------------------- domination

def split_parts(f) -> list:
    """Nonnegative parts with signs: ``f = sum(sign * part)``."""
    f = np.asarray(f)
    if np.iscomplexobj(f):
        parts = []
        for comp, unit in ((f.real, 1), (f.imag, 1j)):
            parts += [(unit, np.maximum(comp, 0.0)), (-unit, np.maximum(-comp, 0.0))]
    else:
        f = f.astype(float)
        parts = [(1, np.maximum(f, 0.0)), (-1, np.maximum(-f, 0.0))]
    return [(s, p) for s, p in parts if np.any(p != 0)]


@dataclass
class DominationReport:
    dual_pair: float
    sparse_value: float
    ratio: float
    family_sizes: list
    packing: list


def domination_report(op, mu: MeasureModel, f, g, cfg: StoppingConfig) -> DominationReport:
    if op.truncation is None:
        raise ValueError("the domination experiment needs a truncated operator")
    dp = op.dual_pair(f, g)
    lam_total = 0.0
    sizes, packs = [], []
    for _, fp in split_parts(f):
        for _, gp in split_parts(g):
            fam = build_family(mu, fp, gp, cfg)
            lam_total += sparse_form(mu, fam, fp, gp)
            sizes.append(len(fam.cubes()))
            packs.append(packing_check(mu, fam).worst_ratio)
    if lam_total == 0:
        ratio = 0.0 if dp == 0 else math.inf
    else:
        ratio = abs(dp) / lam_total
    return DominationReport(dp, lam_total, ratio, sizes, packs)
