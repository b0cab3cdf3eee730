"""The six square functions, the square bilinear forms, the paraproducts and
empirical L2 / weak-L1 probes.

Each square function is a weighted sum ``S(x)^2 = sum_I |<f, h_I>|^2 v_I(x)``
where the atom profiles ``v_I`` depend only on the measure and the
parameters. Profiles are assembled once per ``(j, sign, e)`` into a matrix,
so evaluating many functions costs one matrix product each.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from .geometry import DyadicCube
from .haar import analyze, haar_values, modified_haar
from .kernel import BumpParams, bump_F
from .measure import MeasureModel, carve_subset, density

POLICIES = ("unit", "F-sup")


@dataclass(frozen=True)
class SquareParams:
    e: int = 0
    alpha: float = 1.0
    delta: float = 1.0
    theta: float | None = None
    m_max: int = 64
    epsilon: float | None = None
    coeff_policy: str = "unit"
    e_max: int = 16
    density_M: int = 64
    density_samples: int = 8

    def __post_init__(self):
        if self.coeff_policy not in POLICIES:
            raise ValueError(f"unknown coefficient policy {self.coeff_policy!r}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def th(self) -> float:
        return geo.default_theta(self.alpha, self.delta) if self.theta is None else self.theta


@dataclass
class AuxSet:
    """``J'``: a union of cubes inside the companion cube ``base``."""

    base: DyadicCube
    cubes: tuple
    mass: float
    cap: float
    carved: bool
    feasible: bool = True

    def mask(self, mu: MeasureModel) -> np.ndarray:
        m = np.zeros(mu.size, dtype=bool)
        for c in self.cubes:
            m |= mu.mask(c)
        return m

    def check(self, mu: MeasureModel, tol: float = 1e-12) -> bool:
        if not all(geo.contains(self.base, c) for c in self.cubes):
            return False
        if not self.carved:
            return self.mass <= self.cap * (1 + tol)
        return self.cap / 2 < self.mass <= self.cap * (1 + tol)


def _carve(mu: MeasureModel, base: DyadicCube, cap: float) -> AuxSet:
    m = mu.mass(base)
    if m <= cap:
        return AuxSet(base, (base,), m, cap, False)
    try:
        res = carve_subset(mu, base, cap)
        return AuxSet(base, tuple(res.cubes), res.mass, cap, True)
    except ValueError:
        # an atom heavier than cap/2: keep the lightest single cell, flagged
        s = mu.resolving_scale(base.grid, base.scale)
        cells = [c for c in mu.nonempty(base.grid, s) if geo.contains(base, c)]
        c = min(cells, key=lambda c: (mu.mass(c), c.coords))
        return AuxSet(base, (c,), mu.mass(c), cap, True, feasible=False)


class SquareSystem:
    """Square functions of one grid over the nonempty cubes of ``root`` down
    to ``depth`` levels."""

    def __init__(self, mu: MeasureModel, root: DyadicCube, depth: int, params: SquareParams):
        self.mu = mu
        self.root = root
        self.depth = depth
        self.params = params
        self.cubes = mu.cubes_in(root, depth)
        self.index = {c: i for i, c in enumerate(self.cubes)}
        self.mass = {c: mu.mass(c) for c in self.cubes}
        self.by_scale: dict = {}
        for c in self.cubes:
            self.by_scale.setdefault(c.scale, []).append(c)
        self.total = mu.mass(root)
        pos = [v for v in self.mass.values() if v > 0]
        self.eps_tilde = min(pos) if pos else 1.0
        if params.epsilon is None:
            self.epsilon = 1.0 / ((1.0 + self.eps_tilde ** -2) * (self.total + 1.0))
        else:
            self.epsilon = params.epsilon
        self.aux: dict = {}
        self._design: dict = {}
        self._F: dict = {}
        self._rho: dict = {}
        self._masks: dict = {}

    # -- helpers -------------------------------------------------------
    def mask(self, c: DyadicCube) -> np.ndarray:
        m = self._masks.get(c)
        if m is None:
            m = self.mu.mask(c)
            self._masks[c] = m
        return m

    def side(self, c: DyadicCube) -> float:
        return self.mu.grids.side(c)

    def coeffs(self, f) -> np.ndarray:
        cm = analyze(self.mu, f, self.cubes)
        return np.array([cm[c] for c in self.cubes])

    def F(self, I: DyadicCube, J: DyadicCube) -> float:
        key = (I, J)
        v = self._F.get(key)
        if v is None:
            p = self.params
            v = bump_F(self.mu, I, J, BumpParams(self.mu.alpha, p.delta, p.th))
            self._F[key] = v
        return v

    def rho(self, J: DyadicCube, e: int) -> float:
        key = (J, e)
        v = self._rho.get(key)
        if v is None:
            c = self.mu.grids.center(J)
            side = self.side(J) * 2.0 ** e
            p = self.params
            v = density(self.mu, (c, side), p.density_M, p.density_samples, p.delta).rho
            self._rho[key] = v
        return v

    def partners(self, I: DyadicCube, e: int) -> list:
        """``(J, m, k)`` for nonempty ``J`` with side ``2**-e`` side(I) in the
        universe; ``m - 1 <= rdist(J^, I^) < m`` and ``k`` likewise for the
        inner distance."""
        out = []
        Ip = geo.parent(I)
        for J in self.by_scale.get(I.scale + e, ()):
            Jp = geo.parent(J)
            m = geo.rdist_floor(Ip, Jp) + 1
            k = geo.inrdist_floor(Ip, Jp) + 1
            out.append((J, m, k))
        return out

    # -- auxiliary sets ---------------------------------------------------
    def aux_distant(self, I: DyadicCube, J: DyadicCube) -> AuxSet:
        key = ("distant", I, J)
        a = self.aux.get(key)
        if a is None:
            kids = [K for K in geo.children(J)]
            JI = max(kids, key=lambda K: (self.mu.mass(K), tuple(-x for x in K.coords)))
            cap = self.mass[I] * self.mass[J] / self.total
            a = _carve(self.mu, JI, cap)
            self.aux[key] = a
        return a

    def aux_nested(self, I: DyadicCube, J: DyadicCube) -> AuxSet:
        key = ("nested", I, J)
        a = self.aux.get(key)
        if a is None:
            d = J.scale - I.scale
            m = 1 << d
            coords = tuple(i * m + (j % m) for i, j in zip(I.coords, J.coords))
            JI = DyadicCube(J.grid, J.scale, coords)
            a = _carve(self.mu, JI, self.mu.mass(J))
            self.aux[key] = a
        return a

    def aux_tilde(self, I: DyadicCube, e: int) -> AuxSet:
        key = ("tilde", I, e)
        a = self.aux.get(key)
        if a is None:
            step = (1 << abs(e)) + 1
            cands = []
            for axis in range(I.n):
                for sgn in (1, -1):
                    shift = [0] * I.n
                    shift[axis] = sgn * step
                    cands.append(geo.translate(I, shift))
            T = max(cands, key=lambda c: self.mu.mass(c))  # first maximum wins
            a = _carve(self.mu, T, self.mass[I]) if self.mu.mass(T) > 0 else \
                AuxSet(T, (T,), 0.0, self.mass[I], False)
            self.aux[key] = a
        return a

    def aux_mask(self, a: AuxSet) -> np.ndarray:
        m = np.zeros(self.mu.size, dtype=bool)
        for c in a.cubes:
            m |= self.mask(c)
        return m

    # -- coefficients a_I, b_J -------------------------------------------
    def coef_a(self, I: DyadicCube, e: int) -> float:
        if self.params.coeff_policy == "unit":
            return 1.0
        vals = [self.F(I, J) for J, m, _ in self.partners(I, e) if m <= self.params.m_max]
        return max(vals) if vals else 0.0

    def coef_b(self, J: DyadicCube, e: int) -> float:
        if self.params.coeff_policy == "unit":
            return 1.0
        Jp = geo.parent(J)
        vals = [self.F(I, J) for I in self.by_scale.get(J.scale - e, ())
                if geo.rdist_floor(geo.parent(I), Jp) + 1 <= self.params.m_max]
        return max(vals) if vals else 0.0

    # -- design matrices ---------------------------------------------------
    def design(self, j: int, sign: int, e: int | None = None) -> np.ndarray:
        """Matrix ``V`` with ``S^2 = |c|^2 @ V`` (rows follow ``self.cubes``)."""
        e = abs(self.params.e if e is None else e)
        key = (j, sign, e)
        V = self._design.get(key)
        if V is not None:
            return V
        build = {(1, 1): self._s1p, (1, -1): self._s1m, (2, 1): self._s2p,
                 (2, -1): self._s2m, (3, 1): self._s3p, (3, -1): self._s3m}.get((j, sign))
        if build is None:
            raise ValueError("j must be 1, 2 or 3 and sign +1 or -1")
        V = np.zeros((len(self.cubes), self.mu.size))
        build(V, e)
        self._design[key] = V
        return V

    def _s1p(self, V, e):
        p = self.params
        a, d = self.mu.alpha, p.delta
        for row, I in enumerate(self.cubes):
            if self.mass[I] == 0:
                continue
            aI = None
            for J, m, _ in self.partners(I, e):
                if m < 2 or m > p.m_max:
                    continue
                if aI is None:
                    aI = self.coef_a(I, e)
                aux = self.aux_distant(I, J)
                w = m ** -(a + d) * aI / self.side(I) ** a * self.mass[J] / (aux.mass + self.epsilon)
                V[row] += w * self.aux_mask(aux)

    def _s1m(self, V, e):
        p = self.params
        a, d = self.mu.alpha, p.delta
        for row, J in enumerate(self.cubes):
            if self.mass[J] == 0:
                continue
            Jp = geo.parent(J)
            bJ = None
            for I in self.by_scale.get(J.scale - e, ()):
                m = geo.rdist_floor(geo.parent(I), Jp) + 1
                if m < 2 or m > p.m_max:
                    continue
                if bJ is None:
                    bJ = self.coef_b(J, e)
                aux = self.aux_distant(I, J)
                w = m ** -(a + d) * bJ / (2.0 ** (e * a) * self.side(J) ** a) \
                    * self.mass[I] / (aux.mass + self.epsilon)
                V[row] += w * self.aux_mask(aux)

    def _s2p(self, V, e):
        a = self.mu.alpha
        for row, I in enumerate(self.cubes):
            mI = self.mass[I]
            if mI == 0:
                continue
            lo, hi = geo.dilate(I, 3.0, self.mu.grids)
            w = self.coef_a(I, e) * mI / self.side(I) ** (2 * a)
            V[row] += w * self.mu.box_mask(lo, hi)

    def _s2m(self, V, e):
        for row, J in enumerate(self.cubes):
            mJ = self.mass[J]
            if mJ == 0:
                continue
            V[row] += self.coef_b(J, e) * self.rho(J, e) / mJ * self.mask(J)

    def _s3p(self, V, e):
        th = self.params.th
        klo = math.ceil(2.0 ** (th * e) - 1e-12)
        khi = 2 ** e
        for row, I in enumerate(self.cubes):
            mI = self.mass[I]
            if mI == 0:
                continue
            Ip = geo.parent(I)
            mIp = self.mu.mass(Ip)
            aI = None
            for J, m, k in self.partners(I, e):
                if m != 1 or not (klo <= k <= khi):
                    continue
                frac = _inter(self.mu, I, J) / mI + _inter(self.mu, Ip, J) / mIp
                if frac == 0:
                    continue
                if aI is None:
                    aI = self.coef_a(I, e)
                aux = self.aux_nested(I, J)
                V[row] += aI * frac / (aux.mass + self.epsilon) * self.aux_mask(aux)

    def _s3m(self, V, e):
        for row, I in enumerate(self.cubes):
            if self.mass[I] == 0:
                continue
            aux = self.aux_tilde(I, e)
            V[row] += self.coef_b(I, e) / (aux.mass + self.epsilon) * self.aux_mask(aux)

    # -- evaluation ---------------------------------------------------------
    def square(self, f, j: int, sign: int, e: int | None = None, coeffs=None) -> np.ndarray:
        c = self.coeffs(f) if coeffs is None else coeffs
        s2 = (c * c) @ self.design(j, sign, e)
        return np.sqrt(np.maximum(s2, 0.0))

    def aux_report(self) -> dict:
        feas = [a for a in self.aux.values() if a.feasible]
        bad = [k for k, a in self.aux.items() if a.feasible and not a.check(self.mu)]
        return {"entries": len(self.aux), "feasible": len(feas),
                "infeasible": len(self.aux) - len(feas), "violations": bad}


def _inter(mu: MeasureModel, R: DyadicCube, J: DyadicCube) -> float:
    if geo.contains(R, J):
        return mu.mass(J)
    if geo.contains(J, R):
        return mu.mass(R)
    return 0.0


def square_fn(mu: MeasureModel, f, j: int, sign: int, params: SquareParams,
              system: SquareSystem | None = None, root: DyadicCube | None = None,
              depth: int = 4) -> np.ndarray:
    if system is None:
        root = DyadicCube(0, -2, (-1,) * mu.n) if root is None else root
        system = SquareSystem(mu, root, depth, params)
    return system.square(f, j, sign, params.e)


def inner(mu: MeasureModel, u, v) -> float:
    return float(np.sum(np.asarray(u) * np.asarray(v) * mu.weights))


def square_bilinear(system: SquareSystem, f, g, sign0: int = 1, e_max: int | None = None) -> dict:
    """``B(f, g)`` summed over ``|e| <= e_max`` with weights ``2**(-|e| theta delta / 2)``.

    ``sign0`` is the pairing used for ``e = 0``.
    """
    p = system.params
    e_max = p.e_max if e_max is None else e_max
    cf, cg = system.coeffs(f), system.coeffs(g)
    mu = system.mu
    total = 0.0
    terms = {}
    rate = p.th * p.delta / 2
    for e in range(-e_max, e_max + 1):
        s = sign0 if e == 0 else (1 if e > 0 else -1)
        w = 2.0 ** (-abs(e) * rate)
        part = 0.0
        for j in (1, 2, 3):
            part += inner(mu, system.square(f, j, s, abs(e), cf), system.square(g, j, -s, abs(e), cg))
        terms[e] = w * part
        total += w * part
    tail = 2.0 ** (-(e_max + 1) * rate) / (1 - 2.0 ** -rate) * 2
    return {"value": total, "terms": terms, "tail_weight": tail}


def distant_partial_sum(system: SquareSystem, f, g, e: int) -> float:
    """``sum_m m^-(alpha+delta) sum_J sum_{I in J_{e,m}}`` of
    ``mu(I)^1/2 mu(J)^1/2 / side(I)^alpha |<f,h_I>| |<g,h_J>|`` over the
    distant pairs (``m >= 2``) with ``I`` larger by ``e`` levels."""
    mu = system.mu
    p = system.params
    a, d = mu.alpha, p.delta
    cf, cg = system.coeffs(f), system.coeffs(g)
    tot = 0.0
    for row, I in enumerate(system.cubes):
        if cf[row] == 0:
            continue
        for J, m, _ in system.partners(I, e):
            if m < 2 or m > p.m_max:
                continue
            cj = cg[system.index[J]]
            tot += m ** -(a + d) * math.sqrt(system.mass[I] * system.mass[J]) / system.side(I) ** a \
                * abs(cf[row]) * abs(cj)
    return tot


# --------------------------------------------------------------- paraproducts

def paraproduct(op, f, g, side: int, root: DyadicCube, depth: int, theta: float,
                S: DyadicCube | None = None) -> float:
    """Exact double sum of the paraproduct of the given side over the
    nonempty cubes of ``root`` down to ``depth`` levels."""
    mu = op.mu
    S = root if S is None else S
    cubes = mu.cubes_in(root, depth)
    cf = analyze(mu, f, cubes)
    cg = analyze(mu, g, cubes)
    ind = mu.mask(S).astype(float)
    total = 0.0
    if side == 1:
        for I in cubes:
            a = cf[I]
            if a == 0:
                continue
            Ip = geo.parent(I)
            for J in cubes:
                b = cg[J]
                if b == 0:
                    continue
                Jp = geo.parent(J)
                if not geo.strictly_contains(Ip, Jp) or geo.lam(Ip, Jp, theta) <= 1:
                    continue
                c = modified_haar(mu, I, Jp, S).constant
                if c == 0:
                    continue
                total += a * b * c * _entry(op, ("1S", J), lambda: op.dual_pair(ind, haar_values(mu, J)))
        return float(total)
    if side == 2:
        for J in cubes:
            b = cg[J]
            if b == 0:
                continue
            Jp = geo.parent(J)
            for I in cubes:
                a = cf[I]
                if a == 0:
                    continue
                Ip = geo.parent(I)
                if not geo.strictly_contains(Jp, Ip) or geo.lam(Ip, Jp, theta) <= 1:
                    continue
                c = modified_haar(mu, J, Ip, S).constant
                if c == 0:
                    continue
                total += a * b * c * _entry(op, ("S1", I), lambda: op.dual_pair(haar_values(mu, I), ind))
        return float(total)
    raise ValueError("side must be 1 or 2")


def _entry(op, key, fn):
    return op._cached(key, fn)


# ------------------------------------------------------------------- probes

@dataclass
class ProbeReport:
    probe: str
    j: int
    sign: int
    e: int
    constant: float
    witness: int
    a: float


def weak_l1_level(mu: MeasureModel, s) -> float:
    """``sup_lambda lambda mu(s > lambda)``, computed exactly on atoms."""
    s = np.asarray(s, float)
    if s.size == 0:
        return 0.0
    order = np.argsort(-s, kind="stable")
    vals = s[order]
    cum = np.cumsum(mu.weights[order])
    # for lambda just below vals[k], the set {s > lambda} has mass cum[last index with value vals[k]]
    last = np.searchsorted(-vals, -vals, side="right") - 1
    return float(np.max(vals * cum[last]))


def probe_constant(system: SquareSystem, probe: str, j: int, sign: int, corpus, e: int | None = None):
    mu = system.mu
    e = system.params.e if e is None else e
    a = 1.0
    if system.params.coeff_policy == "F-sup":
        a = policy_a(system, e)
    best, wit = 0.0, -1
    for idx, f in enumerate(corpus):
        f = np.asarray(f, float)
        s = system.square(f, j, sign, e)
        if probe == "L2":
            nf = math.sqrt(float(np.sum(f * f * mu.weights)))
            val = 0.0 if nf == 0 else math.sqrt(float(np.sum(s * s * mu.weights))) / (math.sqrt(a) * nf)
        elif probe == "weakL1":
            nf = float(np.sum(np.abs(f) * mu.weights))
            val = 0.0 if nf == 0 else weak_l1_level(mu, s) / (math.sqrt(a) * nf)
        else:
            raise ValueError("probe must be 'L2' or 'weakL1'")
        if val > best:
            best, wit = val, idx
    return ProbeReport(probe, j, sign, e, best, wit, a)


def policy_a(system: SquareSystem, e: int) -> float:
    """``sup (1 + rho(2^e I))^2 (1 + rho(I))^2 sup F`` over the universe."""
    best = 0.0
    for I in system.cubes:
        if system.mass[I] == 0:
            continue
        r1 = system.rho(I, abs(e))
        r0 = system.rho(I, 0)
        Fs = max(system.coef_a(I, abs(e)), system.coef_b(I, abs(e)), 1.0)
        best = max(best, (1 + r1) ** 2 * (1 + r0) ** 2 * Fs)
    return best


def operator_norm_probe(system: SquareSystem, probe: str, j: int, sign: int, corpus) -> ProbeReport:
    if len(corpus) == 0:
        raise ValueError("corpus must be nonempty")
    return probe_constant(system, probe, j, sign, corpus)
