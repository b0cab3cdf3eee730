"""Calderón–Zygmund kernels, their smooth truncations, exact dual pairs on
atomic measures and the bump-estimate right-hand sides."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import geometry as geo
from .geometry import DyadicCube
from .haar import haar_values, modified_haar
from .measure import MeasureModel, dilate_masses

FAMILIES = ("signed_power", "cauchy_real", "cauchy_imag", "zero", "custom")
F_DEPTH = 16


class DiagonalError(ValueError):
    pass


def phi(x):
    """Cosine-squared taper: 1 below 1, 0 above 2."""
    x = np.abs(np.asarray(x, float))
    mid = np.cos(0.5 * np.pi * (x - 1.0)) ** 2
    return np.where(x < 1.0, 1.0, np.where(x <= 2.0, mid, 0.0))


@dataclass(frozen=True)
class KernelSpec:
    family: str = "signed_power"
    alpha: float = 1.0
    delta: float = 1.0
    func: Callable | None = None
    antisymmetric: bool | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (0 < self.delta <= 1):
            raise ValueError("delta must lie in (0, 1]")
        if self.family == "custom" and self.func is None:
            raise ValueError("custom kernels need a callable")

    @property
    def is_antisymmetric(self) -> bool:
        if self.antisymmetric is not None:
            return self.antisymmetric
        return self.family in ("signed_power", "cauchy_real", "cauchy_imag", "zero")

    def __call__(self, t, x):
        """Vectorised raw kernel; ``t`` and ``x`` broadcast over leading axes."""
        t = np.asarray(t, float)
        x = np.asarray(x, float)
        if self.family == "custom":
            return np.asarray(self.func(t, x), float)
        d = x - t
        r = np.sqrt(np.sum(d * d, axis=-1))
        if self.family == "zero":
            return np.zeros(r.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "signed_power":
                return d[..., 0] / r ** (self.alpha + 1.0)
            if d.shape[-1] != 2:
                raise ValueError("the Cauchy kernel is planar")
            # 1/(t - x) = -conj(d)/|d|^2
            if self.family == "cauchy_real":
                return -d[..., 0] / r ** 2
            return d[..., 1] / r ** 2

    def to_dict(self) -> dict:
        return {"family": self.family, "alpha": self.alpha, "delta": self.delta}


@dataclass(frozen=True)
class TruncationSpec:
    gamma: float
    Q_exponent: int = 2

    def __post_init__(self):
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def Q_side(self) -> float:
        return 2.0 ** (self.Q_exponent + 1)

    def factor(self, t, x):
        t = np.asarray(t, float)
        x = np.asarray(x, float)
        r = np.sqrt(np.sum((x - t) ** 2, axis=-1))
        nt = np.sqrt(np.sum(t * t, axis=-1))
        nx = np.sqrt(np.sum(x * x, axis=-1))
        L = self.Q_side
        return (1.0 - phi(r / self.gamma)) * phi(4 * nt / L) * phi(4 * nx / L)


class Operator:
    """A kernel, an optional truncation and the atomic measure it acts on."""

    def __init__(self, kernel: KernelSpec, mu: MeasureModel, truncation: TruncationSpec | None = None,
                 transpose: bool = False, cache_size: int = 200000):
        self.kernel = kernel
        self.truncation = truncation
        self.mu = mu
        self.transposed = transpose
        self._matrix = None
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def T(self) -> "Operator":
        op = Operator(self.kernel, self.mu, self.truncation, not self.transposed, self._cache_size)
        if self._matrix is not None:
            op._matrix = self._matrix.T.copy()
        return op

    def eval(self, t, x) -> float:
        if self.transposed:
            t, x = x, t
        t = np.asarray(t, float)
        x = np.asarray(x, float)
        if self.truncation is None:
            if np.all(t == x):
                raise DiagonalError("kernel evaluated on the diagonal")
            return float(self.kernel(t, x))
        fac = float(self.truncation.factor(t, x))
        if fac == 0.0:
            return 0.0
        return float(self.kernel(t, x)) * fac

    def matrix(self) -> np.ndarray:
        """``M[p, q] = K(t_p, x_q)`` with the truncation applied."""
        if self._matrix is not None:
            return self._matrix
        P = self.mu.points
        t = P[:, None, :]
        x = P[None, :, :]
        if self.transposed:
            t, x = x, t
        same = np.all(t == x, axis=-1)
        if self.truncation is None:
            off = same & ~np.eye(len(P), dtype=bool)
            if np.any(off):
                raise DiagonalError("distinct atoms coincide")
            if not self.kernel.is_antisymmetric:
                raise DiagonalError("symmetric kernels need a truncation")
        # diagonal values are discarded below
        with np.errstate(divide="ignore", invalid="ignore"):
            K = self.kernel(t, x)
        if self.truncation is None:
            K = np.where(same, 0.0, K)
        else:
            fac = self.truncation.factor(t, x)
            K = np.where(fac == 0.0, 0.0, np.nan_to_num(K) * fac)
        self._matrix = K
        return K

    def apply(self, f) -> np.ndarray:
        """``Tf`` at the atoms: sum over t of K(t, x) f(t) w(t)."""
        return (np.asarray(f, float) * self.mu.weights) @ self.matrix()

    def dual_pair(self, f, g) -> float:
        w = self.mu.weights
        a = np.asarray(f, float) * w
        b = np.asarray(g, float) * w
        if not a.any() or not b.any():
            return 0.0
        return float(np.sum(self.matrix() * np.outer(a, b)))

    def _cached(self, key, fn):
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        v = fn()
        self._cache[key] = v
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return v

    def wavelet_entry(self, I: DyadicCube, J: DyadicCube) -> float:
        def go():
            if self.mu.mass(I) == 0 or self.mu.mass(J) == 0:
                return 0.0
            return self.dual_pair(haar_values(self.mu, I), haar_values(self.mu, J))
        return self._cached((str(I), str(J)), go)


def eval_kernel(op: Operator, t, x) -> float:
    return op.eval(t, x)


def dual_pair(op: Operator, f, g) -> float:
    return op.dual_pair(f, g)


def wavelet_entry(op: Operator, I: DyadicCube, J: DyadicCube) -> float:
    return op.wavelet_entry(I, J)


def testing_ratio(op: Operator, I: DyadicCube) -> float:
    mu = op.mu
    m = mu.mass(I)
    if m == 0:
        raise ValueError("testing ratio undefined on a null cube")
    ind = mu.mask(I).astype(float)
    a = op.apply(ind) * ind
    b = op.T().apply(ind) * ind
    na = math.sqrt(float(np.sum(a * a * mu.weights)))
    nb = math.sqrt(float(np.sum(b * b * mu.weights)))
    return (na + nb) / math.sqrt(m)


def smoothness_ratio(kernel: KernelSpec, t, tp, x, xp) -> float:
    t, tp, x, xp = (np.asarray(v, float) for v in (t, tp, x, xp))
    r = float(np.linalg.norm(t - x))
    h = float(np.linalg.norm(t - tp) + np.linalg.norm(x - xp))
    if not 2 * h < r:
        raise ValueError("need 2(|t-t'| + |x-x'|) < |t-x|")
    if h == 0:
        return 0.0
    diff = abs(float(kernel(t, x)) - float(kernel(tp, xp)))
    return diff / ((h / r) ** kernel.delta / r ** kernel.alpha)


# ------------------------------------------------------------- bump bounds

@dataclass
class BumpParams:
    alpha: float
    delta: float
    theta: float
    depth: int = F_DEPTH


def _mu_inter(mu: MeasureModel, R: DyadicCube, J: DyadicCube) -> float:
    if geo.contains(R, J):
        return mu.mass(J)
    if geo.contains(J, R):
        return mu.mass(R)
    return 0.0


def regime(I: DyadicCube, J: DyadicCube, theta: float) -> int | None:
    """Geometric regime of the pair, or None when no bump estimate applies."""
    Ip, Jp = geo.parent(I), geo.parent(J)
    pm = geo.pair_metrics(Ip, Jp, theta)
    big_side_units = 1 << (pm.unit_scale - min(I.scale, J.scale))
    # dist(I^, J^) compared with 2 side(I v J), exactly
    if pm.dist2 > 4 * big_side_units ** 2:
        return 1
    if pm.dist2 > 0:
        return 2
    if pm.lam > 1 and J.scale > I.scale:
        return 3
    return None


def bump_F(mu: MeasureModel, I: DyadicCube, J: DyadicCube, params: BumpParams) -> float:
    """``F = F1 + F2 + F3`` with the modulating functions equal to one."""
    Ip, Jp = geo.parent(I), geo.parent(J)
    pm = geo.pair_metrics(Ip, Jp, params.theta)
    if pm.dist2 > 0:
        return 1.0
    if pm.lam <= 1:
        return 0.0
    return _F2(mu, I, J, pm.inrdist, params) + _F3(params)


def _F2(mu, I, J, inr_parents, params) -> float:
    small = J if J.scale >= I.scale else I
    g = mu.grids
    c = g.center(small)
    side = (1.0 + inr_parents) * g.side(small)
    ks = np.arange(params.depth)
    sides = side * 2.0 ** ks
    masses = dilate_masses(mu, c, side, 2.0 ** ks)
    return float(np.sum(2.0 ** (-ks * params.delta) * masses / sides ** params.alpha))


def _F3(params) -> float:
    ks = np.arange(params.depth)
    return float(np.sum(2.0 ** (-ks * params.delta)))


def bump_bound(mu: MeasureModel, I: DyadicCube, J: DyadicCube, kind: int, params: BumpParams) -> float:
    got = regime(I, J, params.theta)
    if got != kind:
        raise ValueError(f"pair is in regime {got}, not {kind}")
    mI, mJ = mu.mass(I), mu.mass(J)
    if mI == 0 or mJ == 0:
        return 0.0
    a, d = params.alpha, params.delta
    g = mu.grids
    pm = geo.pair_metrics(I, J, params.theta)
    big = max(g.side(I), g.side(J))
    small = min(g.side(I), g.side(J))
    root = math.sqrt(mI * mJ)
    if kind == 1:
        return pm.ec ** d / (1 + pm.rdist) ** (a + d) * root / big ** a
    if kind == 2:
        # h_J lives on the parent, so the decay is measured by the gap between
        # the parents in units of the smaller side
        pmp = geo.pair_metrics(geo.parent(I), geo.parent(J), params.theta)
        gap = math.sqrt(pmp.dist2) / (1 << (pmp.unit_scale - max(I.scale, J.scale)))
        return (1 + gap) ** -(a + d) * root / small ** a
    Ip, Jp = geo.parent(I), geo.parent(J)
    pmp = geo.pair_metrics(Ip, Jp, params.theta)
    first = 0.0
    for R in (I, Ip):
        mR = mu.mass(R)
        if mR > 0:
            first += math.sqrt(_mu_inter(mu, R, J) / mR)
    first *= (1 + pm.inrdist) ** -d * _F2(mu, I, J, pmp.inrdist, params)
    num, sc = geo.center_num(Jp)
    ring = geo.point_in_cube(num, sc, Ip) and not geo.point_in_cube(num, sc, I)
    second = 0.0
    if ring:
        second = (1 + pm.inrdist) ** -(a + d) * root / small ** a * _F3(params)
    return first + second


def bump_entry(op: Operator, I: DyadicCube, J: DyadicCube, kind: int, S) -> float:
    """The quantity the bump estimate controls in the given regime."""
    if kind in (1, 2):
        return op.wavelet_entry(I, J)
    mu = op.mu
    if mu.mass(I) == 0 or mu.mass(J) == 0:
        return 0.0
    h = haar_values(mu, I) - modified_haar(mu, I, geo.parent(J), S).values(mu)
    return op.dual_pair(h, haar_values(mu, J))
