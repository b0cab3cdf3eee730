import math

import numpy as np
import pytest

from conftest import atomic, root_cube
from sparsedom import geometry as geo
from sparsedom import sparse as sp
from sparsedom.fixtures import fixture_measure
from sparsedom.geometry import DyadicCube
from sparsedom.kernel import KernelSpec, Operator, TruncationSpec
from sparsedom.measure import extend
from sparsedom.sparse import (ConfigError, DegenerateCubeError, SparseFamily, StoppingConfig,
                              build_family, cz_decompose, domination_report, literal_packing,
                              min_stopping_constant, packing_check, sparse_form, split_parts,
                              unselected)


def cfg_for(mu, factor=1.5, q=1):
    k = mu.grids.k
    return StoppingConfig(factor * min_stopping_constant(k, mu.alpha, q), q, k, mu.alpha)


# -- configuration -----------------------------------------------------------------

def test_tau_window():
    cfg = StoppingConfig(60.0, 1, 1, 1.0).validate()
    assert cfg.tau == pytest.approx(1 / 14)
    assert 0 < cfg.tau < 2 ** -1
    assert cfg.chain_bound == pytest.approx(1 / 14 + 0.5)


@pytest.mark.parametrize("C,q", [(4.0, 1), (3.0, 1), (12.0, 1), (60.0, 0)])
def test_bad_configs(C, q):
    with pytest.raises(ConfigError):
        StoppingConfig(C, q, 1, 1.0).validate()


def test_min_constant_is_infimum():
    C0 = min_stopping_constant(2, 0.63, 2)
    StoppingConfig(C0 * 1.0001, 2, 2, 0.63).validate()
    with pytest.raises(ConfigError):
        StoppingConfig(C0, 2, 2, 0.63).validate()


def test_negative_input_rejected(cantor6):
    f = np.ones(cantor6.size)
    f[3] = -1
    with pytest.raises(ValueError):
        build_family(cantor6, f, np.ones(cantor6.size), cfg_for(cantor6))


def test_support_outside_central_half():
    mu = atomic([[0.1], [0.9], [-0.93]], [0.3, 0.3, 0.3], n_max=6, separate=False)
    f = np.array([1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        build_family(mu, f, f, cfg_for(mu))


# -- family construction ------------------------------------------------------------

def test_constant_functions_select_nothing(cantor6):
    cfg = cfg_for(cantor6)
    one = np.ones(cantor6.size)
    fam = build_family(cantor6, one, 2 * one, cfg)
    Qp, Q = fam.tops[0]
    assert fam.levels[0] == [[Qp]]
    assert fam.chain[0] == [Q]
    assert set(fam.cubes()) == {Qp, Q}


def test_single_spike_hand_trace():
    # four atoms; f is a spike on the light atom
    w = [0.01, 0.33, 0.33, 0.33]
    mu = atomic([[0.12], [0.37], [0.62], [0.87]], w, n_max=8)
    cfg = cfg_for(mu)
    f = np.array([5.0, 0.0, 0.0, 0.0])
    g = np.ones(4)
    fam = build_family(mu, f, g, cfg)
    Qp = root_cube()
    avg_Qp = 5.0 * 0.01 / mu.total()
    # hand trace: among cubes three levels below Q' and their descendants, the
    # maximal one holding atom 0 whose average beats C <f>_{Q'}
    p = mu.points[0]
    sel = None
    for s in range(Qp.scale + 3, 10):
        J = mu.grids.cube_at(0, s, p)
        if 5.0 * 0.01 / mu.mass(J) > cfg.C_stop * avg_Qp:
            sel = J
            break
    assert sel is not None and fam.levels[0][1][0] == sel
    assert fam.provenance[sel] == "f-condition"
    kids = {mu.grids.cube_at(0, sel.scale + d, p) for d in (1, 2)}
    assert set(fam.levels[0][1]) == {sel} | kids
    assert len(fam.levels[0]) == 2


@pytest.mark.parametrize("name", ["cantor6", "uniform64", "twocluster", "cantor2d3"])
def test_generated_families_pack(name, rng):
    mu = fixture_measure(name)
    cfg = cfg_for(mu)
    for _ in range(3):
        f = np.exp(rng.normal(0, 3, mu.size))
        g = np.exp(rng.normal(0, 3, mu.size))
        fam = build_family(mu, f, g, cfg)
        rep = packing_check(mu, fam)
        assert rep.level_ratio <= cfg.tau
        assert rep.chain_ratio <= cfg.chain_bound
        assert rep.ok


def test_family_structure(cantor6, rng):
    cfg = cfg_for(cantor6)
    f = np.exp(rng.normal(0, 3, cantor6.size))
    fam = build_family(cantor6, f, f, cfg)
    levels = fam.levels[0]
    for i in range(1, len(levels)):
        for J in levels[i]:
            tag = fam.provenance[J]
            assert tag in ("f-condition", "g-condition", "offspring ch1", "offspring ch2")
            if tag.startswith("f") or tag.startswith("g"):
                assert any(geo.in_central_half(S, geo.parent(J)) for S in levels[i - 1])
    doc = fam.to_dict()
    assert set(doc) == {"levels", "chain", "coefficients", "provenance"}
    assert len(doc["coefficients"]) == len(fam.cubes())


# -- packing ------------------------------------------------------------------------

def test_root_only_packing(cantor6):
    Qp = root_cube()
    fam = SparseFamily(levels={0: [[Qp]]}, chain={0: []}, level_of={Qp: 0})
    rep = packing_check(cantor6, fam)
    assert rep.worst_ratio == 0.0 and rep.offending is None


def test_adversarial_nested_chain_flagged(cantor6):
    # every cube of a nested chain around one atom: sub-masses outweigh the top
    p = cantor6.points[0]
    chain = [cantor6.grids.cube_at(0, s, p) for s in range(-2, 12)]
    ratio, wit = literal_packing(cantor6, chain)
    assert ratio >= 1
    assert wit in chain
    Qp = chain[0]
    fam = SparseFamily(levels={0: [[c] for c in chain]}, chain={0: []},
                       level_of={c: i for i, c in enumerate(chain)},
                       config=cfg_for(cantor6))
    rep = packing_check(cantor6, fam)
    assert not rep.ok and rep.offending in chain and Qp == chain[0]


def test_degenerate_cube_flagged(cantor6):
    null = next(c for c in cantor6.cubes_in(root_cube(), 4, include_empty=True) if cantor6.mass(c) == 0)
    with pytest.raises(DegenerateCubeError):
        literal_packing(cantor6, [null])


def test_chain_uses_extended_measure(cantor6, rng):
    cfg = cfg_for(cantor6, q=2)
    f = np.exp(rng.normal(0, 2, cantor6.size))
    fam = build_family(cantor6, f, f, cfg)
    Qp, Q = fam.tops[0]
    ext = extend(cantor6, Qp)
    R1 = fam.chain[0][0]
    inside = math.fsum(cantor6.mass(c) for lev in fam.levels[0] for c in lev)
    assert packing_check(cantor6, fam).chain_ratio >= inside / ext.mass(R1) - 1e-15


# -- sparse form ----------------------------------------------------------------------

def test_sparse_form_zero(cantor6):
    fam = build_family(cantor6, np.ones(cantor6.size), np.ones(cantor6.size), cfg_for(cantor6))
    assert sparse_form(cantor6, fam, np.zeros(cantor6.size), np.ones(cantor6.size)) == 0.0


def test_sparse_form_hand_value():
    mu = atomic([[0.2], [0.5], [0.8]], [0.2, 0.3, 0.5], n_max=6)
    f = np.array([1.0, -2.0, 3.0])
    g = np.array([0.5, 0.5, -1.0])
    S = root_cube()
    mS = 1.0
    af = (0.2 * 1 + 0.3 * 2 + 0.5 * 3) / mS
    ag = (0.2 * 0.5 + 0.3 * 0.5 + 0.5 * 1) / mS
    assert sparse_form(mu, [S], f, g) == pytest.approx(af * ag * mS, rel=1e-15)


def test_sparse_form_null_cube_ignored(cantor6):
    null = next(c for c in cantor6.cubes_in(root_cube(), 4, include_empty=True) if cantor6.mass(c) == 0)
    one = np.ones(cantor6.size)
    assert sparse_form(cantor6, [null], one, one) == 0.0


def test_sparse_form_monotone(cantor6, rng):
    fam = build_family(cantor6, np.exp(rng.normal(size=cantor6.size)), np.ones(cantor6.size),
                       cfg_for(cantor6))
    f, g = rng.normal(size=cantor6.size), rng.normal(size=cantor6.size)
    base = sparse_form(cantor6, fam, f, g)
    assert sparse_form(cantor6, fam, 2 * np.abs(f), g) >= base
    for S in fam.cubes()[:3]:
        fam.coefficients[S] = 3.0
    assert sparse_form(cantor6, fam, f, g) >= base


# -- unselected cubes -------------------------------------------------------------------

def test_unselected_root_only(cantor6):
    fam = build_family(cantor6, np.ones(cantor6.size), np.ones(cantor6.size), cfg_for(cantor6))
    Qp = root_cube()
    assert unselected(fam, Qp, cantor6, 3) == cantor6.cubes_in(Qp, 5)
    with pytest.raises(ValueError):
        unselected(fam, geo.children(Qp)[0], cantor6, 3)


def test_unselected_partition(cantor6, rng):
    cfg = cfg_for(cantor6)
    f = np.exp(rng.normal(0, 3, cantor6.size))
    fam = build_family(cantor6, f, np.ones(cantor6.size), cfg)
    Qp = root_cube()
    depth = Qp.scale + 5
    assert len(fam.levels[0]) >= 2
    owners: dict = {}
    inner = [S for lev in fam.levels[0] for S in lev if S.scale <= depth]
    for S in inner:
        for I in unselected(fam, S, cantor6, depth):
            owners.setdefault(I, []).append(S)
    universe = cantor6.cubes_in(Qp, 5)
    assert set(owners) == set(universe)
    assert all(len(v) == 1 for v in owners.values())


def test_unselected_obey_stopping_rule(cantor6, rng):
    cfg = cfg_for(cantor6)
    f = np.exp(rng.normal(0, 3, cantor6.size))
    g = np.exp(rng.normal(0, 3, cantor6.size))
    fam = build_family(cantor6, f, g, cfg)
    depth = cantor6.resolving_scale(0, -2)
    checked = 0
    for lev in fam.levels[0]:
        for S in lev:
            if fam.provenance[S].startswith("offspring"):
                continue
            fS, gS = cantor6.average(f, S), cantor6.average(g, S)
            for J in unselected(fam, S, cantor6, depth):
                if J.scale < S.scale + 3 or not geo.in_central_half(S, geo.parent(J)):
                    continue
                assert cantor6.average(f, J) <= cfg.C_stop * fS
                assert cantor6.average(g, J) <= cfg.C_stop * gS
                checked += 1
    assert checked > 0


# -- Calderón–Zygmund decomposition -------------------------------------------------------

def test_cz_empty_when_level_high(cantor6, rng):
    f = rng.normal(size=cantor6.size)
    a = 4.0
    sup_density = max(abs(f) * cantor6.weights) / min(cantor6.weights)
    cz = cz_decompose(cantor6, f, 2 * sup_density * math.sqrt(a), a)
    assert cz.stopping_cubes == []
    assert np.array_equal(cz.good, f)


def test_cz_single_spike(uniform16):
    f = np.zeros(uniform16.size)
    f[5] = 40.0
    cz = cz_decompose(uniform16, f, 1.0, 1.0)
    assert len(cz.stopping_cubes) == 1
    (P,) = cz.stopping_cubes
    b = cz.bad_parts[P]
    # two-term hand sum: f w on P minus the parent average times mu(parent)
    assert math.fsum(b * uniform16.weights) == pytest.approx(0.0, abs=1e-15)
    assert np.all(b[~uniform16.mask(geo.parent(P))] == 0)


@pytest.mark.parametrize("name", ["cantor6", "twocluster", "uniform2d"])
def test_cz_invariants(name, rng):
    mu = fixture_measure(name)
    for _ in range(5):
        f = rng.normal(size=mu.size) * np.exp(rng.normal(0, 2, mu.size))
        lam = float(np.exp(rng.uniform(-1, 3)))
        a = float(np.exp(rng.uniform(0, 2)))
        cz = cz_decompose(mu, f, lam, a)
        recon = cz.good + sum(cz.bad_parts.values(), np.zeros(mu.size))
        assert np.allclose(recon, f, rtol=0, atol=1e-12 * np.abs(f).max())
        l1 = float(np.sum(np.abs(f) * mu.weights))
        for P, b in cz.bad_parts.items():
            assert abs(np.sum(b * mu.weights)) <= 1e-12 * l1
            lo, hi = geo.dilate(P, 3.0, mu.grids)
            assert mu.integral(np.abs(f), P) / mu.box_mass(lo, hi) > lam / math.sqrt(a)
            if P == root_cube(mu.n):
                continue
            Pp = geo.parent(P)
            plo, phi = geo.dilate(Pp, 3.0, mu.grids)
            assert mu.integral(np.abs(f), Pp) / mu.box_mass(plo, phi) <= lam / math.sqrt(a)
        for P, R in zip(cz.stopping_cubes, cz.stopping_cubes[1:]):
            assert not (mu.mask(P) & mu.mask(R)).any()
        assert cz.mass_E <= cz.bound_E * (1 + 1e-12)


# -- domination ----------------------------------------------------------------------------

def test_domination_zero_kernel(cantor6):
    op = Operator(KernelSpec("zero"), cantor6, TruncationSpec(2 ** -5))
    one = np.ones(cantor6.size)
    rep = domination_report(op, cantor6, one, one, cfg_for(cantor6))
    assert rep.ratio == 0.0


def test_domination_far_supports(cantor6, rng):
    op = Operator(KernelSpec("signed_power", cantor6.alpha), cantor6, TruncationSpec(2 ** -6))
    x = cantor6.points[:, 0]
    f = np.where(x < 0.2, rng.uniform(0.5, 1, cantor6.size), 0.0)
    g = np.where(x > 0.8, rng.uniform(0.5, 1, cantor6.size), 0.0)
    rep = domination_report(op, cantor6, f, g, cfg_for(cantor6))
    assert np.isfinite(rep.ratio) and 0 < rep.ratio < 1


def test_domination_requires_truncation(cantor6):
    op = Operator(KernelSpec(), cantor6)
    with pytest.raises(ValueError):
        domination_report(op, cantor6, np.ones(cantor6.size), np.ones(cantor6.size), cfg_for(cantor6))


def test_domination_infinite_sentinel(cantor6, monkeypatch):
    op = Operator(KernelSpec(), cantor6, TruncationSpec(2 ** -6))
    monkeypatch.setattr(sp, "sparse_form", lambda *a, **k: 0.0)
    f = np.where(cantor6.points[:, 0] < 0.2, 1.0, 0.0)
    g = np.where(cantor6.points[:, 0] > 0.8, 1.0, 0.0)
    assert domination_report(op, cantor6, f, g, cfg_for(cantor6)).ratio == math.inf


def test_split_parts_reconstruct(rng):
    f = rng.normal(size=20) + 1j * rng.normal(size=20)
    parts = split_parts(f)
    assert len(parts) == 4
    assert np.allclose(sum(s * p for s, p in parts), f)
    assert all(np.all(p >= 0) for _, p in parts)
    assert split_parts(np.zeros(3)) == []
