import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from abelian_higgs import operators as ops, suites
from abelian_higgs.expansion import bounds, coefficients as coef, polymers as poly
from abelian_higgs.expansion.large_field import sigma_and_f
from abelian_higgs.expansion.regions import Thresholds, classify_regions
from abelian_higgs.lattice import BlockPartition, LatticeGeometry
from abelian_higgs.model import BENCHMARK, Couplings

COUP = Couplings.from_masses(0.5, 2.0, 2.0)


@pytest.fixture(scope="module")
def setup():
    return suites._small_setup(4, COUP)


# -- coefficients ---------------------------------------------------------------------
@pytest.mark.parametrize("family", coef.FAMILIES)
def test_series_reproduces_vertex(setup, family):
    _, rep = suites.vertex_checks(family, setup, seed=3)
    assert rep.passed, rep


@given(st.integers(0, 2 ** 31), st.floats(0.01, 0.2))
def test_quartic_series_exact_for_any_field(seed, scale):
    # the quartic vertex is a polynomial of degree four, so the series is exact for every field
    s = suites._small_setup(3, COUP)
    rng = np.random.default_rng(seed)
    xi_c = np.nonzero(s.phi_mask)[0][:4]
    eta_c = np.nonzero(s.psi_mask)[0][:3]
    system = coef.extract_coefficients("quartic", s, 4, xi_c, eta_c)
    phi = np.zeros(s.n)
    psi = np.zeros(2 * s.n)
    phi[xi_c] = rng.normal(0, scale, len(xi_c))
    psi[eta_c] = rng.normal(0, scale, len(eta_c))
    direct = coef.vertex_function("quartic", s, phi, psi)
    assert system.evaluate(phi, psi) == pytest.approx(direct, rel=1e-10, abs=1e-300)


def test_spot_values():
    for rep in suites.spot_checks(BENCHMARK):
        assert rep.passed, rep


def test_unknown_family(setup):
    with pytest.raises(ValueError):
        coef.coefficient_values("nope", setup, (1, 0), [[0]], np.zeros((1, 0), int))
    with pytest.raises(ValueError):
        coef.slot_kinds("nope", (1, 0))


def test_extract_guard(setup):
    with pytest.raises(RuntimeError):
        coef.extract_coefficients("log", setup, 4, max_tuples=10)


def test_family_sectors():
    assert coef.family_sectors("quartic", 6) == [(0, 4), (1, 3), (2, 2), (3, 1), (4, 0)]
    assert all(sum(s) % 2 == 0 for s in coef.family_sectors("cosine", 6))
    assert coef.family_sectors("source", 4) == [(1, 1), (0, 2)]


def test_weight_norm_by_hand():
    s = coef.CoefficientSystem("t")
    s.add((2, 0), [[0, 0], [0, 1], [1, 1]], np.zeros((3, 0)), [1.0, -2.0, 0.5])
    # pinned at cell 0: 1 + 2 = 3; pinned at 1: 2 + 0.5; sector weight 2^2
    assert coef.weight_norm(s, phi_weight=2.0) == pytest.approx(12.0)
    dist = np.array([[0, 1], [1, 0]], float)
    # tuple (0, 1) has tree length 1 and gains e^(mass)
    assert coef.weight_norm(s, dist, mass=1.0) == pytest.approx(1 + 2 * math.e)


@given(st.integers(0, 2 ** 31))
def test_shift_coefficients(seed):
    rng = np.random.default_rng(seed)
    H = coef.CoefficientSystem("h")
    for k in (1, 2, 3):
        eta = rng.integers(0, 3, (4, k))
        H.add((0, k), np.zeros((4, 0), int), eta, rng.normal(size=4))
    psi = rng.normal(size=3)
    phi = rng.normal(size=3)
    shifted = coef.shift_coefficients(H)
    assert shifted.evaluate(psi, phi) == pytest.approx(H.evaluate([], psi + phi), rel=1e-10, abs=1e-12)
    bad = coef.CoefficientSystem("b")
    bad.add((1, 0), [[0]], np.zeros((1, 0)), [1.0])
    with pytest.raises(ValueError):
        coef.shift_coefficients(bad)


def test_decay_scan_negative_slope():
    g = LatticeGeometry(2, 6)
    T = ops.build_T(g, BENCHMARK)
    Ch, _ = ops.sqrt_covariance(T)
    every = np.ones(len(T.space), bool)
    s = coef.VertexSetup(T.space, Ch.matrix, BENCHMARK, every, every, every, T.matrix)
    L, a = coef.decay_scan("quartic", s, T.space.distance("l1"), np.random.default_rng(0), 4, 800, 5)
    fit = bounds.envelope_fit(L, a)
    assert fit.slope < 0 and fit.r2 > 0.8


def test_polymer_of_support():
    g = LatticeGeometry(2, 4)
    part = BlockPartition(g, 2)
    sp = ops.CellSpace(g)
    om1 = np.zeros(part.n_blocks, bool)
    assert coef.polymer_of_support([0, 1], sp, part, om1) is None
    om1[0] = True
    assert coef.polymer_of_support([0, 1], sp, part, om1).blocks == frozenset({0})


# -- polymers -------------------------------------------------------------------------
def _brute_partition(K):
    items = list(K.items())
    total = 0.0
    for r in range(len(items) + 1):
        for combo in itertools.combinations(items, r):
            sets = [s for s, _ in combo]
            if all(not (a & b) for a, b in itertools.combinations(sets, 2)):
                total += math.prod(w for _, w in combo)
    return total


random_polymers = st.dictionaries(
    st.frozensets(st.integers(0, 6), min_size=1, max_size=3), st.floats(-0.05, 0.05), min_size=1, max_size=6)


@given(random_polymers)
def test_partition_function_brute(K):
    assert poly.partition_function(K) == pytest.approx(_brute_partition(K), rel=1e-12, abs=1e-15)


@given(random_polymers)
def test_mayer_identity(H):
    K = poly.mayer_polymerize(H)
    assert poly.partition_function(K) == pytest.approx(math.exp(sum(H.values())), abs=1e-10)


@given(random_polymers)
def test_cluster_log_exact(K):
    E = poly.cluster_log(K, None)
    assert sum(E.values()) == pytest.approx(math.log(poly.partition_function(K)), abs=1e-10)


@given(random_polymers)
def test_cluster_log_truncation_converges(K):
    exact = math.log(poly.partition_function(K))
    err2 = abs(sum(poly.cluster_log(K, 2).values()) - exact)
    err4 = abs(sum(poly.cluster_log(K, 4).values()) - exact)
    assert err4 <= err2 + 1e-15
    assert err4 <= 20 * 0.05 ** 5 * len(K) ** 5 + 1e-14


def test_cluster_log_single_polymer_local():
    # a lone polymer: log(1 + K) sits on its own support
    K = {frozenset({1, 2}): 0.03}
    E = poly.cluster_log(K, None)
    assert E[frozenset({1, 2})] == pytest.approx(math.log1p(0.03))


def test_cluster_log_nonpositive():
    with pytest.raises(ValueError):
        poly.cluster_log({frozenset({0}): -1.5}, None)


def test_ursell_values():
    a, b, c = frozenset({0, 1}), frozenset({1, 2}), frozenset({0, 2})
    assert poly.ursell([a]) == 1
    assert poly.ursell([a, b]) == -1
    assert poly.ursell([a, b, c]) == 2
    assert poly.ursell([a, frozenset({5})]) == 0
    assert poly.ursell([a, a]) == -1


def test_connected_activities_two_families():
    fam1 = {frozenset({0}): 0.1, frozenset({1}): 0.2}
    fam2 = {frozenset({0, 1}): 0.3}
    K = poly.connected_activities([fam1, fam2])
    # {0,1}: fam2 alone, fam2 with either or both of fam1
    assert K[frozenset({0, 1})] == pytest.approx(0.3 * (1.1 * 1.2))
    assert K[frozenset({0})] == pytest.approx(0.1)


@given(random_polymers, random_polymers)
def test_group_components_factorizes(A, B):
    comps = poly.group_components([], [A, B])
    assert poly.partition_function(comps) == pytest.approx(
        poly.partition_function(A) * poly.partition_function(B), rel=1e-10)


def test_cover_guard():
    with pytest.raises(poly.TooManyCovers):
        poly.mayer_polymerize({frozenset(range(20)): 0.01})


def test_free_weight_guard():
    with pytest.raises(ValueError):
        poly.connected_activities([{frozenset({0}): -1.0}], ["free"])


def test_rectangular_paths():
    g = LatticeGeometry(2, 8)
    part = BlockPartition(g, 2)
    X = poly.rectangular_paths(part, 0, 3)
    assert X == frozenset({0, 1, 2, 3})
    Y = poly.rectangular_paths(part, 0, 5)
    # two L-shaped paths through blocks 1 and 4
    assert Y == frozenset({0, 1, 4, 5})


# -- regions and large fields --------------------------------------------------------
def test_thresholds_from_coupling():
    th = Thresholds.from_coupling(0.005, 2)
    ll = abs(math.log(0.005))
    assert th.p_lam == pytest.approx(ll ** 5)
    assert th.p0_lam == pytest.approx(ll ** 4.5)
    assert th.r == int(ll ** 2)


@given(st.integers(0, 2 ** 31), st.floats(0.5, 3.0))
def test_region_nesting(seed, p):
    g = LatticeGeometry(2, 12)
    part = BlockPartition(g, 2)
    sp = ops.CellSpace(g)
    phi = np.random.default_rng(seed).standard_cauchy(len(sp)) * 0.3
    reg = classify_regions(phi, sp, part, p, 0.7 * p)
    assert np.all(reg.lambda1 <= reg.lambda0)
    assert np.all(reg.omega0 <= reg.lambda1)
    assert np.all(reg.omega1 <= reg.omega0)
    assert np.array_equal(reg.P, reg.lambda1 & ~reg.omega1)
    s = reg.summary()
    assert s["lambda0"] >= s["lambda1"] >= s["omega0"] >= s["omega1"]
    with pytest.raises(ValueError):
        classify_regions(phi, sp, part, 0.0, 1.0)


def test_sigma_pairs_symmetric():
    g = LatticeGeometry(2, 12)
    part = BlockPartition(g, 2)
    T = ops.build_T(g, mu2=1.0, mA2=1.0)
    # small everywhere so the collar couples the large blocks to Lambda1
    phi = np.random.default_rng(4).uniform(-0.4, 0.4, len(T.space))
    big = np.isin(T.space.blocks(part), [0, 4])
    phi[big] = 5.0
    reg = classify_regions(phi, T.space, part, 1.0, 0.5)
    assert len(reg.Qtilde_components) == 2
    act0 = sigma_and_f(T, reg, phi, with_f=False)
    assert act0.f is None and any(abs(v) > 0 for v in act0.sigma.values())
    act = sigma_and_f(T, reg, phi)
    for (a, b), v in act.pair_terms.items():
        assert v == pytest.approx(act.pair_terms[(b, a)], rel=1e-10)
    assert sum(act.sigma.values()) == pytest.approx(0.5 * sum(act.pair_terms.values()))
    assert poly.partition_function(act.f) == pytest.approx(math.exp(sum(act.sigma.values())), rel=1e-10)


# -- bounds ---------------------------------------------------------------------------
def test_fit_exponential_bound_recovers_rate():
    s = np.arange(0, 10)
    v = 3.0 * np.exp(-0.7 * s)
    f = bounds.fit_exponential_bound("x", s, v)
    assert f.kappa == pytest.approx(0.7)
    assert f.c == pytest.approx(3.0)
    assert f.passed
    assert not bounds.fit_exponential_bound("y", s, np.exp(0.1 * s)).passed
    assert bounds.fit_exponential_bound("z", s, 0 * s).passed


def test_envelope_fit():
    rng = np.random.default_rng(0)
    L = rng.integers(0, 10, 2000)
    a = np.exp(-1.3 * L) * rng.uniform(0.1, 1, 2000)
    fit = bounds.envelope_fit(L, a)
    assert fit.slope == pytest.approx(-1.3, abs=0.05)
    with pytest.raises(ValueError):
        bounds.envelope_fit([0, 1], [1.0, 0.5])


def test_simple_bounds():
    assert bounds.shifted_norm_bound(0.01) == pytest.approx(0.01 / 0.84)
    assert bounds.shifted_norm_bound(1 / 16) == math.inf
    w1 = bounds.large_field_weight_bound(0.2, 10.0, 1, 1.0, 2.0, 1.0)
    w2 = bounds.large_field_weight_bound(0.2, 10.0, 2, 1.0, 2.0, 1.0)
    assert w2 < w1
    assert bounds.check_bound("a", 1.0, 2.0).passed


def test_small_field_log_against_dblquad():
    from scipy.integrate import dblquad
    V = coef.CoefficientSystem("t")
    V.add((1, 1), [[0]], [[0]], [0.004])
    V.add((2, 0), [[0, 0]], np.zeros((1, 0)), [0.003])
    V.add((1, 2), [[1]], [[0, 0]], [0.002])

    def z(psi):
        return dblquad(lambda a, b: math.exp(-0.5 * (a * a + b * b) - V.evaluate([a, b], [psi])), -3, 3, -3, 3,
                       epsabs=1e-14, epsrel=1e-12)[0]
    oracle = math.log(z(0.2) / z(0.0))
    got = bounds.small_field_log(V, 2, [[0.2], [0.0]], 3.0)
    assert got[0] - got[1] == pytest.approx(oracle, rel=1e-8)


def test_small_field_norm_check_passes_for_small_vertex():
    V = coef.CoefficientSystem("t")
    V.add((1, 1), [[0]], [[0]], [0.004])
    V.add((1, 2), [[1]], [[0, 0]], [0.002])
    rep, H = bounds.small_field_norm_check(V, 2, 1, 3.0, 1.0, 1.0)
    assert rep.passed
    # leading Psi^2 coefficient is the variance term 0.004^2 / 2 times the truncated variance
    var = 1 - 6 * math.exp(-4.5) / math.sqrt(2 * math.pi) / math.erf(3 / math.sqrt(2))
    assert H.entry((), (0, 0)) == pytest.approx(0.5 * 0.004 ** 2 * var, rel=1e-3)
