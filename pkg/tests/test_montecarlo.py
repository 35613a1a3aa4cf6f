import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from abelian_higgs.lattice import LatticeGeometry
from abelian_higgs.model import BENCHMARK, ConfigError, Couplings, field_strength
from abelian_higgs.montecarlo import analysis as an
from abelian_higgs.montecarlo.equivalence import equivalence_check
from abelian_higgs.montecarlo.experiments import gaussian_validation, interior_blocks
from abelian_higgs.montecarlo.gaussian import exact_profile, field_strength_covariance
from abelian_higgs.montecarlo.sampler import MCConfig, chain_seeds, merge_chains, run_chain, run_chains


# -- statistics helpers --------------------------------------------------------------
def _ar1(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = np.zeros(n)
    e = rng.normal(size=n)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    return x


def test_autocorrelation_time_ar1():
    rho = 0.8
    tau = an.autocorrelation_time(_ar1(rho, 200_000, 1))
    assert tau == pytest.approx((1 + rho) / (2 * (1 - rho)), rel=0.1)
    assert an.autocorrelation_time(np.ones(100)) == 0.5
    assert an.autocorrelation_time([1.0, 2.0]) == 0.5


def test_choose_bins():
    x = _ar1(0.5, 10_000, 2)
    size, n_bins, tau = an.choose_bins([x], len(x))
    assert size >= 5 * tau and n_bins == len(x) // size
    with pytest.raises(an.InsufficientBins):
        an.choose_bins([_ar1(0.99, 200, 3)], 200)


@given(st.integers(0, 2 ** 31), st.integers(5, 60))
def test_jackknife_mean_is_standard_error(seed, n):
    b = np.random.default_rng(seed).normal(size=n)
    full, err, _ = an.jackknife(b, lambda m: m)
    assert full == pytest.approx(b.mean())
    assert err == pytest.approx(b.std(ddof=1) / math.sqrt(n))


def test_bin_means_keeps_complex():
    z = np.exp(1j * np.arange(12.0))
    m = an.bin_means(z, 3, 4)
    assert np.iscomplexobj(m)
    assert m[0] == pytest.approx(z[:3].mean())


@pytest.mark.parametrize("n,bell", [(1, 1), (2, 2), (3, 5), (4, 15)])
def test_set_partitions_bell(n, bell):
    assert len(list(an.set_partitions(range(n)))) == bell


def test_cumulants_from_moments():
    m = {(0,): 0.3, (1,): -0.2, (2,): 0.5, (0, 1): 0.4, (0, 2): 0.1, (1, 2): 0.7, (0, 1, 2): 0.9}
    k3 = 0.9 - 0.3 * 0.7 - (-0.2) * 0.1 - 0.5 * 0.4 + 2 * 0.3 * (-0.2) * 0.5
    assert an.cumulant_from_moments(m, 3) == pytest.approx(k3)
    # Gaussian moments (Isserlis) have vanishing fourth cumulant
    rng = np.random.default_rng(0)
    X = rng.normal(size=(4, 4))
    S = X @ X.T
    mom = {}
    for s in an._subsets(4):
        if len(s) in (1, 3):
            mom[s] = 0.0
        elif len(s) == 2:
            mom[s] = S[s[0], s[1]]
        else:
            a, b, c, d = s
            mom[s] = S[a, b] * S[c, d] + S[a, c] * S[b, d] + S[a, d] * S[b, c]
    assert an.cumulant_from_moments(mom, 4) == pytest.approx(0.0, abs=1e-10)


def test_truncated_moment_matches_covariance():
    X = np.random.default_rng(1).normal(size=(5000, 2)) @ np.array([[1, 0.5], [0, 1]])
    assert an.truncated_moment(X) == pytest.approx(np.cov(X.T, ddof=0)[0, 1])


def _synthetic(m, amp, sign, n_bins=40, seed=0, t_max=8):
    rng = np.random.default_rng(seed)
    t = np.arange(t_max)
    C = sign * amp * np.exp(-m * t)
    err = 0.01 * np.abs(C) + 1e-6
    samples = C + rng.normal(size=(n_bins, t_max)) * err / math.sqrt(n_bins - 1)
    return an.CorrelatorEstimate(t, C, err, True, n_bins, 1, 0.5, samples)


@pytest.mark.parametrize("sign", [1, -1])
def test_effective_mass_recovers_rate(sign):
    fit = an.effective_mass(_synthetic(0.9, 2.0, sign))
    assert fit.sign == sign
    assert fit.m == pytest.approx(0.9, rel=1e-6)
    assert np.allclose(fit.m_eff, 0.9)
    assert fit.significance > 5


def test_effective_mass_bad_window():
    with pytest.raises(an.FitError):
        an.effective_mass(_synthetic(0.9, 2.0, 1), window=(3, 3))


def test_kernel_decay_rate():
    assert an.kernel_decay_rate([1, 2, 3], [math.exp(-0.5), math.exp(-1.0), math.exp(-1.5)]) == pytest.approx(0.5)


def test_rectangle_loop_surface():
    g = LatticeGeometry(2, 6)
    loop = an.rectangle_loop(g, int(g.site_index([1, 1])), 2, 3)
    c = an.loop_surface(g, loop)
    assert np.sum(np.abs(c)) == 6 and np.all(np.isin(c, [0, 1, -1]))
    # the surface orientation is consistent: d^T c reproduces the loop
    b = np.zeros(g.n_bonds)
    for bond, s in loop:
        b[bond] += s
    assert np.allclose(g.incidence(1).T @ c, b)
    with pytest.raises(ValueError):
        an.loop_surface(g, loop[:-1])
    with pytest.raises(ValueError):
        an.rectangle_loop(g, int(g.site_index([4, 4])), 3, 1)


def test_plaquette_translations():
    g = LatticeGeometry(2, 6)
    sh = an.plaquette_shift(g, [1, 0])
    coords = an.plaquette_coords(g)
    ok = sh >= 0
    assert np.all(coords[sh[ok]] - coords[ok] == [1, 0])
    tup = an.translated_tuples(g, [0, 1], frame=1)
    inner = an.interior_plaquettes(g, 1)
    assert np.all(inner[tup])


# -- sampler ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def short_chain():
    g = LatticeGeometry(2, 6)
    cfg = MCConfig(sweeps=3000, thermalization=500, stride=2, seed=11)
    return run_chain(g, cfg, couplings=BENCHMARK)


def test_mc_config_validation():
    with pytest.raises(ConfigError):
        MCConfig(sweeps=10, thermalization=10)
    with pytest.raises(ConfigError):
        MCConfig(width_phi=0)
    with pytest.raises(ConfigError):
        MCConfig(stride=0)
    assert MCConfig(sweeps=1000, thermalization=100, stride=10).n_measurements == 90


def test_sampler_rejects_bad_setup():
    cfg = MCConfig(sweeps=200, thermalization=100)
    with pytest.raises(ConfigError):
        run_chain(LatticeGeometry(1, 5), cfg, couplings=BENCHMARK)
    with pytest.raises(ConfigError):
        run_chain(LatticeGeometry(2, 4), cfg, model="other", couplings=BENCHMARK)
    with pytest.raises(ConfigError):
        run_chain(LatticeGeometry(2, 4), cfg)


def test_chain_seeds_deterministic():
    a = chain_seeds(5, 4)
    assert a == chain_seeds(5, 4)
    assert len(set(a)) == 4
    assert chain_seeds(6, 1) != a[:1]


def test_chain_reproducible(short_chain):
    g = short_chain.geometry
    again = run_chain(g, short_chain.config, couplings=BENCHMARK)
    assert np.array_equal(again.F, short_chain.F)
    assert np.array_equal(again.action, short_chain.action)


def test_chain_bookkeeping(short_chain):
    c = short_chain
    assert c.F.shape == (c.config.n_measurements, c.geometry.n_plaquettes)
    assert c.action_drift < 1e-8
    assert 0.2 <= c.acceptance["phi"] <= 0.7
    assert 0.2 <= c.acceptance["A"] <= 0.7
    # final state: the stored field strength is dA + P n
    st_ = c.final_state
    F = field_strength(c.geometry, st_["A"], BENCHMARK.period * st_["n"])
    assert np.all(np.abs(st_["A"]) <= BENCHMARK.period / 2 + 1e-9)
    assert np.isfinite(F).all()


def test_3d_chain_runs():
    g = LatticeGeometry(3, 3)
    c = run_chain(g, MCConfig(sweeps=400, thermalization=100, stride=5, seed=2), couplings=BENCHMARK)
    assert c.action_drift < 1e-8
    # Bianchi identity: F is closed in 3D
    d2 = g.incidence(2).toarray()
    assert np.abs(c.F.astype(np.float64) @ d2.T).max() < 1e-3


def test_gaussian_chain_variance():
    g = LatticeGeometry(2, 4)
    mA2 = 4.0
    cfg = MCConfig(sweeps=60_000, thermalization=1000, stride=3, seed=4, chains=2)
    chain = merge_chains(run_chains(g, cfg, "gaussian", mA2=mA2))
    cov = field_strength_covariance(g, mA2)
    var = chain.F.astype(np.float64).var(axis=0)
    assert np.allclose(var, np.diag(cov), rtol=0.05)


def test_gaussian_validation_small():
    res = gaussian_validation(L=8, sweeps=40_000, separations=range(0, 5), frame=1, seed=3)
    assert res["pass"], res["rows"]
    assert res["action_drift"] < 1e-8


def test_exact_profile_symmetry():
    g = LatticeGeometry(2, 10)
    prof = exact_profile(g, 4.0, range(3), frame=3)
    assert prof[0] > 0 and np.all(prof[1:] < 0)


def test_large_field_statistics_monotone(short_chain):
    mask = interior_blocks(short_chain.geometry, short_chain.config.block_r, 1)
    med = float(np.median(short_chain.block_max))
    rows = an.large_field_statistics(short_chain, [0.5 * med, med, 2 * med])
    fr = [r[1] for r in rows]
    assert fr[0] >= fr[1] >= fr[2]
    assert mask.dtype == bool


def test_insufficient_bins_reported():
    g = LatticeGeometry(2, 4)
    c = run_chain(g, MCConfig(sweeps=150, thermalization=100, stride=5, seed=1), couplings=BENCHMARK)
    with pytest.raises(an.InsufficientBins):
        an.projected_correlator(c)


# -- equivalence ----------------------------------------------------------------------
def test_equivalence_small_run():
    g = LatticeGeometry(2, 2)
    c = Couplings.from_masses(0.5, 2.0, 2.0)
    res = equivalence_check(g, c, n_samples=40_000, seed=3)
    assert abs(res.ratio_pull) < 4
    assert res.rel_err < 0.05
    assert res.ess_noncompact > 1000 and res.ess_compact > 1000


def test_equivalence_deterministic():
    g = LatticeGeometry(2, 2)
    c = Couplings.from_masses(0.5, 2.0, 2.0)
    a = equivalence_check(g, c, n_samples=5000, seed=9, J=0.1)
    b = equivalence_check(g, c, n_samples=5000, seed=9, J=0.1)
    assert a.to_dict() == b.to_dict()
    assert a.obs_noncompact is not None


def test_equivalence_rejects_large_lattice():
    with pytest.raises(ConfigError):
        equivalence_check(LatticeGeometry(2, 3), BENCHMARK, n_samples=100)
