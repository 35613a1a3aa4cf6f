"""End-to-end Monte Carlo experiments: sampler validation on the Gaussian model and the mass-gap run."""
from __future__ import annotations

import math

import numpy as np

from ..lattice import BlockPartition, LatticeGeometry
from ..model import Couplings
from . import analysis as an
from .gaussian import compare_to_exact, exact_profile, exact_projected
from .sampler import MCConfig, merge_chains, run_chains

BENCHMARK = {"d": 2, "L": 32, "frame": 4, "e0": 0.2, "mu": 2.0, "m_A": 2.0}


def gaussian_validation(L: int = 16, mA2: float = 4.0, sweeps: int = 100_000, seed: int = 0,
                        separations=range(0, 11), frame: int = 2, stride: int = 5, chains: int = 1):
    """Sampler against the exact covariance of F = dA in the massive Gaussian model."""
    g = LatticeGeometry(2, L)
    cfg = MCConfig(sweeps=sweeps, thermalization=min(1000, sweeps // 10), stride=stride, seed=seed, chains=chains)
    chain = merge_chains(run_chains(g, cfg, "gaussian", mA2=mA2))
    seps = list(separations)
    est = an.two_point_profile(chain, seps, frame=frame)
    rows, ok = compare_to_exact(est, exact_profile(g, mA2, seps, frame=frame))
    proj = an.projected_correlator(chain, frame=frame)
    exact_p = exact_projected(g, mA2, proj.t, frame=frame)
    fit = an.effective_mass(proj)
    w = np.arange(fit.window[0], fit.window[1] + 1)
    kernel_rate = an.kernel_decay_rate(w, exact_p[w])
    return {
        "chain": chain,
        "rows": rows,
        "pass": ok,
        "n_within": sum(r["within"] for r in rows),
        "profile": est,
        "projected": proj,
        "projected_exact": exact_p,
        "fit": fit,
        "kernel_rate": kernel_rate,
        "mass_rel_diff": abs(fit.m - kernel_rate) / kernel_rate,
        "acceptance": chain.acceptance,
        "action_drift": chain.action_drift,
    }


def unit_plaquette_loop(geometry: LatticeGeometry, site: int):
    return an.rectangle_loop(geometry, site, 1, 1)


def wilson_separation_scan(chain, separations=(2, 4, 6), frame: int = 4, axis: int = 0):
    """Connected correlation of unit Wilson loops at the given separations, translation averaged."""
    g = chain.geometry
    x0 = np.full(g.d, frame)
    base = int(g.site_index(x0))
    out = []
    for t in separations:
        x1 = x0.copy()
        x1[axis] += t
        loop1 = unit_plaquette_loop(g, base)
        loop2 = unit_plaquette_loop(g, int(g.site_index(x1)))
        span = g.L - 2 * frame - 1 - t
        shifts = [np.array(s) for s in np.ndindex(*(max(1, span) if k == axis else g.L - 2 * frame - 1 for k in range(g.d)))]
        val, err = an.wilson_loop_correlation(chain, loop1, loop2, translations=shifts)
        out.append({"t": int(t), "value": val, "err": err})
    return out


def interior_blocks(geometry: LatticeGeometry, r: int, frame: int) -> np.ndarray:
    """Blocks whose sites all keep distance >= frame from the box faces."""
    part = BlockPartition(geometry, min(r, geometry.L))
    ok = np.ones(part.n_blocks, bool)
    bad = np.any((geometry.coords < frame) | (geometry.coords > geometry.L - 1 - frame), axis=1)
    ok[np.unique(part.site_block[bad])] = False
    return ok


def _monotone_within(values, errs, n_sigma=2.0):
    """|values| non-increasing up to n_sigma combined errors."""
    a = np.abs(values)
    return all(a[i + 1] <= a[i] + n_sigma * math.hypot(errs[i], errs[i + 1]) for i in range(len(a) - 1))


def massgap_experiment(couplings: Couplings | None = None, L: int = 32, frame: int = 4, sweeps: int = 1_000_000,
                       thermalization: int = 10_000, stride: int = 20, seed: int = 0, chains: int = 1,
                       thresholds=None, loop_separations=(2, 4, 6), block_r: int = 4):
    """Full benchmark run: projected F-F correlator, effective mass, Wilson loops and large-field frequencies."""
    couplings = couplings or Couplings.from_masses(BENCHMARK["e0"], BENCHMARK["mu"], BENCHMARK["m_A"])
    g = LatticeGeometry(2, L)
    cfg = MCConfig(sweeps=sweeps, thermalization=thermalization, stride=stride, seed=seed, chains=chains,
                   block_r=block_r, width_phi=0.5, width_A=1.0)
    chain = merge_chains(run_chains(g, cfg, "villain_higgs", couplings))
    corr = an.projected_correlator(chain, frame=frame)
    fit = an.effective_mass(corr)
    loops = wilson_separation_scan(chain, loop_separations, frame)
    inner = interior_blocks(g, block_r, frame)
    if thresholds is None:
        med = float(np.median(chain.block_max[:, inner]))
        thresholds = [med * f for f in (0.6, 0.8, 1.0, 1.2, 1.4)]
    lf = an.large_field_statistics(chain, thresholds, block_mask=inner)
    fr = [r[1] for r in lf]
    m_A = couplings.m_A
    return {
        "chain": chain,
        "correlator": corr,
        "fit": fit,
        "mass_positive_5sigma": bool(fit.m > 0 and fit.significance >= 5),
        "chi2_ok": bool(fit.chi2_dof < 2),
        "band": [0.5 * m_A, 2 * m_A],
        "in_band": bool(0.5 * m_A <= fit.m <= 2 * m_A),
        "wilson": loops,
        "wilson_monotone": _monotone_within([r["value"] for r in loops], [r["err"] for r in loops]),
        "large_field": lf,
        "large_field_decreasing": bool(all(fr[i + 1] < fr[i] for i in range(len(fr) - 1))),
        "acceptance": chain.acceptance,
        "action_drift": chain.action_drift,
    }
