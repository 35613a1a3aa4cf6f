"""Mass gap at the benchmark point from the zero-momentum F-F correlator.

A short run (the full measurement uses 1e6 sweeps on 32x32; see `abelian-higgs massgap`).
"""
import sys

from abelian_higgs.montecarlo.experiments import massgap_experiment

sweeps = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
res = massgap_experiment(L=24, sweeps=sweeps, thermalization=2000, seed=2)
fit = res["fit"]
print(f"{sweeps} sweeps on 24x24, acceptance {res['acceptance']}")
print("effective mass by t:", [round(float(m), 3) for m in fit.m_eff])
print(f"fit window {fit.window}: m = {fit.m:.3f} +- {fit.m_err:.3f}, chi2/dof {fit.chi2_dof:.2f}")
print("\nWilson loop correlation by separation:")
for r in res["wilson"]:
    print(f"  {r['t']}: {r['value']:.5f} +- {r['err']:.5f}")
print("\nfraction of blocks with sup |Phi| above threshold:")
for z, f, e in res["large_field"]:
    print(f"  {z:.3f}: {f:.4f} +- {e:.4f}")
