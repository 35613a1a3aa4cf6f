"""Checking the sampler on the massive Gaussian gauge model, where the two-point function is exact."""
from abelian_higgs.montecarlo.experiments import gaussian_validation

res = gaussian_validation(L=16, sweeps=20_000, seed=1)
print(f"acceptance {res['acceptance']}, action drift {res['action_drift']:.2e}")
print("  t   measured            exact       pull")
for r in res["rows"]:
    print(f"{r['t']:3d}  {r['mc']:+.5f} +- {r['err']:.5f}  {r['exact']:+.5f}  {r['pull']:+.2f}")
fit = res["fit"]
print(f"\nfitted mass {fit.m:.4f} +- {fit.m_err:.4f}; kernel decay in the same window {res['kernel_rate']:.4f}")
