"""Expanding the interaction around the broken-symmetry minimum.

Shows the Taylor coefficients of each vertex family on a small box, checks a few of them against
closed forms, and then runs the Mayer polymer identities on random activities.
"""
from abelian_higgs import suites
from abelian_higgs.expansion import FAMILIES, partition_function, mayer_polymerize, cluster_log
from abelian_higgs.model import BENCHMARK

print("vertex families:", ", ".join(FAMILIES))
print("\nclosed-form spot values at the benchmark couplings:")
for row in suites.spot_checks(BENCHMARK):
    print(f"  {'ok  ' if row.passed else 'FAIL'} {row.identity}: {row.lhs:.6g}")

print("\nlog envelope slope of |coefficient| against tree length (L=10, short scan):")
_, fits = suites.coefficient_decay_group(BENCHMARK, L=10, n_per_sector=800, families=["quartic", "cosine", "source"])
for fam, fit in fits.items():
    print(f"  {fam:10s} slope {fit.slope:+.2f}  R^2 {fit.r2:.3f}")

# a tiny polymer gas: three overlapping sets on a line of blocks
H = {frozenset({0, 1}): 0.03, frozenset({1, 2}): -0.02, frozenset({3}): 0.01}
K = mayer_polymerize(H)
print(f"\nMayer: sum over disjoint collections = {partition_function(K):.12f}")
E = cluster_log(K, None)
print(f"cluster log sum = {sum(E.values()):.12f} vs sum H = {sum(H.values()):.12f}")
