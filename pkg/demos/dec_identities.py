"""Discrete exterior calculus on a Dirichlet box.

Builds random forms on a 2D and a 3D box and shows that d d = 0, that the codifferential is the
adjoint of d, and that delta d on scalars is the (negative) interior Laplacian.
"""
import numpy as np

from abelian_higgs import Form, LatticeGeometry, codifferential, exterior_derivative
from abelian_higgs import suites

rng = np.random.default_rng(3)

g = LatticeGeometry(2, 6)
print(f"2D box L={g.L}: {g.n_cells(0)} sites, {g.n_bonds} bonds, {g.n_cells(2)} plaquettes")

# a gauge transformation A -> A + d(lambda) leaves F = dA unchanged
lam = Form(g, 0, rng.standard_normal(g.n_cells(0)))
A = Form(g, 1, rng.standard_normal(g.n_bonds))
F = exterior_derivative(A)
F2 = exterior_derivative(A + exterior_derivative(lam))
print("max |F - F'| after a gauge transformation:", np.abs(F.values - F2.values).max())

# adjointness on one pair, then the full suite
e = Form(g, 2, rng.standard_normal(g.n_cells(2)))
print("<dA, e> =", exterior_derivative(A).inner(e), " <A, delta e> =", A.inner(codifferential(e)))

print("\nidentity checks on 2D 6x6 and 3D 4^3:")
for row in suites.dec_suite(g):
    print(f"  {'ok  ' if row.passed else 'FAIL'} {row.identity}")
