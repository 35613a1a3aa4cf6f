"""Covariance, square root, localization and determinant identities for the fluctuation operator."""
import math

import numpy as np

from abelian_higgs import LatticeGeometry
from abelian_higgs import operators as ops
from abelian_higgs import suites

# the massive Laplacian in 1D decays like exp(-arccosh(1 + mu^2/2) |x - y|)
rows, prof = suites.kernel_group()
print(f"1D kernel decay rate {prof.rate:.6f}, closed form arccosh(3) = {math.acosh(3):.6f}")

# square root by quadrature of the resolvent, compared with the matrix it should square to
g = LatticeGeometry(2, 8)
T = ops.build_T(g, mu2=4.0, mA2=4.0)
Ch, quad = ops.sqrt_covariance(T)
C = np.linalg.inv(T.matrix)
print(f"|C^1/2 C^1/2 - C| / |C| on 2D 8x8 = {np.linalg.norm(Ch.matrix @ Ch.matrix - C, 2) / np.linalg.norm(C, 2):.2e}")

# cutting C^1/2 at range r leaves a remainder that shrinks exponentially in r
_, table, fit = suites.localization_group(16, range(2, 9))
print(f"\nremainder after cutting at r (2D 16x16), fitted slope {fit['slope']:.3f}:")
for row in table:
    print(f"  r={row['r_cut']}  sup norm {row['delta_sup']:.3e}  fit {row['fit']:.3e}")

# log det by resolvent integrals against the eigenvalue sum
K = np.random.default_rng(0).standard_normal((50, 50))
K = K @ K.T / 50 + 0.5 * np.eye(50)
print(f"\nTr log K = {ops.trace_log(K):.12f}, eigenvalue sum = {np.sum(np.log(np.linalg.eigvalsh(K))):.12f}")

# truncated random walk expansion of the inverse
res = ops.random_walk_inverse(ops.build_T(LatticeGeometry(1, 20), mu2=9.0, degrees=(0,)), 0.0, 30)
print(f"random walk: error ratio per step {res.ratio:.4f} (bound 2d/mu^2 = {2 / 9:.4f})")

print()
for row in suites.w1_group(8) + suites.w2_group(10):
    print(f"  {'ok  ' if row.passed else 'FAIL'} {row.identity}: rel err {row.rel_err:.1e}")
