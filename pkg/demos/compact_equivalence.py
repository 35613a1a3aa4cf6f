"""The non-compact Higgs model and the Villain-sum compact model have the same partition function.

On a 2x2 box both sides are integrals over a few variables.  They are estimated by importance
sampling and their ratio, after the (2 pi / e0) volume factor, should be one within errors.
"""
from abelian_higgs import LatticeGeometry
from abelian_higgs.model import Couplings
from abelian_higgs.montecarlo.equivalence import equivalence_check

g = LatticeGeometry(2, 2)
c = Couplings.from_masses(0.5, 2.0, 2.0)
print(f"couplings: e0={c.e0}, mu={c.mu}, lambda={c.lam:.4f}")

res = equivalence_check(g, c, n_samples=100_000, vortex_range=3, seed=5)
print(f"Z ratio {res.ratio:.4f} +- {res.ratio_err:.4f} (pull {res.ratio_pull:+.2f})")

# with a source the same samples also estimate <exp(i e0 F.J)> on both sides
res = equivalence_check(g, c, n_samples=100_000, vortex_range=3, J=0.1, seed=6)
print(f"<exp(i e0 F.J)> at J=0.1: non-compact {res.obs_noncompact:.4f}, compact {res.obs_compact:.4f} "
      f"(pull {res.obs_pull:+.2f})")
