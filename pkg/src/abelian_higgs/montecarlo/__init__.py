from .analysis import (CorrelatorEstimate, FitError, InsufficientBins, MassFit, effective_mass,
                       large_field_statistics, n_point_truncated, projected_correlator, truncated_moment,
                       truncated_two_point, two_point_profile, wilson_loop_correlation)
from .equivalence import EquivalenceResult, equivalence_check
from .sampler import Chain, MCConfig, run_chain, run_chains
from ..model import field_strength as measure_F

__all__ = ["CorrelatorEstimate", "FitError", "InsufficientBins", "MassFit", "effective_mass",
           "large_field_statistics", "n_point_truncated", "projected_correlator", "truncated_moment",
           "truncated_two_point", "two_point_profile", "wilson_loop_correlation", "EquivalenceResult",
           "equivalence_check", "Chain", "MCConfig", "run_chain", "run_chains", "measure_F"]
