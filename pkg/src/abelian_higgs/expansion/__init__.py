"""Block regions, vertex coefficients, polymer activities and bound checks."""
from .coefficients import (FAMILIES, CoefficientSystem, VertexSetup, extract_coefficients, shift_coefficients,
                           vertex_function, weight_norm)
from .large_field import LargeFieldActivities, sigma_and_f
from .polymers import (TooManyCovers, cluster_log, connected_activities, group_components, mayer_polymerize,
                       partition_function, ursell)
from .regions import RegionDecomposition, Thresholds, classify_regions

__all__ = ["FAMILIES", "CoefficientSystem", "LargeFieldActivities", "RegionDecomposition", "Thresholds",
           "TooManyCovers", "VertexSetup", "classify_regions", "cluster_log", "connected_activities",
           "extract_coefficients", "group_components", "mayer_polymerize", "partition_function",
           "shift_coefficients", "sigma_and_f", "ursell", "vertex_function", "weight_norm"]
