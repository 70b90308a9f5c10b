"""Caliper synthetic matching: radius matching with covariate-wise calipers and synthetic-control weights."""
__version__ = "1.0.0"

from .data_model import CaliperSpec, Dataset, Norm, Policy, Schema, ScalingMatrix, default_caliper, load_dataset
from .distance import DistanceMatrix, distance_matrix, scaled_distance
from .errors import CSMError, CSMInputError, SolverFailure
from .matcher import MatchResult, cem_match, feasible_subsets, one_nn_match, radius_match
from .scm_solver import WeightScheme, WeightSet, assign_weights
from .estimator import EffectEstimate, estimate

__all__ = [
    'CaliperSpec', 'Dataset', 'Norm', 'Policy', 'Schema', 'ScalingMatrix', 'default_caliper', 'load_dataset',
    'DistanceMatrix', 'distance_matrix', 'scaled_distance',
    'CSMError', 'CSMInputError', 'SolverFailure',
    'MatchResult', 'cem_match', 'feasible_subsets', 'one_nn_match', 'radius_match',
    'WeightScheme', 'WeightSet', 'assign_weights',
    'EffectEstimate', 'estimate',
]
