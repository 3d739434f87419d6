"""Numerical solvers for coupled mean-field forward-backward SDEs.

The solver suite works on a discrete time grid with either a binomial tree
or Monte Carlo regression for conditional expectations, and solves fully
coupled systems by the method of continuation. See :mod:`mffbsde.lq` for the
linear-quadratic control applications.
"""

from .core import (CASE_A, CASE_B, BlackBoxCoefficients, BlowUpError, BudgetExceeded,
                   CoefficientSet, ConditioningError, ConsistencyError, ConvergenceError,
                   DomainError, DominationWeights, InconsistencyError, LinearCoefficients,
                   MFFBSDEError, NumericError, PerturbationTriple, RankError,
                   SolutionEnsemble, StepContractionError, TimeGrid, m2_norm)
from .noise import MonteCarloBackend, TreeBackend
from .continuation import ContinuationConfig, solve

__version__ = "0.1.0"

__all__ = [
    "CASE_A", "CASE_B", "BlackBoxCoefficients", "BlowUpError", "BudgetExceeded",
    "CoefficientSet", "ConditioningError", "ConsistencyError", "ConvergenceError",
    "ContinuationConfig", "DomainError", "DominationWeights", "InconsistencyError",
    "LinearCoefficients", "MFFBSDEError", "MonteCarloBackend", "NumericError",
    "PerturbationTriple", "RankError", "SolutionEnsemble", "StepContractionError",
    "TimeGrid", "TreeBackend", "m2_norm", "solve",
]
