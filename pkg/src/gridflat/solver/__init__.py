from .bnb import BnbStats, MilpSolution, solve_milp
from .oracle import PatternSpaceTooLarge, enumerate_oracle, mode_pairs, pattern_count
from .simplex import LpData, LpSolution, NumericalError, solve_lp

__all__ = [
    "BnbStats",
    "LpData",
    "LpSolution",
    "MilpSolution",
    "NumericalError",
    "PatternSpaceTooLarge",
    "enumerate_oracle",
    "mode_pairs",
    "pattern_count",
    "solve_lp",
    "solve_milp",
]
