"""Optimization engines: dense simplex, branch-and-bound, HiGHS and
external-process backends, plus brute-force oracles for testing."""

from .simplex import SimplexOptions, SimplexResult, simplex
from .solution import Solution, SolverConfig, solve_model

__all__ = ["SimplexOptions", "SimplexResult", "simplex", "Solution", "SolverConfig", "solve_model"]
