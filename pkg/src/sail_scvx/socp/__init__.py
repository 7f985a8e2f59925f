"""Embedded second-order cone program solver."""

from .presolve import Presolved, presolve
from .program import ConicProgram, ProgramError, SolverSolution, Status
from .solver import solve

__all__ = ["ConicProgram", "Presolved", "ProgramError", "SolverSolution", "Status", "presolve", "solve"]
