from .core import (INACCURATE, INFEASIBLE, MAXITER, NUMERICAL, OPTIMAL, UNBOUNDED,
                   ConicProblem, ConicSolution, dump, load, solve)
from .model import Affine, Model, vstack

__all__ = ["ConicProblem", "ConicSolution", "solve", "dump", "load", "Affine", "Model", "vstack",
           "OPTIMAL", "INACCURATE", "INFEASIBLE", "UNBOUNDED", "MAXITER", "NUMERICAL"]
