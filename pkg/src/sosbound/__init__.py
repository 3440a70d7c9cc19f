"""Sum-of-squares bounds on long-time averages of polynomial ODEs."""

from . import boundengine, dynsys, hbalance, kernels, polyring, sdpcore, simulate, soscert
from .boundengine import BoundQuery, BoundResult, bound, bound_pair, escalate
from .dynsys import DynSystem, SemialgebraicSet
from .polyring import Polynomial
from .sdpcore import SdpProblem, SolverOptions, SolverStatus, solve

__version__ = "0.1.0"

__all__ = [
    "BoundQuery", "BoundResult", "DynSystem", "Polynomial", "SdpProblem", "SemialgebraicSet", "SolverOptions",
    "SolverStatus", "bound", "bound_pair", "boundengine", "dynsys", "escalate", "hbalance", "kernels",
    "polyring", "sdpcore", "simulate", "solve", "soscert",
]
