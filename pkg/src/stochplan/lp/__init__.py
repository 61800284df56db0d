"""Sparse LP kernel: revised simplex, HiGHS backend, branch-and-bound."""

from .highs import HighsSession, solve_highs
from .io import read_triplets, write_mps, write_triplets
from .kernel import CertificateReport, check_certificates, solve_lp, solve_mip
from .model import LPBuilder, LPSolution, SparseLP, Status
from .simplex import solve_simplex

__all__ = [
    "CertificateReport", "HighsSession", "LPBuilder", "LPSolution", "SparseLP", "Status",
    "check_certificates", "read_triplets", "solve_highs", "solve_lp", "solve_mip",
    "solve_simplex", "write_mps", "write_triplets",
]
