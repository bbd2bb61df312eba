"""Isometry-invariant geodesics on closed catalog manifolds via broken-geodesic loop spaces."""

from .errors import GeolabError
from .flows import FlowConfig, descend, newton_critical, refine_critical, shell_diagnostics, shorten
from .homotopy import LoopFamily, bangert_decay, bangert_homotopy, escape_negative_directions, minimax
from .loopspace import (BrokenLoop, GeodesicRecord, PeriodData, TimeGrid, energy_Fq, energy_Fq_prime,
                        iterate_embedding, random_loop, residue_partition)
from .manifold import CircleTimesSphere, FlatTorus, RoundSphere, TriaxialEllipsoid, make_isometry, make_model
from .morse import dichotomy_scan, discrete_hessian, jacobi_conjugate_count

__version__ = "0.1.0"

__all__ = [
    "GeolabError", "FlowConfig", "descend", "newton_critical", "refine_critical", "shell_diagnostics",
    "shorten", "LoopFamily", "bangert_decay", "bangert_homotopy", "escape_negative_directions", "minimax",
    "BrokenLoop", "GeodesicRecord", "PeriodData", "TimeGrid", "energy_Fq", "energy_Fq_prime",
    "iterate_embedding", "random_loop", "residue_partition", "CircleTimesSphere", "FlatTorus",
    "RoundSphere", "TriaxialEllipsoid", "make_isometry", "make_model", "dichotomy_scan",
    "discrete_hessian", "jacobi_conjugate_count",
]
