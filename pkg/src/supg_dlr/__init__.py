"""SUPG-stabilized dynamical low-rank solver for random 1D
advection-diffusion-reaction problems."""
from .dlr import LowRankField, TangentVector, compute_c_lbi, project_tangent_oblique, project_tangent_orthogonal
from .errors import SupgDlrError
from .experiments import ExperimentConfig, RunReport, convergence_study, rank_study
from .fem1d import LagrangeSpace, Mesh1D, assemble, estimate_inverse_constant
from .measure import DiscreteMeasure, StochasticModes
from .oracle import ManufacturedProblem, full_tensor_solve
from .stepper import TimeGrid, run, step
from .supg import ProblemCoefficients, assemble_supg, select_delta

__all__ = [
    "DiscreteMeasure", "ExperimentConfig", "LagrangeSpace", "LowRankField", "ManufacturedProblem",
    "Mesh1D", "ProblemCoefficients", "RunReport", "StochasticModes", "SupgDlrError",
    "TangentVector", "TimeGrid", "assemble", "assemble_supg", "compute_c_lbi",
    "convergence_study", "estimate_inverse_constant", "full_tensor_solve",
    "project_tangent_oblique", "project_tangent_orthogonal", "rank_study", "run",
    "select_delta", "step",
]
