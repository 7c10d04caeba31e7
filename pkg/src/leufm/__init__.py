"""Linear-layer unconstrained feature model under class imbalance.

Closed-form global minimizers, their spectral ingredients, a reference
trainer and neural-collapse metrics comparing the two.
"""

from .analytic import AnalyticSolution, gmin_scalar, nuclear_factorize, sigma_star_scalar, solve
from .imbalance import ImbalanceSpec, LabelAlgebra, label_algebra, parse_counts
from .metrics import NCReport, nc_report
from .model import Dims, ModelParams, RegParams, gradients, objective
from .spectral import GroupSpectrum, full_spectrum
from .trainer import DivergenceError, TrainConfig, train

__all__ = [
    "AnalyticSolution", "DivergenceError", "Dims", "GroupSpectrum", "ImbalanceSpec", "LabelAlgebra",
    "ModelParams", "NCReport", "RegParams", "TrainConfig", "full_spectrum", "gmin_scalar",
    "gradients", "label_algebra", "nc_report", "nuclear_factorize", "objective", "parse_counts",
    "sigma_star_scalar", "solve", "train",
]
__version__ = "0.1.0"
