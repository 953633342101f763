"""Exact i.i.d. posterior sampling for bounded-component Dirichlet process mixtures."""

from ._backend import backend_name
from .bounds import approx_bound, bound_report, exact_bound, traditional_bound
from .datasets import Dataset, benchmark_config, load_dataset
from .engine import DPTarget, EngineConfig, ShellEstimate, ToyTarget, perfect_draw, sample_iid
from .errors import DataError, DpiidError, EngineError, FrameError, InvalidInputError, NumericError
from .model import HyperParams, Theta, ThetaAux, WeightMode
from .postprocess import k_posterior, predictive_density
from .tmcmc import TmcmcConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "approx_bound", "bound_report", "exact_bound", "traditional_bound",
    "Dataset", "benchmark_config", "load_dataset",
    "DPTarget", "EngineConfig", "ShellEstimate", "ToyTarget", "perfect_draw", "sample_iid",
    "DataError", "DpiidError", "EngineError", "FrameError", "InvalidInputError", "NumericError",
    "HyperParams", "Theta", "ThetaAux", "WeightMode",
    "k_posterior", "predictive_density",
    "TmcmcConfig", "run_chain",
]
