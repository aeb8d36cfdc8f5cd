"""Bayesian Heckman selection models with normal, Student's t and
contaminated-normal errors, fitted by a No-U-Turn sampler."""

__version__ = "0.1.0"

from .nuts import PosteriorDraws, SamplerConfig, run_chains  # noqa: E402
from .inference import FitReport, summarize  # noqa: E402
from .sel_model import PriorSpec, SelectionData, SelectionModel, SelParams  # noqa: E402
from .sim_gen import SimConfig, generate_dataset, run_replication  # noqa: E402
from .two_step import heckman_two_step  # noqa: E402

__all__ = [
    "FitReport",
    "PosteriorDraws",
    "PriorSpec",
    "SamplerConfig",
    "SelParams",
    "SelectionData",
    "SelectionModel",
    "SimConfig",
    "generate_dataset",
    "heckman_two_step",
    "run_chains",
    "run_replication",
    "summarize",
]
