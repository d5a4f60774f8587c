"""Spatial frailty survival models with restricted (deconfounded) spatial effects."""

from .correction import RestrictedDraws, restrict_draws
from .diagnostics import summarize_draws, svif, svrf, type_s_rate
from .graph import AreaGraph, build_graph, icar_precision, lattice_graph, read_adjacency, sample_icar
from .inference import MCMCConfig, ModelSpec, PosteriorDraws, fit_unrestricted
from .reduction import ReducedProjector, expand, reduce
from .survival import BaselineFamily, SurvivalDataset, log_likelihood

__version__ = "0.1.0"
