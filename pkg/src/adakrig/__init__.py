"""Kriging-assisted Bayesian inversion with adaptive designs of experiments."""

from . import criteria, doe, experiment, forward, gp, mcmc, prior
from .criteria import (
    ECDConfig,
    SAConfig,
    WIMSEConfig,
    ecd_score,
    ecd_select,
    knn_kl_estimate,
    mmse_select,
    simulated_annealing,
    wimse_score,
    wimse_select,
    wimse_weight,
)
from .doe import Design, Domain, augment_design, maximin_lhd, min_intersite_distance
from .errors import *  # noqa: F403
from .forward import BastosModel, bastos_h, generate_synthetic_data, toy_problem
from .gp import KrigingModel, Kernel, fit_kriging, q2_loocv, virtual_update
from .mcmc import LikelihoodContext, MCMCConfig, ObservationSet, brooks_gelman, gibbs_step, run_chain
from .prior import PriorHyper, Theta, elicit_prior

__version__ = "0.1.0"
