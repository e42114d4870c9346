"""Exact Bayesian wavelet-domain smoothing and functional ANOVA.

Curves observed at dyadic time points are modeled in the wavelet domain with
spike-and-slab normal-inverse-Gamma priors whose inclusion indicators follow
Markov trees along the coefficient hierarchy ("groves" when several factors
each carry their own tree).  All posterior quantities — marginal inclusion
probabilities, joint-effect probabilities, evidence, and direct posterior
samples — are computed exactly by a two-sweep pyramid recursion, without MCMC.
"""
from .decision import DecisionReport, evaluate, threshold_for_fdr
from .ebayes import (
    FitSpec,
    calibrate_sparsity,
    initial_hyperparams,
    log_marginal,
    mmle_fit,
    prior_pjap,
)
from .grove import (
    PosteriorGrove,
    PosteriorSample,
    brute_force_oracle,
    credible_bands,
    downward_marginals,
    pjap,
    posterior_mean_coefficients,
    posterior_mean_curve,
    posterior_mean_z,
    sample_posterior,
    upward_pass,
)
from .nodemodel import (
    FactorDesign,
    HyperParams,
    NumericalError,
    joint_root_probs,
    joint_states,
    joint_transition,
    marginal_mg,
    marginal_mt,
    nig_conditional,
    root_probs,
    transition_matrix,
)
from .simbench import (
    Scenario,
    SimulatedData,
    amse,
    generate,
    noise_sigma_for_rsnr,
    pointwise_f_test,
    roc,
    test_function,
)
from .wavelet import (
    HAAR,
    LA10,
    CoefficientStack,
    CoefficientTree,
    NodeIndex,
    WaveletFilter,
    children,
    depth_for_length,
    forward_dwt,
    get_filter,
    inverse_dwt,
    parent,
    tree_topology,
)

__version__ = "0.1.0"

__all__ = [
    "HAAR",
    "LA10",
    "CoefficientStack",
    "CoefficientTree",
    "DecisionReport",
    "FactorDesign",
    "FitSpec",
    "HyperParams",
    "NodeIndex",
    "NumericalError",
    "PosteriorGrove",
    "PosteriorSample",
    "Scenario",
    "SimulatedData",
    "WaveletFilter",
    "amse",
    "brute_force_oracle",
    "calibrate_sparsity",
    "children",
    "credible_bands",
    "depth_for_length",
    "downward_marginals",
    "evaluate",
    "forward_dwt",
    "generate",
    "get_filter",
    "initial_hyperparams",
    "inverse_dwt",
    "joint_root_probs",
    "joint_states",
    "joint_transition",
    "log_marginal",
    "marginal_mg",
    "marginal_mt",
    "mmle_fit",
    "nig_conditional",
    "noise_sigma_for_rsnr",
    "parent",
    "pjap",
    "pointwise_f_test",
    "posterior_mean_coefficients",
    "posterior_mean_curve",
    "posterior_mean_z",
    "prior_pjap",
    "roc",
    "root_probs",
    "sample_posterior",
    "test_function",
    "threshold_for_fdr",
    "transition_matrix",
    "tree_topology",
    "upward_pass",
    "__version__",
]
