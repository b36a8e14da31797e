"""Exact inference, sampling and gradient estimation for the k-subset distribution."""

from .estimators import (
    ESTIMATORS,
    GradientEstimate,
    LossOracle,
    estimate_imle,
    estimate_sfe,
    estimate_simple,
    estimate_softsub,
    estimate_st_gumbel,
    exact_gradient,
    linear_loss,
    squared_distance_loss,
)
from .inference import (
    EnumerationTooLarge,
    KSubsetParams,
    conditional_marginals,
    entropy,
    enumerate_distribution,
    jacobian_vector_product,
    kl_to_uniform,
    log_prob,
    marginal_jacobian,
    pairwise_marginals,
    pr_exactly_k,
    pr_exactly_k_dc,
    score,
)
from .sampling import gumbel_noise, make_rng, pam_topk, sample_exact, sample_exact_dc, trial_rng

__version__ = "0.1.0"
