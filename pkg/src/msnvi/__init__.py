"""Multi-source neural variational inference toolkit.

Per-source encoders share one latent-variable generative model; their
Gaussian beliefs can be compared (conflict), combined (mixture or product
of experts), and used for conditional prediction across sources.
"""

from .beliefs import (
    CanonicalGaussian,
    conflict,
    from_canonical,
    log_partition_function,
    partition_function,
    pmi,
    poe_fuse,
    to_canonical,
)
from .distributions import (
    BeliefSet,
    BernoulliVec,
    DiagGaussian,
    bernoulli_log_prob,
    gaussian_kl,
    gaussian_log_prob,
    gaussian_rsample,
    moe_log_prob,
    standard_normal,
)
from .objectives import (
    Objective,
    elbo_hybrid,
    elbo_ind,
    elbo_iwae_hardwired,
    elbo_moe,
    elbo_poe,
    evaluate_bound,
    importance_log_weights,
)
from .rng import StreamRNG
from .tensor import Tape, Tensor, backward, finite_diff_check, forward

__version__ = "0.1.0"
