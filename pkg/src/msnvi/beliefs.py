"""Canonical-form Gaussian algebra: fusion, partition functions, conflict.

Fusion of a belief subset S against the shared prior is additive in the
canonical parametrization (eta = Lambda mu, diagonal precision Lambda):

    Lambda* = sum_m Lambda_m - (|S| - 1) Lambda_0
    eta*    = sum_m eta_m    - (|S| - 1) eta_0

All operations are differentiable Tensor arithmetic, so training objectives
can push gradients through the fusion into every encoder. Partition
functions are computed in the log domain; the linear-domain value is only
exposed for low-dimensional latents where it cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distributions import LOG_2PI, DiagGaussian, gaussian_kl
from .errors import ConflictUndefinedError, DomainError, FusionDegenerateError
from .tensor import Tensor

# linear-domain Z is only safe for small latents; beyond this use the log form
MAX_LINEAR_Z_DIM = 8

CONFLICT_DENOM_FLOOR = 1e-12


def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else T.tensor(x)


@dataclass
class CanonicalGaussian:
    """Diagonal Gaussian in canonical form: eta = Lambda mu, Lambda > 0."""

    eta: Tensor
    lam: Tensor

    def __post_init__(self):
        self.eta = _as_t(self.eta)
        self.lam = _as_t(self.lam)

    @property
    def dim(self) -> int:
        return self.lam.data.shape[-1]


def to_canonical(d: DiagGaussian) -> CanonicalGaussian:
    """Lambda_i = 1 / sigma_i^2, eta_i = mu_i / sigma_i^2."""
    lam = 1.0 / T.square(d.stddev)
    return CanonicalGaussian(d.mean * lam, lam)


def from_canonical(c: CanonicalGaussian) -> DiagGaussian:
    if np.any(c.lam.data <= 0.0):
        raise DomainError("from_canonical: precision must be strictly positive")
    stddev = 1.0 / T.sqrt(c.lam)
    return DiagGaussian(c.eta / c.lam, stddev)


def poe_fuse(beliefs, prior: DiagGaussian) -> DiagGaussian:
    """Product-of-experts fusion of a belief subset with prior correction.

    M in the update is the subset size, so fusing any subset of sources is
    well defined. Raises FusionDegenerateError when the fused precision has
    a nonpositive entry, which signals a violated per-source precision
    condition (Lambda_m >= Lambda_0 is sufficient to prevent it).
    """
    beliefs = list(beliefs)
    if not beliefs:
        raise DomainError("poe_fuse: empty subset")
    m = len(beliefs)
    prior_c = to_canonical(prior)
    cs = [to_canonical(b) for b in beliefs]

    lam_star = cs[0].lam
    eta_star = cs[0].eta
    for c in cs[1:]:
        lam_star = lam_star + c.lam
        eta_star = eta_star + c.eta
    if m > 1:
        lam_star = lam_star - (m - 1) * prior_c.lam
        eta_star = eta_star - (m - 1) * prior_c.eta

    if np.any(lam_star.data <= 0.0):
        raise FusionDegenerateError(
            "poe_fuse: fused precision has nonpositive entries; "
            "a source belief is less precise than the prior"
        )
    return from_canonical(CanonicalGaussian(eta_star, lam_star))


def log_partition_function(c: CanonicalGaussian) -> Tensor:
    """ln Z = (D/2) ln 2pi - (1/2) sum ln Lambda_i + (1/2) sum eta_i^2 / Lambda_i."""
    if np.any(c.lam.data <= 0.0):
        raise DomainError("log_partition_function: precision must be positive")
    log_det = T.tsum(T.log(c.lam), axis=-1)
    quad = T.tsum(T.square(c.eta) / c.lam, axis=-1)
    return 0.5 * (c.dim * LOG_2PI - log_det + quad)


def partition_function(c: CanonicalGaussian) -> Tensor:
    """Linear-domain Z; restricted to D_z <= 8 to rule out overflow."""
    if c.dim > MAX_LINEAR_Z_DIM:
        raise DomainError(
            f"partition_function: D_z={c.dim} > {MAX_LINEAR_Z_DIM}; "
            "use log_partition_function"
        )
    return T.exp(log_partition_function(c))


def pmi(beliefs, prior: DiagGaussian) -> Tensor:
    """Pointwise mutual information of the subset's observations.

    PMI = (M-1) ln Z_0 - sum_m ln Z_m + ln Z*, evaluated entirely in the
    log domain. Zero for M = 1 and whenever every belief equals the prior.
    """
    beliefs = list(beliefs)
    m = len(beliefs)
    fused = to_canonical(poe_fuse(beliefs, prior))
    total = log_partition_function(fused)
    total = total + (m - 1) * log_partition_function(to_canonical(prior))
    for b in beliefs:
        total = total - log_partition_function(to_canonical(b))
    return total


def conflict(q_m: DiagGaussian, q_mp: DiagGaussian, prior: DiagGaussian) -> float:
    """c(m || m') = KL(q_m' || q_m) / KL(q_m' || prior).

    Asymmetric; values above 1 flag conflict. The denominator measures how
    informative the evidence belief q_m' is; an uninformative one (belief
    equal to the prior) leaves the ratio undefined.
    """
    num = float(gaussian_kl(q_mp, q_m).item())
    den = float(gaussian_kl(q_mp, prior).item())
    if den < CONFLICT_DENOM_FLOOR:
        raise ConflictUndefinedError(
            f"conflict: KL(q_m' || prior) = {den:.3e} below {CONFLICT_DENOM_FLOOR}"
        )
    return num / den
