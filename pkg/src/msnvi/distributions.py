"""Probability primitives: diagonal Gaussians, Bernoulli vectors, mixtures.

All parameters and arguments may be Tensors (differentiable) or arrays.
Densities are evaluated over the trailing axis, so batched parameters of
shape (B, 1, D) against draws of shape (B, K, D) give log-probs of shape
(B, K).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DomainError, ShapeError
from .tensor import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))

# Bernoulli logits are clamped to +-30 before any log-prob; the induced
# bias is below 1e-13 but keeps early-training saturation finite.
LOGIT_CLAMP = 30.0


def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else T.tensor(x)


@dataclass
class DiagGaussian:
    """Diagonal Gaussian in moment form; stddev entries strictly positive."""

    mean: Tensor
    stddev: Tensor

    def __post_init__(self):
        self.mean = _as_t(self.mean)
        self.stddev = _as_t(self.stddev)
        sd = self.stddev.data
        if not np.all(np.isfinite(self.mean.data)) or not np.all(np.isfinite(sd)):
            raise DomainError("DiagGaussian: parameters must be finite")
        if np.any(sd <= 0.0):
            raise DomainError("DiagGaussian: stddev must be strictly positive")

    @property
    def dim(self) -> int:
        return self.stddev.data.shape[-1]


@dataclass
class BernoulliVec:
    """Independent Bernoullis stored as logits for numerical stability."""

    logits: Tensor

    def __post_init__(self):
        self.logits = _as_t(self.logits)

    @classmethod
    def from_probs(cls, probs) -> "BernoulliVec":
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise DomainError("BernoulliVec: probs must lie in (0, 1)")
        return cls(T.tensor(np.log(p) - np.log1p(-p)))

    @property
    def probs(self) -> np.ndarray:
        from scipy.special import expit

        return expit(np.clip(self.logits.data, -LOGIT_CLAMP, LOGIT_CLAMP))


def standard_normal(dim: int, dtype=np.float64) -> DiagGaussian:
    """The unit prior N(0, I)."""
    return DiagGaussian(
        T.tensor(np.zeros(dim, dtype=dtype)), T.tensor(np.ones(dim, dtype=dtype))
    )


def gaussian_log_prob(d: DiagGaussian, z) -> Tensor:
    """sum_i [ -0.5 ln 2pi - ln sigma_i - (z_i - mu_i)^2 / (2 sigma_i^2) ]."""
    z = _as_t(z)
    if z.data.shape[-1] != d.dim:
        raise ShapeError(f"gaussian_log_prob: dim {z.data.shape[-1]} vs {d.dim}")
    delta = z - d.mean
    quad = T.square(delta / d.stddev)
    per_dim = T.log(d.stddev) + 0.5 * quad
    return -T.tsum(per_dim, axis=-1) - 0.5 * LOG_2PI * d.dim


def gaussian_rsample(d: DiagGaussian, eps) -> Tensor:
    """Reparameterized draw z = mu + sigma * eps; gradients reach mu, sigma."""
    eps = np.asarray(eps)
    return d.mean + d.stddev * T.tensor(eps.astype(d.stddev.data.dtype, copy=False))


def gaussian_kl(a: DiagGaussian, b: DiagGaussian) -> Tensor:
    """Closed-form KL(a || b) for diagonal Gaussians; nonnegative."""
    if a.dim != b.dim:
        raise ShapeError("gaussian_kl: dimension mismatch")
    var_ratio = T.square(a.stddev / b.stddev)
    delta = T.square((a.mean - b.mean) / b.stddev)
    per_dim = T.log(b.stddev) - T.log(a.stddev) + 0.5 * (var_ratio + delta) - 0.5
    return T.tsum(per_dim, axis=-1)


def bernoulli_log_prob(d: BernoulliVec, x) -> Tensor:
    """sum_i [x_i ln p_i + (1 - x_i) ln(1 - p_i)], from logits.

    Uses x*l - softplus(l), which never forms p. x must be binary.
    """
    xv = np.asarray(x)
    if xv.shape[-1] != d.logits.data.shape[-1]:
        raise ShapeError("bernoulli_log_prob: dimension mismatch")
    if not np.all((xv == 0.0) | (xv == 1.0)):
        raise DomainError("bernoulli_log_prob: x must be binary")
    logits = T.clip(d.logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    xt = T.tensor(xv.astype(logits.data.dtype, copy=False))
    return T.tsum(xt * logits - T.softplus(logits), axis=-1)


def gaussian_likelihood_log_prob(mean, stddev, x) -> Tensor:
    """Gaussian log-density of x under a mean head with (possibly scalar) stddev."""
    mean = _as_t(mean)
    x = _as_t(x)
    n = mean.data.shape[-1]
    quad = T.square((x - mean) / stddev)
    per_dim = T.log(stddev) + 0.5 * quad
    return -T.tsum(per_dim, axis=-1) - 0.5 * LOG_2PI * n


@dataclass
class BeliefSet:
    """Per-source beliefs over one latent space with simplex weights."""

    components: list
    weights: np.ndarray
    source_ids: list

    def __post_init__(self):
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ShapeError("BeliefSet: components must share the latent dim")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.components),):
            raise ShapeError("BeliefSet: one weight per component")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ContractError("BeliefSet: weights must lie on the simplex")
        if self.source_ids is None:
            self.source_ids = list(range(len(self.components)))

    @classmethod
    def uniform(cls, components, source_ids=None) -> "BeliefSet":
        m = len(components)
        ids = list(range(m)) if source_ids is None else list(source_ids)
        return cls(components, np.full(m, 1.0 / m), ids)

    def __len__(self):
        return len(self.components)


def moe_log_prob(beliefs: BeliefSet, z) -> Tensor:
    """Mixture density: logsumexp_m [ln pi_m + ln q_m(z)]."""
    parts = []
    for w, comp in zip(beliefs.weights, beliefs.components):
        if w == 0.0:
            continue
        parts.append(gaussian_log_prob(comp, z) + float(np.log(w)))
    if len(parts) == 1:
        return parts[0]
    stacked = T.stack(parts, axis=0)
    return T.logsumexp(stacked, axis=0)
