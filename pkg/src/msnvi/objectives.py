"""Monte-Carlo estimators of the training objectives.

Five bounds on ln p(x), all estimated with K importance samples and a
logsumexp - ln K average of log weights:

  ind     per-source proposals, uniformly weighted average of M bounds
  moe     same draws, but the weight denominator is the belief mixture
  poe     all draws from the product-of-experts fusion of every belief
  hybrid  lambda1 * ind + lambda2 * poe with independent draws per term
  iwae    one hardwired encoder over concatenated sources

The numerator of every importance weight evaluates all likelihood heads:
each latent sample must predict every observation. Noise streams are keyed
by (record-id, source-id, sample-index), so estimates are reproducible and
invariant to source ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .beliefs import poe_fuse
from .datasets import SourceTuple, stack_records
from .distributions import (
    BernoulliVec,
    DiagGaussian,
    bernoulli_log_prob,
    gaussian_likelihood_log_prob,
    gaussian_log_prob,
    gaussian_rsample,
)
from .errors import ContractError, EmptyDatasetError
from .models import BERNOULLI, ModelBundle, decode_heads, encode
from .rng import FUSED_KEY, HARDWIRED_KEY, StreamRNG
from .tensor import Tensor

IND = "ind"
MOE = "moe"
POE = "poe"
HYBRID = "hybrid"
IWAE = "iwae"

KINDS = (IND, MOE, POE, HYBRID, IWAE)


@dataclass(frozen=True)
class Objective:
    """Objective selector; hybrid mixing weights must sum to 1."""

    kind: str
    lambda1: float = 0.5
    lambda2: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown objective kind {self.kind!r}")
        if abs(self.lambda1 + self.lambda2 - 1.0) > 1e-12:
            raise ContractError("hybrid weights must sum to 1")


def _expand(d: DiagGaussian) -> DiagGaussian:
    """(B, D) belief -> (B, 1, D) so it broadcasts against (B, K, D) draws."""
    b, dz = d.mean.data.shape
    return DiagGaussian(
        T.reshape(d.mean, (b, 1, dz)), T.reshape(d.stddev, (b, 1, dz))
    )


def _encoder_input(bundle: ModelBundle, eid, sources: dict) -> np.ndarray:
    es = bundle.spec.encoders[eid]
    parts = [sources[sid] for sid in es.sources]
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)


def encode_all(bundle: ModelBundle, sources: dict) -> dict:
    """Batched beliefs of every encoder in the bundle, keyed by encoder id."""
    return {
        eid: encode(bundle, eid, _encoder_input(bundle, eid, sources))
        for eid in sorted(bundle.spec.encoders)
    }


def _batch_loglik(bundle: ModelBundle, targets: dict, z: Tensor) -> Tensor:
    """sum_m ln p(x_m | z_bk) for draws z of shape (B, S, dz) -> (B, S)."""
    b, s, dz = z.data.shape
    flat = T.reshape(z, (b * s, dz))
    total = None
    for obs_id in sorted(targets):
        x = np.asarray(targets[obs_id], dtype=bundle.dtype)[:, None, :]
        head = decode_heads(bundle, obs_id, flat)
        if head[0] == BERNOULLI:
            logits = T.reshape(head[1], (b, s, -1))
            ll = bernoulli_log_prob(BernoulliVec(logits), x)
        else:
            mean = T.reshape(head[1], (b, s, -1))
            ll = gaussian_likelihood_log_prob(mean, head[2], x)
        total = ll if total is None else total + ll
    return total


def _draws(belief: DiagGaussian, record_ids, key: int, k: int, rng: StreamRNG):
    dz = belief.mean.data.shape[-1]
    eps = rng.normal_batch(record_ids, key, (k, dz))
    return gaussian_rsample(_expand(belief), eps)


def _iw_bound(logw: Tensor, k: int) -> Tensor:
    """ln (1/K) sum_k w_k, per record: logsumexp over the sample axis."""
    return T.logsumexp(logw, axis=1) - float(np.log(k))


def _ind_terms(bundle, beliefs, targets, record_ids, k, rng, mixture: bool):
    """Shared core of the ind and moe bounds; returns the per-record average."""
    enc_ids = sorted(beliefs)
    m = len(enc_ids)
    pi = 1.0 / m
    prior = bundle.prior
    total = None
    for eid in enc_ids:
        z = _draws(beliefs[eid], record_ids, eid, k, rng)
        loglik = _batch_loglik(bundle, targets, z)
        logprior = gaussian_log_prob(prior, z)
        if mixture:
            comps = [
                gaussian_log_prob(_expand(beliefs[e]), z) + float(np.log(pi))
                for e in enc_ids
            ]
            logq = T.logsumexp(T.stack(comps, axis=0), axis=0)
        else:
            logq = gaussian_log_prob(_expand(beliefs[eid]), z)
        term = _iw_bound(loglik + logprior - logq, k)
        total = term if total is None else total + term
    return pi * total


def _poe_term(bundle, beliefs, targets, record_ids, k, rng):
    fused = poe_fuse([beliefs[e] for e in sorted(beliefs)], bundle.prior)
    z = _draws(fused, record_ids, FUSED_KEY, k, rng)
    loglik = _batch_loglik(bundle, targets, z)
    logprior = gaussian_log_prob(bundle.prior, z)
    logq = gaussian_log_prob(_expand(fused), z)
    return _iw_bound(loglik + logprior - logq, k)


def estimate_batch(
    bundle: ModelBundle,
    objective: Objective,
    sources: dict,
    targets: dict,
    record_ids,
    k: int,
    rng: StreamRNG,
) -> Tensor:
    """Per-record bound estimates, shape (B,). Differentiable."""
    if k < 1:
        raise ContractError("k must be >= 1")
    if objective.kind == IWAE:
        (eid,) = sorted(bundle.spec.encoders)
        belief = encode_all(bundle, sources)[eid]
        z = _draws(belief, record_ids, HARDWIRED_KEY, k, rng)
        loglik = _batch_loglik(bundle, targets, z)
        logprior = gaussian_log_prob(bundle.prior, z)
        logq = gaussian_log_prob(_expand(belief), z)
        return _iw_bound(loglik + logprior - logq, k)

    beliefs = encode_all(bundle, sources)
    if objective.kind == IND:
        return _ind_terms(bundle, beliefs, targets, record_ids, k, rng, mixture=False)
    if objective.kind == MOE:
        return _ind_terms(bundle, beliefs, targets, record_ids, k, rng, mixture=True)
    if objective.kind == POE:
        return _poe_term(bundle, beliefs, targets, record_ids, k, rng)
    ind = _ind_terms(bundle, beliefs, targets, record_ids, k, rng, mixture=False)
    poe = _poe_term(bundle, beliefs, targets, record_ids, k, rng)
    return objective.lambda1 * ind + objective.lambda2 * poe


def _single(bundle, objective, record: SourceTuple, k, rng) -> Tensor:
    sources, targets, ids = stack_records([record])
    est = estimate_batch(bundle, objective, sources, targets, ids, k, rng)
    return T.reshape(est, ())


def elbo_ind(bundle, record, k, rng) -> Tensor:
    """Average of per-source importance-weighted bounds, Eq.-style weights 1/M."""
    return _single(bundle, Objective(IND), record, k, rng)


def elbo_moe(bundle, record, k, rng) -> Tensor:
    """Mixture-denominator variant; components enumerated, never sampled."""
    return _single(bundle, Objective(MOE), record, k, rng)


def elbo_poe(bundle, record, k, rng) -> Tensor:
    """Bound with all draws from the fused product-of-experts belief."""
    return _single(bundle, Objective(POE), record, k, rng)


def elbo_hybrid(bundle, record, k, rng, lambda1=0.5, lambda2=0.5) -> Tensor:
    """lambda1 * ind + lambda2 * poe with independent draws per term."""
    return _single(bundle, Objective(HYBRID, lambda1, lambda2), record, k, rng)


def elbo_iwae_hardwired(bundle, record, k, rng) -> Tensor:
    """Standard IWAE bound for a bundle with a single (hardwired) encoder."""
    return _single(bundle, Objective(IWAE), record, k, rng)


def importance_log_weights(
    bundle: ModelBundle, record: SourceTuple, proposal: DiagGaussian, z_draws
) -> Tensor:
    """log w_k = sum_m ln p(x_m | z_k) + ln p(z_k) - ln proposal(z_k), shape (K,)."""
    z = np.asarray(z_draws, dtype=bundle.dtype)
    if z.ndim == 1:
        z = z[None, :]
    k = z.shape[0]
    _, targets, _ = stack_records([record])
    zt = T.tensor(z.reshape(1, k, -1))
    loglik = _batch_loglik(bundle, targets, zt)
    logprior = gaussian_log_prob(bundle.prior, zt)
    logq = gaussian_log_prob(proposal, T.reshape(zt, (k, -1)))
    return T.reshape(loglik + logprior, (k,)) - logq


def evaluate_bound(
    bundle: ModelBundle,
    dataset,
    objective: Objective,
    k: int = 16,
    seed: int = 0,
    batch_size: int = 256,
) -> float:
    """Mean negative bound per record (lower is better); deterministic per seed."""
    records = list(dataset)
    if not records:
        raise EmptyDatasetError("evaluate_bound: empty dataset")
    rng = StreamRNG(seed)
    vals = []
    for lo in range(0, len(records), batch_size):
        chunk = records[lo : lo + batch_size]
        sources, targets, ids = stack_records(chunk)
        sources = {k_: v.astype(bundle.dtype) for k_, v in sources.items()}
        targets = {k_: v.astype(bundle.dtype) for k_, v in targets.items()}
        est = estimate_batch(bundle, objective, sources, targets, ids, k, rng)
        vals.append(est.data)
    return float(-np.mean(np.concatenate(vals)))
