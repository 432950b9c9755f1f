"""Post-training inference: conditional prediction, SIR, chain imputation,
and streaming conflict monitoring.

Everything here runs without a tape; beliefs and decoder heads are
evaluated as plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .beliefs import conflict, poe_fuse
from .datasets import SourceTuple
from .distributions import LOGIT_CLAMP, DiagGaussian
from .errors import ConflictUndefinedError, ContractError
from .models import BERNOULLI, GAUSSIAN, ModelBundle, decode_heads, encode
from .objectives import encode_all, importance_log_weights


def _fuse_subset(bundle: ModelBundle, source_values: dict) -> DiagGaussian:
    """Belief for a source subset: the single belief, or their PoE fusion."""
    ids = sorted(source_values)
    if not ids:
        raise ContractError("empty source subset")
    beliefs = [encode(bundle, sid, source_values[sid]) for sid in ids]
    if len(beliefs) == 1:
        return beliefs[0]
    return poe_fuse(beliefs, bundle.prior)


def _sample_belief(belief: DiagGaussian, n: int, rng) -> np.ndarray:
    mean = belief.mean.data
    std = belief.stddev.data
    return mean + std * rng.standard_normal((n,) + mean.shape)


def _decode_params(bundle, obs_id, z):
    head = decode_heads(bundle, obs_id, z)
    if head[0] == BERNOULLI:
        probs = expit(np.clip(head[1].data, -LOGIT_CLAMP, LOGIT_CLAMP))
        return BERNOULLI, probs, None
    return GAUSSIAN, head[1].data, float(head[2].data)


def conditional_predict(bundle, source_values: dict, target, n_samples: int, rng):
    """Monte-Carlo estimate of p(x_target | x_S).

    source_values: source id -> observed vector; fused via PoE when |S| > 1.
    Returns (draws, means): n_samples rows each, where means are the
    decoder distribution parameters per latent draw and draws are one
    sample from each conditional.
    """
    belief = _fuse_subset(bundle, source_values)
    z = _sample_belief(belief, n_samples, rng)
    kind, mean, std = _decode_params(bundle, target, z)
    if kind == BERNOULLI:
        draws = (rng.random(mean.shape) < mean).astype(np.float64)
    else:
        draws = mean + std * rng.standard_normal(mean.shape)
    return draws, mean


def conditional_log_likelihood_batch(
    bundle: ModelBundle, sources: dict, target, truth, n_samples: int, rng
) -> np.ndarray:
    """Predictive log-likelihood ln (1/S) sum_s p(x_target | z_s) per record.

    sources: source id -> (N, D) observed values; latents come from the
    fused (or single) belief. Returns (N,) log-mean-exp estimates.
    """
    ids = sorted(sources)
    beliefs = [encode(bundle, sid, sources[sid]) for sid in ids]
    belief = beliefs[0] if len(beliefs) == 1 else poe_fuse(beliefs, bundle.prior)
    mean = belief.mean.data
    std = belief.stddev.data
    n, dz = mean.shape
    z = mean[:, None, :] + std[:, None, :] * rng.standard_normal((n, n_samples, dz))
    kind, p, gstd = _decode_params(bundle, target, z.reshape(n * n_samples, dz))
    truth = np.asarray(truth, dtype=np.float64)
    if kind == BERNOULLI:
        p = np.clip(p.reshape(n, n_samples, -1), 1e-12, 1.0 - 1e-12)
        t = truth[:, None, :]
        ll = (t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum(axis=2)
    else:
        mu = p.reshape(n, n_samples, -1)
        d = mu.shape[2]
        quad = ((truth[:, None, :] - mu) / gstd) ** 2
        ll = -0.5 * quad.sum(axis=2) - d * (0.5 * np.log(2 * np.pi) + np.log(gstd))
    m = ll.max(axis=1, keepdims=True)
    return (m + np.log(np.mean(np.exp(ll - m), axis=1, keepdims=True)))[:, 0]


@dataclass
class SirResult:
    proposals: np.ndarray  # (K, dz)
    weights: np.ndarray  # (K,), sums to 1
    resampled: np.ndarray  # (K, dz), drawn with replacement
    ess: float  # 1 / sum w^2, in [1, K]


def sir(bundle, record: SourceTuple, proposal: DiagGaussian, k: int, rng) -> SirResult:
    """Sampling importance resampling using every likelihood head."""
    if k < 1:
        raise ContractError("sir: k must be >= 1")
    z = _sample_belief(proposal, k, rng)
    logw = importance_log_weights(bundle, record, proposal, z).data
    shifted = logw - logw.max()
    w = np.exp(shifted)
    w = w / w.sum()
    idx = rng.choice(k, size=k, replace=True, p=w)
    return SirResult(
        proposals=z,
        weights=w,
        resampled=z[idx],
        ess=float(1.0 / np.sum(w**2)),
    )


@dataclass
class ImputationResult:
    loglik: np.ndarray  # (steps,) mean log-likelihood of the true missing block
    records: list  # per-step imputed source dicts (kept when requested)
    final: dict  # source id -> vector after the last step


def markov_chain_impute(
    bundle: ModelBundle,
    missing_mask: dict,
    record: SourceTuple,
    steps: int,
    rng,
    keep_records: bool = False,
) -> ImputationResult:
    """Pseudo-Gibbs imputation with a full-record (hardwired) encoder.

    missing_mask: source id -> boolean array, True where the value is
    unknown. Missing entries start as Ber(0.5) draws; each step encodes the
    current record, samples one latent, decodes, and redraws only the
    missing entries from the decoder probabilities. Observed entries are
    never touched. The per-step log-likelihood scores the ground-truth
    missing block under the decoder probabilities of that step.
    """
    res = markov_chain_impute_batch(
        bundle,
        missing_mask,
        {m: v[None, :] for m, v in record.sources.items()},
        steps,
        rng,
        keep_records=keep_records,
    )
    return ImputationResult(
        loglik=res.loglik[:, 0],
        records=[{m: v[0] for m, v in r.items()} for r in res.records],
        final={m: v[0] for m, v in res.final.items()},
    )


@dataclass
class BatchImputationResult:
    loglik: np.ndarray  # (steps, N)
    records: list
    final: dict


def markov_chain_impute_batch(
    bundle: ModelBundle,
    missing_mask: dict,
    sources: dict,
    steps: int,
    rng,
    keep_records: bool = False,
) -> BatchImputationResult:
    """Vectorized chain over N records; sources: id -> (N, D) ground truth."""
    (eid,) = bundle.spec.encoders
    enc_sources = bundle.spec.encoders[eid].sources
    truth = {m: np.asarray(v, dtype=np.float64) for m, v in sources.items()}
    n = next(iter(truth.values())).shape[0]

    current = {m: v.copy() for m, v in truth.items()}
    masks = {m: np.asarray(missing_mask.get(m, np.zeros(v.shape[1], bool)), bool)
             for m, v in truth.items()}
    for m, mask in masks.items():
        if mask.any():
            init = (rng.random((n, int(mask.sum()))) < 0.5).astype(np.float64)
            current[m][:, mask] = init

    loglik = np.zeros((max(steps, 0), n))
    kept = []
    for step in range(steps):
        x_cat = np.concatenate([current[m] for m in enc_sources], axis=1)
        belief = encode(bundle, eid, x_cat)
        z = belief.mean.data + belief.stddev.data * rng.standard_normal(
            belief.mean.data.shape
        )
        step_ll = np.zeros(n)
        for m, mask in masks.items():
            if not mask.any():
                continue
            kind, probs, _ = _decode_params(bundle, m, z)
            p_missing = np.clip(probs[:, mask], 1e-12, 1.0 - 1e-12)
            truth_m = truth[m][:, mask]
            step_ll += (
                truth_m * np.log(p_missing) + (1.0 - truth_m) * np.log1p(-p_missing)
            ).sum(axis=1)
            draws = (rng.random(p_missing.shape) < p_missing).astype(np.float64)
            current[m][:, mask] = draws
        loglik[step] = step_ll
        if keep_records:
            kept.append({m: v.copy() for m, v in current.items()})
    return BatchImputationResult(loglik=loglik, records=kept, final=current)


@dataclass
class ConflictTrace:
    """Ordered-pair conflict values per timestep; NaN cells carry a flag."""

    values: np.ndarray  # (T, M, M), entry [t, m, mp] = c(m || m')
    undefined: np.ndarray  # (T, M, M) bool
    timestamps: np.ndarray  # (T,)
    source_ids: list = field(default_factory=list)


def conflict_monitor(bundle: ModelBundle, stream) -> ConflictTrace:
    """Encode every source of every tuple and fill the conflict matrix."""
    values = []
    undefined = []
    stamps = []
    sids = None
    for t, tup in enumerate(stream):
        beliefs = encode_all(bundle, {m: v[None, :] for m, v in tup.sources.items()})
        beliefs = {
            m: DiagGaussian(b.mean.data[0], b.stddev.data[0])
            for m, b in beliefs.items()
        }
        if sids is None:
            sids = sorted(beliefs)
        mat = np.zeros((len(sids), len(sids)))
        flag = np.zeros((len(sids), len(sids)), dtype=bool)
        for i, m in enumerate(sids):
            for j, mp in enumerate(sids):
                try:
                    mat[i, j] = conflict(beliefs[m], beliefs[mp], bundle.prior)
                except ConflictUndefinedError:
                    mat[i, j] = np.nan
                    flag[i, j] = True
        values.append(mat)
        undefined.append(flag)
        stamps.append(t)
    if not values:
        return ConflictTrace(np.zeros((0, 0, 0)), np.zeros((0, 0, 0), bool), np.array([]))
    return ConflictTrace(
        np.stack(values), np.stack(undefined), np.array(stamps), sids
    )
