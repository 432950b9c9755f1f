"""Per-source encoder and decoder MLPs with Gaussian and Bernoulli heads.

Encoders map one source to a diagonal Gaussian belief: the mean head is
linear, the stddev head is a sigmoid, so stddev lies in (0, 1) and every
belief satisfies the fusion precondition Lambda > 1 against the unit
prior. Decoders map latents to either Bernoulli logits or a Gaussian mean
with one global stddev parameter (stored as its log).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distributions import (
    DiagGaussian,
    bernoulli_log_prob,
    BernoulliVec,
    gaussian_likelihood_log_prob,
    standard_normal,
)
from .errors import ShapeError
from .tensor import Tensor

ACTIVATIONS = {"tanh": T.tanh, "elu": T.elu, "sigmoid": T.sigmoid}

BERNOULLI = "bernoulli"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class EncoderSpec:
    in_dim: int
    stem: tuple  # ((width, activation), ...)
    dz: int
    sources: tuple  # source ids consumed, concatenated in this order


@dataclass(frozen=True)
class DecoderSpec:
    dz: int
    stem: tuple
    out_dim: int
    head: str  # BERNOULLI or GAUSSIAN

    def __post_init__(self):
        if self.head not in (BERNOULLI, GAUSSIAN):
            raise ValueError(f"unknown decoder head {self.head!r}")


@dataclass(frozen=True)
class BundleSpec:
    dz: int
    encoders: dict  # encoder id -> EncoderSpec
    decoders: dict  # observation id -> DecoderSpec


@dataclass
class ModelBundle:
    spec: BundleSpec
    params: dict  # flat name -> Tensor
    dtype: object = np.float64

    @property
    def dz(self) -> int:
        return self.spec.dz

    @property
    def prior(self) -> DiagGaussian:
        return standard_normal(self.spec.dz, dtype=self.dtype)

    def param_items(self):
        return sorted(self.params.items())

    def astype(self, dtype) -> "ModelBundle":
        params = {k: T.parameter(v.data.astype(dtype)) for k, v in self.params.items()}
        return ModelBundle(self.spec, params, dtype=np.dtype(dtype).type)


def _stem_param_names(prefix: str, n_layers: int):
    return [(f"{prefix}/w{i}", f"{prefix}/b{i}") for i in range(n_layers)]


def _init_dense(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return w.astype(dtype), np.zeros(fan_out, dtype=dtype)


def init_params(spec: BundleSpec, seed: int, dtype=np.float64) -> ModelBundle:
    """Glorot-uniform weights, zero biases, zero log-stddevs; bit-identical per seed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params: dict[str, Tensor] = {}

    def dense(name, fan_in, fan_out):
        w, b = _init_dense(rng, fan_in, fan_out, dtype)
        params[f"{name}/w"] = T.parameter(w)
        params[f"{name}/b"] = T.parameter(b)

    for eid in sorted(spec.encoders):
        es = spec.encoders[eid]
        width = es.in_dim
        for i, (out, _act) in enumerate(es.stem):
            dense(f"enc{eid}/l{i}", width, out)
            width = out
        dense(f"enc{eid}/mean", width, es.dz)
        dense(f"enc{eid}/std", width, es.dz)

    for did in sorted(spec.decoders):
        ds = spec.decoders[did]
        width = ds.dz
        for i, (out, _act) in enumerate(ds.stem):
            dense(f"dec{did}/l{i}", width, out)
            width = out
        dense(f"dec{did}/out", width, ds.out_dim)
        if ds.head == GAUSSIAN:
            params[f"dec{did}/log_std"] = T.parameter(np.zeros((), dtype=dtype))

    return ModelBundle(spec, params, dtype=dtype)


def _run_stem(params, prefix, stem, x: Tensor) -> Tensor:
    h = x
    for i, (_width, act) in enumerate(stem):
        h = T.matmul(h, params[f"{prefix}/l{i}/w"]) + params[f"{prefix}/l{i}/b"]
        h = ACTIVATIONS[act](h)
    return h


def encode(bundle: ModelBundle, encoder_id, x) -> DiagGaussian:
    """Belief of one encoder for a batch of inputs.

    x has shape (B, in_dim) or (in_dim,); the belief parameters keep the
    matching leading shape.
    """
    es = bundle.spec.encoders[encoder_id]
    xv = np.asarray(x, dtype=bundle.dtype)
    single = xv.ndim == 1
    if single:
        xv = xv[None, :]
    if xv.shape[1] != es.in_dim:
        raise ShapeError(f"encode: source dim {xv.shape[1]} != {es.in_dim}")
    p = bundle.params
    h = _run_stem(p, f"enc{encoder_id}", es.stem, T.tensor(xv))
    mean = T.matmul(h, p[f"enc{encoder_id}/mean/w"]) + p[f"enc{encoder_id}/mean/b"]
    stddev = T.sigmoid(
        T.matmul(h, p[f"enc{encoder_id}/std/w"]) + p[f"enc{encoder_id}/std/b"]
    )
    if single:
        mean = T.reshape(mean, (es.dz,))
        stddev = T.reshape(stddev, (es.dz,))
    return DiagGaussian(mean, stddev)


def decode_heads(bundle: ModelBundle, obs_id, z):
    """Decoder distribution parameters for latents z of shape (N, dz).

    Returns ("bernoulli", logits) or ("gaussian", mean, stddev).
    """
    ds = bundle.spec.decoders[obs_id]
    zt = z if isinstance(z, Tensor) else T.tensor(np.asarray(z, dtype=bundle.dtype))
    p = bundle.params
    h = _run_stem(p, f"dec{obs_id}", ds.stem, zt)
    out = T.matmul(h, p[f"dec{obs_id}/out/w"]) + p[f"dec{obs_id}/out/b"]
    if ds.head == BERNOULLI:
        return (BERNOULLI, out)
    stddev = T.exp(p[f"dec{obs_id}/log_std"])
    return (GAUSSIAN, out, stddev)


def decode_log_likelihood(bundle: ModelBundle, obs_id, z, x) -> Tensor:
    """log p(x | z) for one observation head; batched over leading rows."""
    zt = z if isinstance(z, Tensor) else T.tensor(np.asarray(z, dtype=bundle.dtype))
    single = zt.data.ndim == 1
    if single:
        zt = T.reshape(zt, (1, -1))
    head = decode_heads(bundle, obs_id, zt)
    xv = np.asarray(x, dtype=bundle.dtype)
    if xv.ndim == 1:
        xv = xv[None, :]
    if head[0] == BERNOULLI:
        ll = bernoulli_log_prob(BernoulliVec(head[1]), xv)
    else:
        ll = gaussian_likelihood_log_prob(head[1], head[2], xv)
    if single:
        ll = T.reshape(ll, ())
    return ll


def param_count(bundle: ModelBundle) -> int:
    return sum(int(np.prod(t.data.shape)) for t in bundle.params.values())
