"""Linear-Gaussian reference model with closed-form marginals.

z ~ N(0, I), x_m = A_m z + b_m + noise_m with isotropic per-source noise.
Everything of interest is Gaussian and exact: the log marginal ln p(x),
the posterior p(z | x_S) for any source subset, and conditional means.
Bound estimators can be validated against these values, and the K=1 gap
of the per-source objective equals the average KL between beliefs and the
exact posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import SourceTuple
from .distributions import DiagGaussian
from .models import BundleSpec, DecoderSpec, EncoderSpec, GAUSSIAN, init_params


@dataclass(frozen=True)
class LinearGaussianModel:
    a: dict  # source id -> (D_m, dz) loading matrix
    b: dict  # source id -> (D_m,) offset
    noise_std: dict  # source id -> float
    dz: int

    @property
    def source_ids(self):
        return sorted(self.a)

    def sample(self, n: int, seed: int):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        z = rng.standard_normal((n, self.dz))
        records = []
        for i in range(n):
            sources = {}
            for m in self.source_ids:
                mean = self.a[m] @ z[i] + self.b[m]
                sources[m] = mean + self.noise_std[m] * rng.standard_normal(
                    mean.shape
                )
            records.append(SourceTuple(i, sources, dict(sources)))
        return records

    def posterior(self, sources: dict):
        """Exact p(z | x_S) for the given subset: (mean, covariance)."""
        lam = np.eye(self.dz)
        eta = np.zeros(self.dz)
        for m, x in sources.items():
            am, s2 = self.a[m], self.noise_std[m] ** 2
            lam = lam + am.T @ am / s2
            eta = eta + am.T @ (np.asarray(x) - self.b[m]) / s2
        cov = np.linalg.inv(lam)
        return cov @ eta, cov

    def posterior_diag(self, sources: dict) -> DiagGaussian:
        """Posterior as a DiagGaussian; valid when loadings are axis-aligned."""
        mean, cov = self.posterior(sources)
        off = cov - np.diag(np.diag(cov))
        if np.max(np.abs(off)) > 1e-12:
            raise ValueError("posterior is not diagonal for this model")
        return DiagGaussian(mean, np.sqrt(np.diag(cov)))

    def log_marginal(self, sources: dict) -> float:
        """ln p(x_S): joint Gaussian with covariance A A^T + noise."""
        ids = sorted(sources)
        a_stack = np.concatenate([self.a[m] for m in ids], axis=0)
        b_stack = np.concatenate([self.b[m] for m in ids])
        x_stack = np.concatenate([np.asarray(sources[m]) for m in ids])
        noise = np.concatenate(
            [np.full(self.a[m].shape[0], self.noise_std[m] ** 2) for m in ids]
        )
        cov = a_stack @ a_stack.T + np.diag(noise)
        delta = x_stack - b_stack
        sign, logdet = np.linalg.slogdet(cov)
        quad = delta @ np.linalg.solve(cov, delta)
        return float(-0.5 * (len(delta) * np.log(2.0 * np.pi) + logdet + quad))

    def conditional_mean(self, sources: dict, target) -> np.ndarray:
        """E[x_target | x_S] = A_t E[z | x_S] + b_t."""
        mean, _ = self.posterior(sources)
        return self.a[target] @ mean + self.b[target]

    def bundle_spec(self, encoder_stem=()) -> BundleSpec:
        encoders = {
            m: EncoderSpec(
                in_dim=self.a[m].shape[0], stem=tuple(encoder_stem), dz=self.dz,
                sources=(m,),
            )
            for m in self.source_ids
        }
        decoders = {
            m: DecoderSpec(dz=self.dz, stem=(), out_dim=self.a[m].shape[0], head=GAUSSIAN)
            for m in self.source_ids
        }
        return BundleSpec(dz=self.dz, encoders=encoders, decoders=decoders)

    def to_bundle(self, seed: int = 0, encoder_stem=((16, "tanh"),)):
        """Bundle whose decoders are the exact generative model.

        Encoders are Glorot-initialized; any belief yields a valid bound.
        """
        bundle = init_params(self.bundle_spec(encoder_stem), seed)
        for m in self.source_ids:
            bundle.params[f"dec{m}/out/w"].data[:] = self.a[m].T
            bundle.params[f"dec{m}/out/b"].data[:] = self.b[m]
            bundle.params[f"dec{m}/log_std"].data[()] = np.log(self.noise_std[m])
        return bundle


def kl_diag_vs_full(q: DiagGaussian, mean: np.ndarray, cov: np.ndarray) -> float:
    """KL(q || N(mean, cov)) for diagonal q against a full-covariance Gaussian."""
    mu_q = q.mean.data
    var_q = q.stddev.data**2
    d = mu_q.shape[-1]
    cov_inv = np.linalg.inv(cov)
    sign, logdet_p = np.linalg.slogdet(cov)
    logdet_q = float(np.sum(np.log(var_q)))
    delta = mu_q - mean
    trace = float(np.trace(cov_inv @ np.diag(var_q)))
    quad = float(delta @ cov_inv @ delta)
    return 0.5 * (logdet_p - logdet_q - d + trace + quad)


def default_oracle() -> LinearGaussianModel:
    """Fixed 2-source, 2-D instance with axis-aligned loadings.

    Diagonal loadings keep the exact posterior diagonal, so it is
    representable by the toolkit's belief family.
    """
    return LinearGaussianModel(
        a={
            0: np.array([[1.0, 0.0], [0.0, 0.6]]),
            1: np.array([[0.7, 0.0], [0.0, 1.2]]),
        },
        b={0: np.array([0.3, -0.2]), 1: np.array([-0.5, 0.1])},
        noise_std={0: 0.8, 1: 0.6},
        dz=2,
    )
