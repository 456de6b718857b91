"""Diagonal Gaussians and categoricals: the probabilistic primitives.

Conventions: a DiagGaussian over a batch stores mean/log_var of shape
(B, d); single distributions use (1, d) or a bare (d,).  Reductions run
over the last axis, so per-row quantities come back with the leading
axes intact: scalars for (d,) inputs, length-B tensors for (B, d).

KL divergences between Gaussians are closed-form; expectations over z
are single-sample via the reparameterization trick with caller-supplied
noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sdgmlab import tensor as T
from sdgmlab.tensor import Tensor

LN_2PI = math.log(2.0 * math.pi)


@dataclass
class DiagGaussian:
    """Gaussian with diagonal covariance, parameterized by mean and log-variance."""

    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise T.ShapeError(
                f"DiagGaussian: mean shape {self.mean.shape} != log_var shape {self.log_var.shape}"
            )
        with np.errstate(over="ignore"):
            var = np.exp(self.log_var.data)
        if not np.all(np.isfinite(var)) or np.any(var <= 0):
            raise T.DomainError("DiagGaussian: exp(log_var) must be finite and strictly positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mean.shape

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @staticmethod
    def standard(shape) -> "DiagGaussian":
        return DiagGaussian(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


@dataclass
class LatentSample:
    """A reparameterized draw together with the noise that produced it."""

    value: Tensor
    noise: np.ndarray


@dataclass
class Categorical:
    """Distribution over K classes, stored as logits for stability."""

    logits: Tensor

    def __post_init__(self):
        if self.logits.shape[-1] < 2:
            raise T.ContractError(f"Categorical needs K >= 2 classes, got {self.logits.shape[-1]}")

    @property
    def k(self) -> int:
        return self.logits.shape[-1]

    def probs(self) -> Tensor:
        return T.softmax(self.logits, axis=-1)

    def log_probs(self) -> Tensor:
        return T.log_softmax(self.logits, axis=-1)

    def probs_array(self) -> np.ndarray:
        return self.probs().data

    @staticmethod
    def uniform(k: int, lead_shape: tuple[int, ...] = ()) -> "Categorical":
        return Categorical(Tensor(np.zeros(lead_shape + (k,))))

    @staticmethod
    def from_probs(probs) -> "Categorical":
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
            raise T.DomainError("probs must be non-negative and sum to 1")
        # floor keeps the logit transform finite; 0 * ln 0 handling happens in entropy
        return Categorical(Tensor(np.log(np.maximum(p, 1e-300))))


def reparameterize(q: DiagGaussian, noise) -> LatentSample:
    """z = mean + exp(0.5 log_var) * eps; gradient reaches mean and log_var only."""
    eps = noise.data if isinstance(noise, Tensor) else np.asarray(noise, dtype=np.float64)
    if eps.shape != q.mean.shape:
        raise T.ShapeError(f"reparameterize: noise shape {eps.shape} != mean shape {q.mean.shape}")
    std = T.exp(T.scale(q.log_var, 0.5))
    value = T.add(q.mean, T.mul(std, Tensor(eps)))
    return LatentSample(value=value, noise=eps)


def gaussian_log_prob(q: DiagGaussian, x) -> Tensor:
    """Sum over the last axis of the per-dimension log-density."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    if xt.shape != q.mean.shape:
        raise T.ShapeError(f"gaussian_log_prob: x shape {xt.shape} != mean shape {q.mean.shape}")
    diff = T.sub(xt, q.mean)
    inv_var = T.exp(T.neg(q.log_var))
    quad = T.mul(T.mul(diff, diff), inv_var)
    per_dim = T.scale(T.add(T.shift(q.log_var, LN_2PI), quad), -0.5)
    axis = len(q.shape) - 1
    return T.reduce_sum(per_dim, axis=axis) if len(q.shape) > 1 else T.reduce_sum(per_dim)


def kl_gaussian_gaussian(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) in closed form, reduced over the last axis."""
    if q.shape != p.shape:
        raise T.ShapeError(f"kl_gaussian_gaussian: shapes {q.shape} vs {p.shape}")
    # 0.5 sum[ log_var_p - log_var_q + (var_q + (mu_q - mu_p)^2) / var_p - 1 ]
    diff = T.sub(q.mean, p.mean)
    num = T.add(T.exp(q.log_var), T.mul(diff, diff))
    ratio = T.mul(num, T.exp(T.neg(p.log_var)))
    inner = T.shift(T.add(T.sub(p.log_var, q.log_var), ratio), -1.0)
    summed = T.reduce_sum(inner, axis=len(q.shape) - 1) if len(q.shape) > 1 else T.reduce_sum(inner)
    return T.scale(summed, 0.5)


def kl_to_standard_normal(q: DiagGaussian) -> Tensor:
    return kl_gaussian_gaussian(q, DiagGaussian.standard(q.shape))


def categorical_entropy(q: Categorical) -> Tensor:
    """-sum p ln p with the 0 * ln 0 := 0 convention (exact for underflowed probs)."""
    probs = q.probs()
    logp = q.log_probs()
    # where p underflows to exactly 0, p * log p is 0 * (-inf); mask it to 0
    mask = (probs.data > 0).astype(np.float64)
    safe_logp = T.mul(logp, Tensor(mask))
    prod = T.mul(probs, safe_logp)
    axis = len(q.logits.shape) - 1
    summed = T.reduce_sum(prod, axis=axis) if len(q.logits.shape) > 1 else T.reduce_sum(prod)
    return T.neg(summed)


def entropy_of_probs(p: np.ndarray) -> np.ndarray:
    """Plain-array entropy with 0 ln 0 := 0, for oracles and constants."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.maximum(p, 1e-300)), 0.0)
    return -terms.sum(axis=-1)


def kl_categorical_uniform(q: Categorical) -> Tensor:
    """KL(q || uniform over K) = ln K - H(q); non-negative."""
    lead = q.logits.shape[:-1]
    return T.sub(Tensor(np.full(lead, math.log(q.k))), categorical_entropy(q))
