"""Diagonal Gaussians: reparameterized sampling, log-density, closed-form KL."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as nc
from .tensor import ShapeError, Tensor

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class DiagGaussian:
    """N(mu, diag(sigma^2)) parameterized by log standard deviation.

    Using log sigma keeps the scale strictly positive without constraining
    the underlying optimization variable.
    """

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        if not isinstance(self.mu, Tensor):
            self.mu = Tensor(self.mu)
        if not isinstance(self.log_sigma, Tensor):
            self.log_sigma = Tensor(self.log_sigma)
        if self.mu.shape != self.log_sigma.shape:
            raise ShapeError(f"mu shape {self.mu.shape} != log_sigma shape "
                             f"{self.log_sigma.shape}")

    @property
    def dim(self) -> int:
        return self.mu.size

    @staticmethod
    def standard(dim: int) -> "DiagGaussian":
        return DiagGaussian(Tensor(np.zeros(dim)), Tensor(np.zeros(dim)))


def sample_reparam(d: DiagGaussian, eps) -> Tensor:
    """mu + exp(log_sigma) * eps, differentiable w.r.t. the parameters.

    eps is injected by the caller (a standard-normal draw) so that every
    sample is reproducible from an external seed.
    """
    eps = eps if isinstance(eps, Tensor) else Tensor(eps)
    if eps.shape != d.mu.shape:
        raise ShapeError(f"eps shape {eps.shape} != parameter shape {d.mu.shape}")
    return nc.add(d.mu, nc.mul(nc.exp(d.log_sigma), eps))


def log_prob(d: DiagGaussian, z) -> Tensor:
    """Sum of per-coordinate Gaussian log-densities at z (a scalar)."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.shape != d.mu.shape:
        raise ShapeError(f"z shape {z.shape} != parameter shape {d.mu.shape}")
    u = nc.mul(nc.sub(z, d.mu), nc.exp(nc.neg(d.log_sigma)))
    quad = nc.mul(0.5, nc.reduce_sum(nc.mul(u, u)))
    return nc.sub(nc.sub(Tensor(-_HALF_LOG_2PI * d.dim), nc.reduce_sum(d.log_sigma)), quad)


def kl_diag(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """Closed-form KL(q || p) between diagonal Gaussians; non-negative."""
    if q.mu.shape != p.mu.shape:
        raise ShapeError(f"dimension mismatch: {q.mu.shape} vs {p.mu.shape}")
    dls = nc.sub(p.log_sigma, q.log_sigma)
    var_ratio = nc.exp(nc.mul(-2.0, dls))
    dmu = nc.sub(q.mu, p.mu)
    mah = nc.mul(nc.mul(dmu, dmu), nc.exp(nc.mul(-2.0, p.log_sigma)))
    per_coord = nc.add(dls, nc.mul(0.5, nc.sub(nc.add(var_ratio, mah), 1.0)))
    return nc.reduce_sum(per_coord)
