"""Training objectives: the ELBO and its flow-transformed refinement.

Both losses share one code path; the baseline is literally the flow loss
with an empty chain, which makes their equality at K=0 exact rather than
approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as nc
from .flows import FlowChain, chain_forward
from .gaussian import DiagGaussian, log_prob, sample_reparam
from .nets import ModelBundle, decode, encode, prior
from .tensor import ShapeError, Tensor


@dataclass
class LossBreakdown:
    """total = recon + kl_mc; logdet_sum is already inside kl_mc and is
    reported only for diagnostics."""

    total: Tensor
    recon: Tensor
    kl_mc: Tensor
    logdet_sum: Tensor

    def floats(self) -> dict:
        return {"total": self.total.item(), "recon": self.recon.item(),
                "kl_mc": self.kl_mc.item(), "logdet_sum": self.logdet_sum.item()}


def recon_loglik(logits: Tensor, s) -> Tensor:
    """Bernoulli log-likelihood of mask s under per-pixel logits.

    Computed as sum(s * logit - softplus(logit)), which equals
    sum(s log p + (1-s) log(1-p)) without evaluating either probability,
    so saturated logits stay finite.
    """
    s = np.asarray(s)
    flat = s.ravel().astype(np.float64)
    if not np.isin(flat, (0.0, 1.0)).all():
        raise ValueError("mask must be binary")
    if logits.shape != flat.shape:
        raise ShapeError(f"logits shape {logits.shape}, mask has {flat.size} pixels")
    return nc.sub(nc.dot(Tensor(flat), logits), nc.reduce_sum(nc.softplus(logits)))


def _loss(b: ModelBundle, x, s, eps, chain: FlowChain) -> LossBreakdown:
    enc = encode(b, x, s)
    q0 = DiagGaussian(enc.mu, enc.log_sigma)
    z0 = sample_reparam(q0, eps)
    z_k, logdet = chain_forward(chain, z0, enc.context)
    logits = decode(b, z_k, x)
    recon = nc.neg(recon_loglik(logits, s))
    p = prior(b, x)
    kl_mc = nc.sub(nc.sub(log_prob(q0, z0), logdet), log_prob(p, z_k))
    return LossBreakdown(nc.add(recon, kl_mc), recon, kl_mc, logdet)


def cflow_loss(b: ModelBundle, x, s, eps) -> LossBreakdown:
    """Single-sample estimator of the flow objective.

    z0 is a reparameterized posterior draw, pushed through the chain;
    the divergence term is log q0(z0) - sum log|J| - log p_prior(z_K).
    """
    return _loss(b, x, s, eps, b.chain())


def cvae_loss(b: ModelBundle, x, s, eps) -> LossBreakdown:
    """The no-flow baseline: same estimator with an empty chain. The KL is
    kept in Monte Carlo form (not closed form) so that a flow model with
    K=0 reproduces this loss bit for bit."""
    return _loss(b, x, s, eps, FlowChain([], "none"))
