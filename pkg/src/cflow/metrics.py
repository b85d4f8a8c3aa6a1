"""Evaluation metrics: 1-IoU ground distance, Dice, generalized energy
distance between mask sets, and the Monte Carlo conditional log-likelihood.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .nets import ModelBundle, decode, prior
from .objective import recon_loglik
from .tensor import ShapeError, Tensor


def _as_mask(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    vals = a.astype(np.float64)
    if not np.isin(vals, (0.0, 1.0)).all():
        raise ValueError(f"{name} must be binary")
    return a.astype(bool)


def _mask_pair(a, b):
    a = _as_mask(a, "a")
    b = _as_mask(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def iou_distance(a, b) -> float:
    """1 - IoU; two empty masks count as identical (distance 0)."""
    a, b = _mask_pair(a, b)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(a, b).sum())
    return 1.0 - inter / union


def dice(a, b) -> float:
    """2|a&b| / (|a|+|b|); two empty masks score 1."""
    a, b = _mask_pair(a, b)
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / denom


def _check_set(masks, name: str):
    if len(masks) == 0:
        raise ValueError(f"{name} must be non-empty")
    shape = np.asarray(masks[0]).shape
    for m in masks:
        if np.asarray(m).shape != shape:
            raise ShapeError(f"{name} masks must share a shape")


def _mean_cross(aa, bb) -> float:
    total = 0.0
    for a in aa:
        for b in bb:
            total += iou_distance(a, b)
    return total / (len(aa) * len(bb))


def _mean_within(aa) -> float:
    # V-statistic over ordered pairs, accumulated in the same traversal
    # order as _mean_cross so ged_squared(R, R) cancels to exactly 0.0
    # (doubling the i<j triangle instead changes the rounding).
    return _mean_cross(aa, aa)


def ged_squared(raters, samples) -> float:
    """Squared generalized energy distance between two empirical mask
    distributions under the 1-IoU ground distance.

    Expectations run over all ordered pairs including self-pairs, so a set
    compared with itself scores exactly 0.
    """
    _check_set(raters, "raters")
    _check_set(samples, "samples")
    return (2.0 * _mean_cross(raters, samples)
            - _mean_within(raters) - _mean_within(samples))


def estimate_cll(b: ModelBundle, x, s, n_samples: int = 128, rng_seed=0) -> float:
    """log p(s|x) estimated by averaging the decoder likelihood over draws
    from the conditional prior, in log space.

    rng_seed may be an integer seed or a Generator.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(rng_seed)
    p = prior(b, x)
    mu = p.mu.data
    sigma = np.exp(p.log_sigma.data)
    lls = np.empty(n_samples)
    for i in range(n_samples):
        z = mu + sigma * rng.standard_normal(mu.size)
        lls[i] = recon_loglik(decode(b, Tensor(z), x), s).item()
    top = lls.max()
    return float(top + math.log(np.exp(lls - top).sum()) - math.log(n_samples))


@dataclass
class MetricsReport:
    """Aggregates plus per-image records; sample_count is the number of
    evaluated images."""

    model_id: str
    mode: str
    ged: float
    neg_cll: float
    dice: float
    n_samples: int
    seed: int
    sample_count: int
    per_image: list = field(default_factory=list)

    def __post_init__(self):
        if not (-1e-9 <= self.ged <= 2.0 + 1e-9):
            raise ValueError(f"ged out of range: {self.ged}")
        if not (-1e-9 <= self.dice <= 1.0 + 1e-9):
            raise ValueError(f"dice out of range: {self.dice}")
        if self.mode not in ("all_raters", "single_rater"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def to_json(self) -> str:
        return json.dumps({"model_id": self.model_id, "mode": self.mode,
                           "ged": self.ged, "neg_cll": self.neg_cll,
                           "dice": self.dice, "n_samples": self.n_samples,
                           "seed": self.seed, "sample_count": self.sample_count,
                           "per_image": self.per_image}, indent=2)

    def to_table(self) -> str:
        lines = ["image\tged\tneg_cll\tdice"]
        for rec in self.per_image:
            lines.append(f"{rec['image']}\t{rec['ged']:.6f}"
                         f"\t{rec['neg_cll']:.4f}\t{rec['dice']:.6f}")
        lines.append(f"mean\t{self.ged:.6f}\t{self.neg_cll:.4f}\t{self.dice:.6f}")
        return "\n".join(lines)
