"""Sampling-path inference: draw latents from the conditional prior,
decode, threshold; plus test-set evaluation into a MetricsReport.
"""

from __future__ import annotations

import numpy as np

from .data import DatasetSplit
from .metrics import MetricsReport, dice, estimate_cll, ged_squared
from .nets import ModelBundle, decode, prior
from .tensor import Tensor


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def draw_probs(bundle: ModelBundle, x, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, n_pixels) decoder probabilities for n prior draws."""
    p = prior(bundle, x)
    mu = p.mu.data
    sigma = np.exp(p.log_sigma.data)
    probs = np.empty((n, bundle.config.n_pixels))
    for i in range(n):
        z = mu + sigma * rng.standard_normal(mu.size)
        probs[i] = _sigmoid(decode(bundle, Tensor(z), x).data)
    return probs


def sample(bundle: ModelBundle, x, n: int, seed=0):
    """Returns (masks, mean_map): n thresholded draws plus the average of
    the pre-threshold probabilities."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    dims = bundle.config.image_dims
    probs = draw_probs(bundle, x, n, np.random.default_rng(seed))
    masks = (probs > 0.5).astype(np.uint8).reshape(n, *dims)
    return masks, probs.mean(axis=0).reshape(dims)


def distinct_mask_count(masks) -> int:
    return len({np.asarray(m, dtype=np.uint8).tobytes() for m in masks})


def evaluate(bundle: ModelBundle, dataset: DatasetSplit, n_samples: int = 16,
             n_cll: int = 128, seed: int = 0, mode: str = "all_raters",
             model_id: str = "model") -> MetricsReport:
    """Per-test-image GED, -CLL and Dice, plus their means.

    GED compares n_samples thresholded draws with all rater masks. -CLL is
    averaged over raters in all_raters mode and uses rater 0 in
    single_rater mode. Dice compares the thresholded mean map with rater 0.
    """
    if not dataset.test:
        raise ValueError("test split is empty")
    rng = np.random.default_rng(seed)
    dims = bundle.config.image_dims
    per_image = []
    for idx, s in enumerate(dataset.test):
        probs = draw_probs(bundle, s.image, n_samples, rng)
        drawn = [(probs[i] > 0.5).astype(np.uint8).reshape(dims)
                 for i in range(n_samples)]
        raters = list(s.rater_masks)

        ged_i = ged_squared(raters, drawn)
        if mode == "all_raters":
            cll_i = float(np.mean([estimate_cll(bundle, s.image, r, n_cll, rng)
                                   for r in raters]))
        else:
            cll_i = estimate_cll(bundle, s.image, raters[0], n_cll, rng)
        mean_mask = (probs.mean(axis=0) > 0.5).astype(np.uint8).reshape(dims)
        per_image.append({"image": idx, "ged": ged_i, "neg_cll": -cll_i,
                          "dice": dice(mean_mask, raters[0])})

    return MetricsReport(
        model_id=model_id, mode=mode,
        ged=float(np.mean([r["ged"] for r in per_image])),
        neg_cll=float(np.mean([r["neg_cll"] for r in per_image])),
        dice=float(np.mean([r["dice"] for r in per_image])),
        n_samples=n_samples, seed=seed, sample_count=len(per_image),
        per_image=per_image)
