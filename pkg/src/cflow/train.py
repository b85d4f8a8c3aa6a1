"""Seeded training loop: Adam, per-epoch validation, early stopping on
patience, best-validation checkpointing, CSV epoch log.

Determinism contract: everything stochastic (init, shuffling, rater picks,
noise draws) comes from one Generator seeded by TrainConfig.seed and
consumed in a fixed order, so identical (config, dataset) runs produce
byte-identical checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as nc
from .checkpoint import save_checkpoint
from .data import DatasetSplit, load
from .nets import ModelBundle, ModelConfig, build_model
from .objective import cflow_loss
from .optim import AdamState, adam_step
from .tensor import Tape

RATER_MODES = ("all", "single")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    flow_kind: str = "planar"
    flow_steps: int = 4
    latent_dim: int = 6
    context_dim: int = 128
    hidden: tuple = (64, 64)
    rater_mode: str = "all"
    n_mc: int = 1

    def __post_init__(self):
        self.hidden = tuple(int(v) for v in self.hidden)
        for name in ("lr", "batch_size", "max_epochs", "patience", "n_mc"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs "
                             f"{self.max_epochs}")
        if self.rater_mode not in RATER_MODES:
            raise ValueError(f"rater_mode must be one of {RATER_MODES}")

    def model_config(self, image_dims) -> ModelConfig:
        return ModelConfig(latent_dim=self.latent_dim,
                           context_dim=self.context_dim,
                           flow_steps=self.flow_steps,
                           flow_kind=self.flow_kind,
                           image_dims=tuple(image_dims),
                           hidden=self.hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _pick_rater(cfg: TrainConfig, rng: np.random.Generator, n_raters: int) -> int:
    if cfg.rater_mode == "single":
        return 0
    return int(rng.integers(n_raters))


def _sample_loss(bundle: ModelBundle, x, s, rng, n_mc: int):
    """Average of n_mc single-draw losses; returns (total Tensor, floats)."""
    L = bundle.config.latent_dim
    total = None
    stats = {"total": 0.0, "recon": 0.0, "kl_mc": 0.0}
    for _ in range(n_mc):
        lb = cflow_loss(bundle, x, s, rng.standard_normal(L))
        total = lb.total if total is None else nc.add(total, lb.total)
        stats["total"] += lb.total.item()
        stats["recon"] += lb.recon.item()
        stats["kl_mc"] += lb.kl_mc.item()
    if n_mc > 1:
        total = nc.div(total, float(n_mc))
        for k in stats:
            stats[k] /= n_mc
    return total, stats


def train(config: TrainConfig, dataset, out_checkpoint=None, log_path=None):
    """Returns (bundle, history). bundle holds the best-validation
    parameters; history is one dict per epoch."""
    if not isinstance(dataset, DatasetSplit):
        dataset = load(dataset)
    if not dataset.train or not dataset.val:
        raise ValueError("dataset needs non-empty train and val splits")
    image_dims = dataset.train[0].image.shape
    n_raters = dataset.train[0].rater_masks.shape[0]

    # Separate init and loop streams: models with different flow stacks
    # consume different draw counts at build time, and keeping the loop
    # stream independent means two configs sharing a seed also share the
    # same shuffle, rater, and noise sequence during training.
    seq_init, seq_loop = np.random.SeedSequence(config.seed).spawn(2)
    bundle = build_model(config.model_config(image_dims),
                         np.random.default_rng(seq_init))
    rng = np.random.default_rng(seq_loop)
    params = bundle.parameters()
    state = AdamState.zeros_like([p.data for p in params])

    best_val = np.inf
    best_snapshot = [p.data.copy() for p in params]
    best_epoch = 0
    since_best = 0
    t_step = 0
    history = []

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(dataset.train))
        ep_stats = {"total": 0.0, "recon": 0.0, "kl_mc": 0.0}

        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            tape = Tape()
            for p in params:
                tape.watch(p)
            acc = None
            for i in batch:
                sample = dataset.train[int(i)]
                r = _pick_rater(config, rng, n_raters)
                total, stats = _sample_loss(bundle, sample.image,
                                            sample.rater_masks[r], rng,
                                            config.n_mc)
                acc = total if acc is None else nc.add(acc, total)
                for k in ep_stats:
                    ep_stats[k] += stats[k]
            tape.backward(nc.div(acc, float(len(batch))))
            grads = [p.grad for p in params]
            t_step += 1
            new_vals, state = adam_step([p.data for p in params], grads, state,
                                        config.lr, t=t_step)
            for p, v in zip(params, new_vals):
                p.data = v
                p.grad = None
                p.tape = None

        val_total = 0.0
        for sample in dataset.val:
            r = _pick_rater(config, rng, n_raters)
            total, _ = _sample_loss(bundle, sample.image, sample.rater_masks[r],
                                    rng, config.n_mc)
            val_total += total.item()
        val_total /= len(dataset.val)

        n_train = len(dataset.train)
        history.append({"epoch": epoch,
                        "train_total": ep_stats["total"] / n_train,
                        "train_recon": ep_stats["recon"] / n_train,
                        "train_kl": ep_stats["kl_mc"] / n_train,
                        "val_total": val_total})

        if val_total < best_val:
            best_val = val_total
            best_snapshot = [p.data.copy() for p in params]
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    for p, v in zip(params, best_snapshot):
        p.data = v

    if out_checkpoint is not None:
        save_checkpoint(out_checkpoint, bundle, config.to_dict(),
                        float(best_val), best_epoch, rng.bit_generator.state)
    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["epoch", "train_total",
                                                   "train_recon", "train_kl",
                                                   "val_total"])
            writer.writeheader()
            writer.writerows(history)
    return bundle, history
