"""Synthetic multi-rater segmentation data and its on-disk container.

Each sample is a soft elliptical blob; raters threshold the clean soft
truth at per-sample levels, so their masks are nested contours of one
shape. The 'bimodal' profile splits raters into systematic tight/loose
camps, giving a two-mode ground-truth distribution per image.

Container layout (all integers little-endian u32):
  "CFDS" | version | n_samples | H | W | R
  then per sample: H*W image bytes (value*255), R * H*W mask bytes {0,1}
  then a JSON manifest: {"config": ..., "splits": {train/val/test indices}}
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

MAGIC = b"CFDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

PROFILES = ("unimodal", "bimodal")


class FormatError(Exception):
    """Malformed container; the message names the failing byte offset."""


@dataclass
class GenConfig:
    n_samples: int = 500
    img_size: int = 16
    n_raters: int = 4
    ambiguity: float = 0.5
    p_empty_rater: float = 0.0
    seed: int = 0
    rater_profile: str = "unimodal"

    def __post_init__(self):
        if self.n_samples < 10:
            raise ValueError(f"n_samples must be >= 10, got {self.n_samples}")
        if self.img_size < 4:
            raise ValueError(f"img_size must be >= 4, got {self.img_size}")
        if self.n_raters < 2:
            raise ValueError(f"n_raters must be >= 2, got {self.n_raters}")
        if not 0.0 <= self.ambiguity <= 1.0:
            raise ValueError(f"ambiguity must be in [0,1], got {self.ambiguity}")
        if not 0.0 <= self.p_empty_rater <= 1.0:
            raise ValueError(f"p_empty_rater must be in [0,1], got {self.p_empty_rater}")
        if self.rater_profile not in PROFILES:
            raise ValueError(f"rater_profile must be one of {PROFILES}")


def bimodal_preset(n_samples: int = 500, seed: int = 0) -> GenConfig:
    """Raters split into tight/loose camps around one blob: the
    ground-truth mask distribution is two-moded per image."""
    return GenConfig(n_samples=n_samples, img_size=16, n_raters=4,
                     ambiguity=0.25, p_empty_rater=0.0, seed=seed,
                     rater_profile="bimodal")


@dataclass
class MultiRaterSample:
    image: np.ndarray        # (H, W) float64 in [0,1], quantized to 1/255
    rater_masks: np.ndarray  # (R, H, W) uint8 in {0,1}


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    config: GenConfig = field(default_factory=GenConfig)

    def all_samples(self):
        return self.train + self.val + self.test


def _soft_blob(rng: np.random.Generator, size: int) -> np.ndarray:
    """Soft indicator of a random ellipse, 0.5 exactly on its boundary."""
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cx, cy = rng.uniform(0.38, 0.62, size=2)
    rx, ry = rng.uniform(0.16, 0.30, size=2)
    theta = rng.uniform(0.0, np.pi)
    dx, dy = xx - cx, yy - cy
    ca, sa = np.cos(theta), np.sin(theta)
    e = ((dx * ca + dy * sa) / rx) ** 2 + ((-dx * sa + dy * ca) / ry) ** 2
    return 1.0 / (1.0 + np.exp((e - 1.0) / 0.35))


def _rater_thresholds(rng: np.random.Generator, cfg: GenConfig) -> np.ndarray:
    R = cfg.n_raters
    if cfg.rater_profile == "unimodal":
        return 0.5 + 0.35 * cfg.ambiguity * rng.uniform(-1.0, 1.0, size=R)
    # bimodal: first half tight (high threshold -> small mask), rest loose
    base = np.where(np.arange(R) < R // 2, 0.80, 0.20)
    jitter = 0.08 * cfg.ambiguity * rng.uniform(-1.0, 1.0, size=R)
    return base + jitter


def generate(cfg: GenConfig) -> DatasetSplit:
    """Deterministic in cfg.seed: one RNG stream, fixed draw order."""
    rng = np.random.default_rng(cfg.seed)
    size = cfg.img_size
    samples = []
    for _ in range(cfg.n_samples):
        soft = _soft_blob(rng, size)
        noise = rng.standard_normal((size, size))
        img = np.clip(0.2 + 0.6 * soft + 0.08 * noise, 0.0, 1.0)
        img = np.round(img * 255.0) / 255.0

        thresholds = _rater_thresholds(rng, cfg)
        empty = rng.random(cfg.n_raters) < cfg.p_empty_rater
        masks = np.empty((cfg.n_raters, size, size), dtype=np.uint8)
        for k in range(cfg.n_raters):
            if empty[k]:
                masks[k] = 0
            else:
                masks[k] = (soft > thresholds[k]).astype(np.uint8)
        samples.append(MultiRaterSample(img, masks))

    n = cfg.n_samples
    n_train = round(0.6 * n)
    n_val = round(0.2 * n)
    return DatasetSplit(train=samples[:n_train],
                        val=samples[n_train:n_train + n_val],
                        test=samples[n_train + n_val:],
                        config=cfg)


def save(split: DatasetSplit, path) -> None:
    samples = split.all_samples()
    n = len(samples)
    size = split.config.img_size
    R = split.config.n_raters
    n_train, n_val = len(split.train), len(split.val)
    manifest = {
        "config": asdict(split.config),
        "splits": {"train": list(range(n_train)),
                   "val": list(range(n_train, n_train + n_val)),
                   "test": list(range(n_train + n_val, n))},
    }
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n, size, size, R))
        for s in samples:
            f.write(np.round(s.image * 255.0).astype(np.uint8).tobytes())
            f.write(s.rater_masks.astype(np.uint8).tobytes())
        f.write(json.dumps(manifest).encode("utf-8"))


def load(path) -> DatasetSplit:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"file ends at byte {len(blob)}, header needs "
                          f"{_HEADER.size}")
    magic, version, n, h, w, r = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte 4")

    per_sample = h * w * (1 + r)
    payload_end = _HEADER.size + n * per_sample
    if len(blob) < payload_end:
        raise FormatError(f"payload truncated: file ends at byte {len(blob)}, "
                          f"expected {payload_end}")

    samples = []
    off = _HEADER.size
    for _ in range(n):
        img = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=off)
        masks = np.frombuffer(blob, dtype=np.uint8, count=r * h * w,
                              offset=off + h * w)
        if not np.isin(masks, (0, 1)).all():
            raise FormatError(f"non-binary mask byte in sample block at "
                              f"byte {off + h * w}")
        samples.append(MultiRaterSample(
            img.reshape(h, w).astype(np.float64) / 255.0,
            masks.reshape(r, h, w).copy()))
        off += per_sample

    try:
        manifest = json.loads(blob[payload_end:].decode("utf-8"))
        cfg = GenConfig(**manifest["config"])
        splits = manifest["splits"]
        idx = sorted(splits["train"] + splits["val"] + splits["test"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad manifest at byte {payload_end}: {exc}") from exc
    if idx != list(range(n)):
        raise FormatError(f"manifest at byte {payload_end} does not "
                          f"partition {n} samples")
    return DatasetSplit(train=[samples[i] for i in splits["train"]],
                        val=[samples[i] for i in splits["val"]],
                        test=[samples[i] for i in splits["test"]],
                        config=cfg)
