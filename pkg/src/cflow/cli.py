"""Command line surface: gen-data, train, sample, eval, selfcheck.

Options can come from a plain key=value config file (--config); explicit
flags override file entries, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .data import FormatError, GenConfig, bimodal_preset, generate, load, save
from .inference import distinct_mask_count, evaluate, sample
from .selfcheck import run_selfcheck
from .train import TrainConfig, train


def _read_kv(path) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def _resolve(args, spec: dict) -> dict:
    """Merge flag > config-file > default, applying the type converters in
    spec: {dest: (converter, default)}."""
    file_cfg = _read_kv(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_cfg) - set(spec)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    merged = {}
    for dest, (conv, default) in spec.items():
        flag_val = getattr(args, dest, None)
        if flag_val is not None:
            merged[dest] = flag_val
        elif dest in file_cfg:
            merged[dest] = conv(file_cfg[dest])
        else:
            merged[dest] = default
    return merged


def _hidden(text) -> tuple:
    if isinstance(text, tuple):
        return text
    return tuple(int(v) for v in str(text).split(",") if v)


# ----------------------------------------------------------- subcommands

_GEN_SPEC = {
    "n_samples": (int, 500), "img_size": (int, 16), "n_raters": (int, 4),
    "ambiguity": (float, 0.5), "p_empty_rater": (float, 0.0),
    "seed": (int, 0), "profile": (str, "unimodal"),
}


def _cmd_gen_data(args) -> int:
    vals = _resolve(args, _GEN_SPEC)
    if args.preset == "bimodal":
        cfg = bimodal_preset(n_samples=vals["n_samples"], seed=vals["seed"])
        # explicit flags still win over the preset
        overrides = {k: getattr(args, k) for k in
                     ("img_size", "n_raters", "ambiguity", "p_empty_rater")
                     if getattr(args, k) is not None}
        cfg = GenConfig(n_samples=cfg.n_samples, seed=cfg.seed,
                        rater_profile=cfg.rater_profile,
                        img_size=overrides.get("img_size", cfg.img_size),
                        n_raters=overrides.get("n_raters", cfg.n_raters),
                        ambiguity=overrides.get("ambiguity", cfg.ambiguity),
                        p_empty_rater=overrides.get("p_empty_rater",
                                                    cfg.p_empty_rater))
    else:
        cfg = GenConfig(n_samples=vals["n_samples"], img_size=vals["img_size"],
                        n_raters=vals["n_raters"], ambiguity=vals["ambiguity"],
                        p_empty_rater=vals["p_empty_rater"], seed=vals["seed"],
                        rater_profile=vals["profile"])
    split = generate(cfg)
    save(split, args.out)
    print(f"wrote {args.out}: {cfg.n_samples} samples "
          f"({len(split.train)}/{len(split.val)}/{len(split.test)} split), "
          f"{cfg.img_size}x{cfg.img_size}, {cfg.n_raters} raters, "
          f"profile={cfg.rater_profile}")
    return 0


_TRAIN_SPEC = {
    "lr": (float, 1e-4), "batch_size": (int, 32), "max_epochs": (int, 300),
    "patience": (int, 20), "seed": (int, 0), "flow_kind": (str, "planar"),
    "flow_steps": (int, 4), "latent_dim": (int, 6), "context_dim": (int, 128),
    "hidden": (_hidden, (64, 64)), "rater_mode": (str, "all"), "n_mc": (int, 1),
}


def _cmd_train(args) -> int:
    vals = _resolve(args, _TRAIN_SPEC)
    cfg = TrainConfig(**vals)
    _, history = train(cfg, args.data, out_checkpoint=args.out,
                       log_path=args.log)
    last = history[-1]
    best = min(h["val_total"] for h in history)
    print(f"trained {len(history)} epochs; best val {best:.4f}; "
          f"final val {last['val_total']:.4f}; checkpoint {args.out}")
    return 0


def _cmd_sample(args) -> int:
    bundle, _ = load_checkpoint(args.checkpoint)
    split = load(args.data)
    pool = split.test
    if not 0 <= args.index < len(pool):
        raise IndexError(f"index {args.index} out of range for test split "
                         f"of {len(pool)}")
    x = pool[args.index].image
    masks, mean_map = sample(bundle, x, args.n, seed=args.seed)
    if args.out:
        np.savez(args.out, masks=masks, mean_map=mean_map)
    print(f"image {args.index}: {args.n} draws, "
          f"{distinct_mask_count(masks)} distinct masks, "
          f"mean-map range [{mean_map.min():.3f}, {mean_map.max():.3f}]"
          + (f", saved to {args.out}" if args.out else ""))
    return 0


def _cmd_eval(args) -> int:
    bundle, meta = load_checkpoint(args.checkpoint)
    split = load(args.data)
    report = evaluate(bundle, split, n_samples=args.n_samples,
                      n_cll=args.n_cll, seed=args.seed, mode=args.mode,
                      model_id=Path(args.checkpoint).stem)
    if args.json:
        Path(args.json).write_text(report.to_json())
    print(report.to_table())
    return 0


def _cmd_selfcheck(args) -> int:
    ok, results = run_selfcheck()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return 0 if ok else 1


# ----------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cflow",
        description="Conditional segmentation sampling with flow-transformed "
                    "latent posteriors")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="key=value option file")
    g.add_argument("--preset", choices=["bimodal"],
                   help="start from a named preset")
    g.add_argument("--n-samples", dest="n_samples", type=int)
    g.add_argument("--img-size", dest="img_size", type=int)
    g.add_argument("--n-raters", dest="n_raters", type=int)
    g.add_argument("--ambiguity", type=float)
    g.add_argument("--p-empty-rater", dest="p_empty_rater", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--profile", choices=["unimodal", "bimodal"])
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a CFDS dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="per-epoch CSV log path")
    t.add_argument("--config", help="key=value option file")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--flow-kind", dest="flow_kind",
                   choices=["planar", "glow", "none"])
    t.add_argument("--flow-steps", dest="flow_steps", type=int)
    t.add_argument("--latent-dim", dest="latent_dim", type=int)
    t.add_argument("--context-dim", dest="context_dim", type=int)
    t.add_argument("--hidden", type=_hidden, help="comma list, e.g. 64,64")
    t.add_argument("--rater-mode", dest="rater_mode",
                   choices=["all", "single"])
    t.add_argument("--n-mc", dest="n_mc", type=int)
    t.set_defaults(func=_cmd_train)

    s = sub.add_parser("sample", help="draw segmentation samples")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--index", type=int, default=0, help="test-split index")
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write masks + mean map as .npz")
    s.set_defaults(func=_cmd_sample)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--n-samples", dest="n_samples", type=int, default=16)
    e.add_argument("--n-cll", dest="n_cll", type=int, default=128)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--mode", choices=["all_raters", "single_rater"],
                   default="all_raters")
    e.add_argument("--json", help="also write the report as JSON")
    e.set_defaults(func=_cmd_eval)

    c = sub.add_parser("selfcheck", help="run built-in verification suites")
    c.set_defaults(func=_cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, ValueError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
