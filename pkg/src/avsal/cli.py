"""Command-line entry point.

Subcommands: train, predict, eval, gradcheck, ablate-fusion, ablate-pairs,
gen-data, export-retention.  ``--config`` points at a key = value file;
individual flags override it; ``--seed`` drives all randomness.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, load_config


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--window", type=int, help="sliding window size")
    p.add_argument("--fusion", choices=RunConfig.FUSION_METHODS)
    p.add_argument("--pairs", type=int, choices=range(5))


def _build_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for key in ("seed", "window", "fusion", "pairs"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return cfg.override(**overrides) if overrides else cfg


def _scene_config(cfg: RunConfig, mode: str, seed: int):
    from .dataio import SceneConfig

    return SceneConfig(height=cfg.height, width=cfg.width,
                       frames=cfg.frames_per_video, fps=cfg.fps,
                       sample_rate=cfg.sample_rate, blobs=cfg.blobs,
                       mode=mode, seed=seed)


def cmd_gen_data(args) -> int:
    from .dataio import generate_dataset

    cfg = _build_cfg(args)
    modes = {"relevant": ("relevant",), "irrelevant": ("irrelevant",),
             "mixed": ("relevant", "irrelevant")}[args.mode]
    base = _scene_config(cfg, modes[0], cfg.seed)
    names = generate_dataset(args.out, args.count, base, seed=cfg.seed, modes=modes)
    print(f"wrote {len(names)} videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import train

    cfg = _build_cfg(args)
    result = train(cfg, args.data, args.out)
    if result.holdout:
        print(f"held-out cc {result.holdout['cc']:.3f} "
              f"nss {result.holdout['nss']:.3f}")
    print(f"checkpoint at {result.checkpoint_dir}")
    return 0


def cmd_predict(args) -> int:
    from .dataio import list_samples, load_sample, write_tensor
    from .inference import predict_video
    from .train import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    names = [args.video] if args.video else list_samples(args.data)
    for name in names:
        sample = load_sample(Path(args.data) / name)
        maps = predict_video(model, sample.frames, sample.audio,
                             sample.sample_rate, sample.fps)
        write_tensor(Path(args.out) / f"{name}.avt", maps)
        print(f"{name}: {maps.shape[0]} maps")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate_run

    csv_path = Path(args.out) / "metrics.csv" if args.out else None
    result = evaluate_run(args.pred, args.data, csv_path=csv_path)
    m = result.means()
    print(f"SIM={m['sim']:.3f} CC={m['cc']:.3f} "
          f"NSS={m['nss']:.3f} AUCJ={m['auc_judd']:.3f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all, run_op_suite

    cfg = _build_cfg(args)
    if args.ops_only:
        results = run_op_suite(cfg.seed)
        ok = all(r.ok for r in results)
        for r in results:
            print(f"{r.name:24s} max rel err {r.max_error:.3e}  "
                  f"[{'ok' if r.ok else 'FAIL'}]")
        return 0 if ok else 1
    return 0 if run_all(cfg.seed) else 1


def cmd_ablate_fusion(args) -> int:
    from .ablation import ablate_fusion

    cfg = _build_cfg(args)
    methods = args.methods.split(",") if args.methods else \
        ["none", "add", "mul", "concat", "bilinear", "ravf"]
    rows = ablate_fusion(args.data, methods, cfg, args.out)
    for r in rows:
        print(f"{r.name:10s} SIM {r.sim:.3f} CC {r.cc:.3f} "
              f"NSS {r.nss:.3f} AUCJ {r.auc_judd:.3f}")
    return 0


def cmd_ablate_pairs(args) -> int:
    from .ablation import ablate_pairs

    cfg = _build_cfg(args)
    counts = [int(c) for c in args.counts.split(",")] if args.counts else [0, 1, 2, 3, 4]
    rows = ablate_pairs(args.data, counts, cfg, args.out)
    for r in rows:
        print(f"pairs={r.name:2s} SIM {r.sim:.3f} CC {r.cc:.3f} "
              f"NSS {r.nss:.3f} AUCJ {r.auc_judd:.3f}")
    return 0


def cmd_export_retention(args) -> int:
    from .ablation import export_retention
    from .dataio import load_sample
    from .train import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    sample = load_sample(Path(args.data) / args.video)
    export_retention(model, sample, args.out)
    print(f"retention maps for {args.video} written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avsal",
        description="audio-visual saliency: train, predict, evaluate, ablate",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--mode", choices=("relevant", "irrelevant", "mixed"),
                   default="relevant")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="sliding-window prediction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--video", help="single video name (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_config_flags(p)
    p.add_argument("--all", action="store_true", dest="run_all",
                   help="include the end-to-end model check (default)")
    p.add_argument("--ops-only", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("ablate-fusion", help="fusion method comparison")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--methods", help="comma list (default: all)")
    p.set_defaults(fn=cmd_ablate_fusion)

    p = sub.add_parser("ablate-pairs", help="synergy pair-count comparison")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--counts", help="comma list of 0..4 (default: all)")
    p.set_defaults(fn=cmd_ablate_pairs)

    p = sub.add_parser("export-retention", help="dump retention maps + images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_retention)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
