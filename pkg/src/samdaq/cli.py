"""``daq`` command line: train, eval, ablate, gen-data, bench-memory, predict.

Every subcommand exits 0 on success.  Failures print a single line
``daq: error: <ErrorType>: <message>`` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import Config, ConfigError, load_config, preset


def _config(args) -> Config:
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "config", None):
        return load_config(args.config, **overrides)
    if getattr(args, "preset", None):
        base = preset(args.preset)
        return Config.from_dict({**base.to_dict(), **overrides})
    return Config.from_dict(overrides)


def cmd_train(args) -> None:
    from .plotting import plot_loss_curve
    from .train import train

    cfg = _config(args)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    result = train(cfg, out_dir=out, log_every=args.log_every)
    plot_loss_curve(result.history, out / "loss.png")
    print(f"checkpoint {result.checkpoint}")


def cmd_eval(args) -> None:
    from .metrics import evaluate_dataset, markdown_table, write_results_csv
    from .plotting import plot_metric_table

    mean, per_frame = evaluate_dataset(args.pred, args.gt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(out, mean, per_frame)
    table = markdown_table([(Path(args.pred).name or "pred", mean)])
    out.with_suffix(".md").write_text(table + "\n", encoding="utf-8")
    plot_metric_table([(Path(args.pred).name or "pred", mean)], out.with_suffix(".png"), "evaluation")
    print(table)


def cmd_ablate(args) -> None:
    from .ablation import axis_variants, run_ablation
    from .plotting import plot_metric_table

    cfg = _config(args)
    axis_variants(args.axis, cfg)       # reject an unknown axis before touching the filesystem
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = run_ablation(args.axis, cfg, out)
    md = table.markdown()
    (out / f"ablation_{args.axis}.md").write_text(md, encoding="utf-8")
    table.write_csv(out / f"ablation_{args.axis}.csv")
    plot_metric_table([(r.name, r.result) for r in table.rows], out / f"ablation_{args.axis}.png", args.axis)
    print(md, end="")


def cmd_gen_data(args) -> None:
    from .data import synth_dataset

    specs = synth_dataset(args.out, seed=args.seed, videos=args.videos, frames=args.frames, size=args.size)
    print(f"wrote {len(specs)} videos to {args.out}")


def cmd_bench_memory(args) -> None:
    from .ablation import bench_memory, write_memory_csv
    from .plotting import plot_memory

    cfg = _config(args)
    rows = bench_memory(cfg)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_memory_csv(rows, out)
        plot_memory(rows, out.with_suffix(".png"))
    print("variant,trainable,total,peak_bytes")
    for row in rows:
        print(",".join("unsupported" if v is None else str(v) for v in row))


def cmd_predict(args) -> None:
    from .train import predict_video

    written = predict_video(args.ckpt, args.video, args.out)
    print(f"wrote {len(written)} masks to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--preset", help="named preset (e.g. smoke) used when --config is absent")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = sub.add_parser("train", help="train a model")
    config_args(p)
    p.add_argument("--out", help="output directory (default: out_dir from config)")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default="results.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare the variants of one ablation axis")
    p.add_argument("--axis", required=True)
    config_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-data", help="write a synthetic RGB-D video dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=5)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("bench-memory", help="peak training memory of the PEFT topologies (CSV)")
    config_args(p)
    p.add_argument("--out", help="also write the CSV (and a bar chart) here")
    p.set_defaults(func=cmd_bench_memory)

    p = sub.add_parser("predict", help="write saliency masks for one video")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one machine-parseable line, no traceback
        msg = " ".join(str(exc).split())
        print(f"daq: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
