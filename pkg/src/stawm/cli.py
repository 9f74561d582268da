"""Command-line entry point: ``stawm <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .harness import checkpoint as ckpt_io
from .harness.config import ConfigError, RunConfig, format_config, parse_config
from .memory import RateTriple, check_stability, simulate_equilibrium


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat 'key = value' config file")
    parser.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
    parser.add_argument("--mode", help="classify, draw-addition, draw-bernoulli, selfsup or sketchpad")
    parser.add_argument("--data-dir", help="directory holding the MNIST IDX files")
    parser.add_argument("--out-dir", help="where CSVs, checkpoints and figures go")
    parser.add_argument("--checkpoint", help="checkpoint to evaluate, resume, or (selfsup) start from")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--val-fraction", type=float)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="any other config key; repeatable")
    parser.add_argument("--no-figures", action="store_true", help="skip the PNG figures")


def _overrides(args) -> dict:
    out = {
        "seed": args.seed,
        "mode": args.mode,
        "data_dir": args.data_dir,
        "out_dir": args.out_dir,
        "epochs": args.epochs,
        "val_fraction": args.val_fraction,
    }
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _echo_overrides(echo: dict) -> dict:
    """A checkpoint's config echo as overrides, minus derived and path-only keys."""
    skip = {"head", "hidden_size", "out_dir"}
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in echo.items() if k not in skip}


def _config_for_checkpoint(args, state: ckpt_io.Checkpoint) -> RunConfig:
    merged = _echo_overrides(state.config)
    if args.config:
        from .harness.config import parse_text

        with open(args.config, encoding="utf-8") as f:
            merged.update(parse_text(f.read()))
    merged.update({k: v for k, v in _overrides(args).items() if v is not None})
    return parse_config(None, merged)


def _print_rows(header, rows) -> None:
    from .harness.train import format_row

    sys.stdout.write(format_row(header))
    for row in rows:
        sys.stdout.write(format_row(row))


def cmd_train(args) -> int:
    from .harness.train import run_train

    overrides = _overrides(args)
    if args.checkpoint:
        overrides["checkpoint"] = args.checkpoint
    config = parse_config(args.config, overrides)
    resume = args.checkpoint if config.mode != "selfsup" and args.checkpoint else None
    os.makedirs(config.out_dir, exist_ok=True)
    with open(os.path.join(config.out_dir, "config.txt"), "w", encoding="utf-8") as f:
        f.write(format_config(config))
    result = run_train(config, resume=resume, figures=not args.no_figures)
    _print_rows(("epoch", "train_loss", "test_metric", "lr"),
                [(r["epoch"], r["train_loss"], r["test_metric"], r["lr"]) for r in result.history])
    print(f"# metrics {result.metrics_path}")
    print(f"# checkpoint {result.checkpoint_path}")
    return 0


def _need_checkpoint(args) -> ckpt_io.Checkpoint:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    return ckpt_io.load(args.checkpoint)


def cmd_eval(args) -> int:
    from .harness.evaluate import format_stability, run_eval
    from .harness.train import format_row, load_splits

    state = _need_checkpoint(args)
    config = _config_for_checkpoint(args, state)
    test = load_splits(config).test
    out_dir = args.out_dir
    report = run_eval(args.checkpoint, test, out_dir, render=args.render if out_dir else 0,
                      memory_dump=args.memory if out_dir else 0, seed=config.seed,
                      batch_size=config.eval_batch, figures=not args.no_figures)
    _print_rows(("mode", "metric", "value", "samples"), [(report.mode, report.metric, report.value, len(test))])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "eval.csv"), "w", encoding="utf-8") as f:
            f.write(format_row(("mode", "metric", "value", "samples")))
            f.write(format_row((report.mode, report.metric, report.value, len(test))))
    print("# " + format_stability(report.stability, report.rates))
    for path in report.files:
        print(f"# wrote {path}")
    return 0


def cmd_render(args) -> int:
    from .harness.evaluate import load_model, render_canvases
    from .harness.train import load_splits

    state = _need_checkpoint(args)
    config = _config_for_checkpoint(args, state)
    model, _ = load_model(args.checkpoint)
    images = load_splits(config).test.images[:args.count]
    files = render_canvases(model, images, args.out_dir or config.out_dir, config.seed,
                            figures=not args.no_figures)
    _print_rows(("file",), [(f,) for f in files])
    return 0


def cmd_inspect_memory(args) -> int:
    from .harness.evaluate import (
        MEMORY_STATS_HEADER, dump_memory, format_stability, load_model, memory_stats_rows, stability_of,
        terminal_memories,
    )
    from .harness.train import load_splits

    state = _need_checkpoint(args)
    config = _config_for_checkpoint(args, state)
    model, _ = load_model(args.checkpoint)
    images = load_splits(config).test.images[:args.count]
    _print_rows(MEMORY_STATS_HEADER, memory_stats_rows(terminal_memories(model, images, config.seed)))
    if args.out_dir:
        for path in dump_memory(model, images, args.out_dir, config.seed, figures=not args.no_figures):
            print(f"# wrote {path}")
    print("# " + format_stability(stability_of(model), model.memory.rates.as_tuple()))
    return 0


def cmd_check_stability(args) -> int:
    from .harness.evaluate import format_stability

    if args.checkpoint:
        state = ckpt_io.load(args.checkpoint)
        p = state.params
        rates = RateTriple(float(p["memory.eta"]), float(p["memory.delta"]), float(p["memory.theta"]))
        glimpses = state.config.get("glimpses")
    else:
        from .harness.config import _convert, parse_text

        values = {"eta": 0.4, "delta": 0.2, "theta": 0.5, "glimpses": 4}
        if args.config:
            with open(args.config, encoding="utf-8") as f:
                pairs = parse_text(f.read())
            for key in values:
                if key in pairs:
                    values[key] = _convert(key, pairs[key], values[key])
        for key in ("eta", "delta", "theta", "glimpses"):
            if getattr(args, key) is not None:
                values[key] = getattr(args, key)
        rates = RateTriple(float(values["eta"]), float(values["delta"]), float(values["theta"]))
        glimpses = int(values["glimpses"])
    report = check_stability(rates, n_glimpses=glimpses)
    _print_rows(("eta", "delta", "theta", "glimpses", "satisfied", "bound"),
                [(*rates.as_tuple(), glimpses, report.satisfied, report.bound)])
    print("# " + format_stability(report, rates.as_tuple()))
    if report.satisfied and args.simulate:
        rng = np.random.default_rng(args.seed or 0)
        stimuli = rng.uniform(0.0, 1.0, size=(glimpses, args.simulate))
        eq = simulate_equilibrium(stimuli, rates)
        print(f"# equilibrium converged={eq.converged} iterations={eq.iterations} "
              f"max={float(eq.gamma.max()):.6g}")
        if args.out_dir and not args.no_figures:
            from .harness import plotting

            path = plotting.equilibrium_trace(eq.history, os.path.join(args.out_dir, "equilibrium.png"),
                                              report.bound)
            print(f"# wrote {path}")
    return 0 if report.satisfied else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stawm", description="Short-term attentive working memory models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics.csv and a checkpoint")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    _common(p)
    p.add_argument("--render", type=int, default=8, help="images to render when --out-dir is set")
    p.add_argument("--memory", type=int, default=16, help="images whose memory stats are dumped")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write canvas sequences as PGM/PPM and PNG")
    _common(p)
    p.add_argument("--count", type=int, default=8)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect-memory", help="terminal memory statistics per image")
    _common(p)
    p.add_argument("--count", type=int, default=16)
    p.set_defaults(func=cmd_inspect_memory)

    p = sub.add_parser("check-stability", help="test memory rates against the stability conditions")
    _common(p)
    p.add_argument("--eta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--glimpses", type=int)
    p.add_argument("--simulate", type=int, default=0, metavar="M",
                   help="also iterate the equilibrium for random M-dimensional stimuli")
    p.set_defaults(func=cmd_check_stability)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ckpt_io.CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
