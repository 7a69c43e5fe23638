"""Command-line entry point: ``adaptjscc <command> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data or checkpoint error,
3 numerical failure. Errors go to stderr as ``ERROR:<code>:<message>``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint
from .config import ExperimentConfig
from .data import DatasetSpec, ingest_dataset
from .errors import DataError, JSCCError
from .evaluation import emit_artifacts, eval_adaptive_vs_fixed, eval_per_class, eval_rate_vs_snr

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _snr_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from None


def _path_list(text: str) -> list[str]:
    return [s for s in text.split(",") if s]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adaptjscc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train the adaptive-rate model")
    t.add_argument("--config", required=True)
    t.add_argument("--resume")
    t.add_argument("--out", default="runs/adaptive")

    b = sub.add_parser("train-baseline", help="train a fixed-rate baseline")
    b.add_argument("--config", required=True)
    b.add_argument("--active-groups", type=int, required=True)
    b.add_argument("--out")

    e = sub.add_parser("eval", help="evaluate checkpoints")
    e.add_argument("study", choices=["rate-vs-snr", "compare", "per-class"])
    e.add_argument("--ckpt", required=True)
    e.add_argument("--baseline-ckpts", type=_path_list, default=[])
    e.add_argument("--snrs", type=_snr_list, default=[0.0, 5.0, 10.0, 15.0, 20.0])
    e.add_argument("--out", default="results")
    e.add_argument("--decision", choices=["argmax", "sample"], default="argmax")
    e.add_argument("--data-path")
    e.add_argument("--subset", type=int)
    e.add_argument("--format", dest="image_format", choices=["png", "svg", "pdf"], default="png")

    pl = sub.add_parser("plot", help="regenerate a figure from an evaluation CSV")
    pl.add_argument("--from", dest="source", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--format", dest="image_format", choices=["png", "svg", "pdf"], default="png")

    i = sub.add_parser("inspect", help="print checkpoint metadata")
    i.add_argument("--ckpt", required=True)

    d = sub.add_parser("desk", help="run the desk-scale study (7 models)")
    d.add_argument("--out", default="runs/desk")
    d.add_argument("--config", help="base config; defaults to the desk preset")
    return p


def _write_manifest(out: Path, config: ExperimentConfig, command: str, started: float) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = dict(
        command=command,
        config_hash=config.digest(),
        seed=config.seed,
        code_version=__version__,
        started=time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    from .training import train

    config = ExperimentConfig.load(args.config)
    started = time.time()
    train(config, args.out, resume=args.resume)
    _write_manifest(Path(args.out), config, "train", started)
    print(Path(args.out) / "final.ckpt")
    return 0


def cmd_train_baseline(args) -> int:
    from .training import train_fixed_rate_baseline

    config = ExperimentConfig.load(args.config)
    out = args.out or f"runs/fixed_j{args.active_groups}"
    started = time.time()
    train_fixed_rate_baseline(config, args.active_groups, out)
    _write_manifest(Path(out), config.replace(fixed_groups=args.active_groups), "train-baseline", started)
    print(Path(out) / "final.ckpt")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    model = ckpt.build_model()
    baselines = {}
    for path in args.baseline_ckpts:
        b = load_checkpoint(path)
        baselines[f"fixed_j{b.config.fixed_groups}" if b.config.fixed_groups is not None else Path(path).stem] = b.build_model()
    spec = DatasetSpec(
        cfg.dataset.name,
        args.data_path or cfg.dataset.path,
        "test",
        args.subset if args.subset is not None else cfg.dataset.test_subset,
        cfg.seed,
    )
    data = ingest_dataset(spec)
    out = Path(args.out)
    if args.study == "rate-vs-snr":
        records = eval_rate_vs_snr(model, args.snrs, data, seed=cfg.seed, decision=args.decision)
        for r in records:
            print(f"snr={r.snr_db:g} cpp={r.avg_cpp:.4f} psnr={r.avg_psnr_db:.3f}")
        if records:
            emit_artifacts(out, rate=records, image_format=args.image_format)
    elif args.study == "compare":
        if not baselines:
            raise DataError("compare needs --baseline-ckpts")
        table = eval_adaptive_vs_fixed(model, baselines, args.snrs, data, seed=cfg.seed, decision=args.decision)
        for snr, gap in table.gaps.items():
            print(f"snr={snr:g} psnr_gap_vs_fixed={gap:+.3f} dB")
        if table.rows:
            emit_artifacts(out, compare=table.rows, image_format=args.image_format)
    else:
        records = []
        for snr in args.snrs:
            result = eval_per_class(model, snr, data, baselines, seed=cfg.seed, decision=args.decision)
            records.append(result.record)
            print(f"snr={snr:g} psnr_std_across_classes={result.psnr_std_across_classes:.4f}")
            for name, rec in result.baselines.items():
                print(f"  {name}: cpp={rec.avg_cpp:.4f} psnr_std_across_classes={rec.class_psnr_std:.4f}")
        if records:
            emit_artifacts(out, classes=records, image_format=args.image_format)
    _write_manifest(out, cfg, f"eval {args.study}", started)
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_csv

    source = Path(args.source)
    if not source.exists():
        raise DataError(f"CSV not found: {source}")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    try:
        print(plot_csv(source, args.out, args.image_format))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    cfg = ckpt.config
    info = dict(
        kind=ckpt.meta.get("kind", "adaptive" if cfg.fixed_groups is None else f"fixed-{cfg.fixed_groups}"),
        G_s=cfg.g_selective,
        G_n=cfg.g_nonselective,
        L=cfg.group_length,
        alpha=cfg.alpha,
        stage=ckpt.meta.get("stage"),
        epoch=ckpt.meta.get("epoch"),
        code_version=ckpt.meta.get("code_version"),
        config_hash=cfg.digest(),
        parameter_counts=ckpt.meta.get("parameter_counts"),
        config=cfg.to_dict(),
    )
    print(json.dumps(info, indent=2))
    return 0


def cmd_desk(args) -> int:
    from .config import desk_config
    from .experiments import run_desk

    base = ExperimentConfig.load(args.config) if args.config else desk_config()
    res = run_desk(args.out, base)
    print(json.dumps(dict(rate=res.rate, gaps=res.gaps, adaptive_class_std=res.adaptive_class_std,
                          fixed_class_std=res.fixed_class_std), indent=2))
    return 0


COMMANDS = {
    "train": cmd_train,
    "train-baseline": cmd_train_baseline,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "inspect": cmd_inspect,
    "desk": cmd_desk,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ERROR:usage:{exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except JSCCError as exc:
        print(f"ERROR:{exc.code}:{exc}", file=sys.stderr)
        return exc.exit_status
    except FloatingPointError as exc:
        print(f"ERROR:numerical:{exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"ERROR:data:{exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
