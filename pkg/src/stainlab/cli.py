"""Command-line entry point wiring all pipeline stages.

Every command validates its inputs, runs one module operation, and writes a
RunRecord (full config snapshot, seed, version, timestamps, output paths)
alongside its outputs, so any successful run can be re-described and
deterministic commands replayed. Config precedence, lowest to highest:
built-in defaults, --config file, explicit CLI flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, images, report
from .benchmark import run_desk_benchmark
from .errors import ConfigError, ContractError, DataError, StainlabError, TrainingError
from .metrics import evaluate
from .patches import ExtractionConfig, extract_manifest, read_manifest, split_manifest, write_manifest
from .stitching import IdentityModel, StitchPlan, infer_slide
from .synth import generate_corpus, run_cycle_benchmark
from .trainer import TrainConfig, load_generator, train, train_secondary_stainer

log = logging.getLogger("stainlab.cli")

_EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    ContractError: 4,
    TrainingError: 5,
}


@dataclasses.dataclass
class RunRecord:
    command: str
    argv: list[str]
    config: dict
    seed: int | None
    version: str
    started: str
    finished: str
    outputs: list[str]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_run_record(record: RunRecord, out: Path) -> None:
    """One RunRecord per command, next to its outputs."""
    path = out / "run_record.json" if out.is_dir() else out.parent / f"{out.stem}.run.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(dataclasses.asdict(record), indent=2) + "\n")


def _record(command: str, argv: list[str], config: dict, seed, started: str, outputs: list[Path]) -> RunRecord:
    return RunRecord(
        command=command,
        argv=list(argv),
        config=config,
        seed=seed,
        version=__version__,
        started=started,
        finished=_now(),
        outputs=[str(p) for p in outputs],
    )


# ----------------------------------------------------------------------
# subcommand implementations
# ----------------------------------------------------------------------

def _cmd_extract(args, argv) -> int:
    started = _now()
    cfg = ExtractionConfig(
        patch_size=args.patch_size,
        stride=args.stride,
        tissue_threshold=args.tissue_threshold,
    )
    records = read_manifest(args.manifest)
    out = Path(args.out)
    extract_manifest(records, cfg, out)
    _write_run_record(
        _record("extract", argv, dataclasses.asdict(cfg) | {"manifest": args.manifest}, None, started, [out]),
        out,
    )
    return 0


def _cmd_split(args, argv) -> int:
    started = _now()
    records = read_manifest(args.manifest, resolve=False)
    records = split_manifest(records, train_count=args.train_count, seed=args.seed)
    out = Path(args.out)
    write_manifest(out, records)
    _write_run_record(
        _record("split", argv, {"manifest": args.manifest, "train_count": args.train_count},
                args.seed, started, [out]),
        out,
    )
    return 0


_TRAIN_FLAG_KEYS = (
    "direction", "epochs", "batch_size", "lr", "alpha", "lambda_l1", "gamma_cc",
    "seed", "checkpoint_every",
)


def _train_config(args) -> TrainConfig:
    overrides = {k: getattr(args, k) for k in _TRAIN_FLAG_KEYS if getattr(args, k) is not None}
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**overrides)


def _cmd_train(args, argv) -> int:
    started = _now()
    cfg = _train_config(args)
    out = Path(args.out)
    ckpt = train(args.patches, cfg, out, resume=args.resume)
    report.loss_curves_figure(out / "loss_log.jsonl", out / "loss_curves.png")
    _write_run_record(
        _record("train", argv, dataclasses.asdict(cfg), cfg.seed, started,
                [ckpt, out / "loss_log.jsonl", out / "val_metrics.jsonl"]),
        out,
    )
    return 0


def _cmd_train_secondary(args, argv) -> int:
    started = _now()
    cfg = _train_config(args)
    if args.direction is None:
        cfg = dataclasses.replace(cfg, direction="stain")
    out = Path(args.out)
    ckpt = train_secondary_stainer(args.destainer, args.patches, cfg, out)
    report.loss_curves_figure(out / "loss_log.jsonl", out / "loss_curves.png")
    _write_run_record(
        _record("train-secondary", argv, dataclasses.asdict(cfg) | {"destainer": args.destainer},
                cfg.seed, started, [ckpt]),
        out,
    )
    return 0


def _cmd_infer(args, argv) -> int:
    started = _now()
    model = load_generator(args.checkpoint)
    if model.spec.input_size != args.tile:
        raise ConfigError(
            f"checkpoint generator expects {model.spec.input_size}px tiles, got --tile {args.tile}"
        )
    plan = StitchPlan(tile_size=args.tile, stride=args.stride, blend=args.blend)
    slide = images.load_rgb(args.slide)
    out = Path(args.out)
    stitched = infer_slide(model, slide, plan, stochastic=args.stochastic)
    images.save_rgb(out, stitched)
    _write_run_record(
        _record("infer", argv,
                {"checkpoint": args.checkpoint, "slide": args.slide,
                 "tile": args.tile, "stride": plan.stride, "blend": args.blend,
                 "stochastic": args.stochastic},
                None, started, [out]),
        out,
    )
    return 0


def _cmd_evaluate(args, argv) -> int:
    started = _now()
    index = None
    if args.index:
        index = [json.loads(line) for line in Path(args.index).read_text().splitlines() if line.strip()]
    result = evaluate(args.generated, args.target, index=index)
    out = Path(args.out)
    result.save(out)
    report.write_metrics_csv(result, out.with_suffix(".csv"))
    report.metrics_figure(result, out.with_suffix(".png"), title="generated vs target")
    _write_run_record(
        _record("evaluate", argv, {"generated": args.generated, "target": args.target},
                None, started, [out, out.with_suffix(".csv"), out.with_suffix(".png")]),
        out,
    )
    agg = result.aggregate
    print(f"patches={agg['count']} mean_ssim={agg['mean_ssim']:.4f} mean_cc={agg['mean_cc']:.4f}")
    if result.missing:
        print(f"missing counterpart for {len(result.missing)} patches (see report)", file=sys.stderr)
        return 3
    return 0


def _cmd_cycle(args, argv) -> int:
    started = _now()
    records = read_manifest(args.manifest)
    if args.identity_standins:
        stain = destain = secondary = IdentityModel()
    else:
        stain = load_generator(args.stain)
        destain = load_generator(args.destain)
        secondary = load_generator(args.secondary)
    plan = StitchPlan(tile_size=args.tile, stride=args.stride)
    out = Path(args.out)
    result = run_cycle_benchmark(records, stain, destain, secondary, plan, out_dir=out)
    for name, rep in result.items():
        report.write_metrics_csv(rep, out / f"{name}_report.csv")
        report.metrics_figure(rep, out / f"{name}_metrics.png", title=name)
        agg = rep.aggregate
        print(f"{name}: slides={agg['count']} mean_ssim={agg['mean_ssim']:.4f} mean_cc={agg['mean_cc']:.4f}")
    first_val = next(r for r in records if r.split == "val")
    report.slide_strip_figure(
        [
            ("stained input", images.load_rgb(first_val.stained_path)),
            ("destained", images.load_rgb(out / f"{first_val.slide_id}_destained.png")),
            ("restained", images.load_rgb(out / f"{first_val.slide_id}_restained.png")),
            ("ground truth", images.load_rgb(first_val.stained_path)),
        ],
        out / "cycle_samples.png",
    )
    _write_run_record(
        _record("cycle", argv,
                {"manifest": args.manifest, "tile": args.tile, "stride": plan.stride,
                 "identity_standins": args.identity_standins},
                None, started, [out / "cycle_report.json"]),
        out,
    )
    return 0


def _cmd_synth(args, argv) -> int:
    started = _now()
    out = Path(args.out)
    manifest = generate_corpus(
        out,
        seed=args.seed,
        n_slides=args.slides,
        slide_size=args.slide_size,
        train_count=args.train_slides,
    )
    _write_run_record(
        _record("synth", argv,
                {"slides": args.slides, "slide_size": args.slide_size,
                 "train_slides": args.train_slides},
                args.seed, started, [manifest]),
        out,
    )
    return 0


def _cmd_bench(args, argv) -> int:
    started = _now()
    out = Path(args.out)
    results = run_desk_benchmark(out, seed=args.seed, epochs=args.epochs)
    _write_run_record(
        _record("bench", argv, {"epochs": args.epochs}, args.seed, started,
                [out / "desk_benchmark.json"]),
        out,
    )
    full = results["models"]["full"]
    abl = results["models"]["ablation"]
    print(f"full:     val_ssim={full['val']['mean_ssim']:.4f} tiling={full['tiling_artifact']:.5f}")
    print(f"ablation: val_ssim={abl['val']['mean_ssim']:.4f} tiling={abl['tiling_artifact']:.5f}")
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stainlab",
        description="Computational staining/destaining pipeline: patch extraction, "
        "cGAN training, tiled inference, and evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"stainlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="cut paired patches from registered slide pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--patch-size", type=int, default=1024)
    p.add_argument("--stride", type=int, default=None, help="default: patch size / 4")
    p.add_argument("--tissue-threshold", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("split", help="assign per-slide train/val splits in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    for name, fn in (("train", _cmd_train), ("train-secondary", _cmd_train_secondary)):
        p = sub.add_parser(name, help=f"{name} a model over extracted patches")
        p.add_argument("--patches", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--direction", choices=["stain", "destain"], default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--lambda-l1", dest="lambda_l1", type=float, default=None)
        p.add_argument("--gamma-cc", dest="gamma_cc", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=None)
        if name == "train":
            p.add_argument("--resume", default=None, help="checkpoint to resume from")
        else:
            p.add_argument("--destainer", required=True, help="trained destaining checkpoint")
        p.set_defaults(func=fn)

    p = sub.add_parser("infer", help="tiled whole-slide inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--slide", required=True)
    p.add_argument("--tile", type=int, default=1024)
    p.add_argument("--stride", type=int, default=None, help="default: tile / 2")
    p.add_argument("--blend", choices=["average", "center_crop"], default="average")
    p.add_argument("--stochastic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="SSIM/CC report for generated vs target patches")
    p.add_argument("--generated", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("cycle", help="destain -> secondary-restain validation harness")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stain", default=None)
    p.add_argument("--destain", default=None)
    p.add_argument("--secondary", default=None)
    p.add_argument("--identity-standins", action="store_true",
                   help="use identity models (plumbing check)")
    p.add_argument("--tile", type=int, default=64)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cycle)

    p = sub.add_parser("synth", help="generate a synthetic paired-slide corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--slides", type=int, required=True)
    p.add_argument("--slide-size", type=int, default=512)
    p.add_argument("--train-slides", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("bench", help="run the desk-scale learning benchmark")
    p.add_argument("--seed", type=int, default=20180)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bench)

    return parser


def dispatch(argv: list[str]) -> int:
    logging.basicConfig(
        level=os.environ.get("STAINLAB_LOG", "INFO").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help/usage errors itself
        return int(exc.code or 0)
    try:
        return args.func(args, argv)
    except StainlabError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        for cls, code in _EXIT_CODES.items():
            if isinstance(exc, cls):
                return code
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
