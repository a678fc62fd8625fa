"""Command-line entry points.

    cardiossl gen-data      --subjects N --seed S --out DIR
    cardiossl make-pretext  --data DIR --view sa|la4ch
    cardiossl pretrain      --workspace DIR --seed S
    cardiossl finetune      --workspace DIR --seed S --mode M --subjects N
    cardiossl evaluate      --workspace DIR --checkpoint PATH --out CSV
    cardiossl experiment    --workspace DIR [--workers N]

Every command accepts ``--config FILE`` (INI) and repeated
``--set section.key=value`` overrides; the resolved config is persisted
with each run.  Relative paths are taken against ``--workspace``,
which defaults to $CARDIOSSL_WORKSPACE or the current directory.

Exit codes: 0 ok, 1 usage, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import experiment, metrics, studies
from .config import load_config, save_resolved
from .errors import (AmbiguousOrientation, BadBudget, BadShape, DegenerateSpec,
                     EmptyDataset, EmptyMask, FormatError, InsufficientSubjects,
                     MissingCheckpoint, OffPlanePoint, ParallelLines,
                     ParallelPlanes, PipelineError, ShapeMismatch,
                     TrainingDiverged)

log = logging.getLogger("cardiossl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3
MAX_PRETEXT_SKIP_FRACTION = 0.10

DATA_ERRORS = (FormatError, InsufficientSubjects, DegenerateSpec, OffPlanePoint,
               ParallelPlanes, ParallelLines, AmbiguousOrientation,
               ShapeMismatch, EmptyMask)
TRAIN_ERRORS = (EmptyDataset, MissingCheckpoint, BadBudget, BadShape,
                TrainingDiverged)

VIEW_NAMES = {"sa": "sa", "la4ch": "la_4ch"}


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _workspace(args) -> Path:
    return Path(args.workspace or os.environ.get("CARDIOSSL_WORKSPACE", "."))


def _resolve(args, path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else _workspace(args) / path


def _config(args):
    return load_config(getattr(args, "config", None), getattr(args, "set", []) or [])


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _resolve(args, args.out)
    experiment.generate_data(out, cfg, args.subjects, args.seed)
    save_resolved(cfg, out / "config_resolved.json")
    print(f"generated {args.subjects} subjects under {out}")
    return EXIT_OK


def cmd_make_pretext(args) -> int:
    cfg = _config(args)
    view = VIEW_NAMES[args.view]
    side = args.side if args.side is not None else cfg.pretext.side
    spacing = args.spacing if args.spacing is not None else cfg.pretext.spacing
    data = _resolve(args, args.data)
    n_images, n_skipped = experiment.make_pretext_data(data, view, side, spacing)
    print(f"pretext labels for {n_images} images under {data}; "
          f"{n_skipped} skipped for degenerate geometry")
    if n_images == 0 or n_skipped > MAX_PRETEXT_SKIP_FRACTION * n_images:
        print(f"error: {n_skipped}/{n_images} images skipped; geometry looks broken",
              file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    ckpt = experiment.pretrain_cell(_workspace(args), cfg, args.seed)
    print(f"pretrained checkpoint at {ckpt}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _config(args)
    cell = experiment.finetune_cell(_workspace(args), cfg, args.seed,
                                    args.mode, args.subjects)
    report = metrics.MetricsReport.from_csv(cell / "metrics_raw.csv")
    print(f"cell {cell}: mean Dice {report.mean_dice():.3f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    _, test = experiment._annotated_split(_workspace(args), cfg)
    report = metrics.evaluate(_resolve(args, args.checkpoint), test,
                              cfg.experiment.view)
    out = _resolve(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    print(f"wrote {out}; mean Dice {report.mean_dice():.3f} over "
          f"{len({(r.subject, r.frame) for r in report.rows})} test cases")
    for structure, agg in report.aggregate().items():
        print(f"  {structure}: dice {agg['dice_mean']:.3f} ({agg['dice_std']:.3f})  "
              f"mcd {agg['mcd_mean']:.2f} ({agg['mcd_std']:.2f}) mm")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    pooled = experiment.run_experiment(_workspace(args), cfg, workers=args.workers)
    print(f"experiment complete; pooled table at {pooled}")
    print(Path(pooled).read_text())
    return EXIT_OK


def build_parser() -> Parser:
    parser = Parser(prog="cardiossl", description=__doc__,
                    formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workspace", default=None,
                        help="base directory for data, runs and relative paths")
    common.add_argument("--config", default=None, help="INI configuration file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gen-data", parents=[common],
                       help="generate a phantom cohort")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("make-pretext", parents=[common],
                       help="write position-box label maps for a cohort")
    p.add_argument("--data", required=True)
    p.add_argument("--view", choices=sorted(VIEW_NAMES), default="sa")
    p.add_argument("--side", type=int, default=None)
    p.add_argument("--spacing", type=int, default=None)
    p.set_defaults(func=cmd_make_pretext)

    p = sub.add_parser("pretrain", parents=[common],
                       help="self-supervised pretraining for one seed")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common],
                       help="train the segmentation task under one regime")
    p.add_argument("--mode", choices=("scratch", "ssl_decoder", "ssl_all",
                                      "ssl_multitask"), required=True)
    p.add_argument("--subjects", type=int, required=True,
                   help="annotation budget (training subjects)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common],
                       help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="metrics_raw.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", parents=[common],
                       help="run the full {mode x budget x seed} grid")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TRAIN_ERRORS as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
