"""Command-line interface: synth, train, infer, eval, baseline.

Every file-writing subcommand drops a JSON manifest next to its outputs
echoing the exact parameters used, so any run can be reproduced
byte-identically from its manifest.  Reports go to stdout, logs to
stderr.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import constraints, diffops, inference, raster, solver, synth
from .errors import DataError, NumericError, UsageError

PATCH_SIDE_MEMORY_LIMIT = 9


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smcd", description="Patch-metric change detection pipeline")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic speckled scene pair")
    p_synth.add_argument("--width", type=int, default=128)
    p_synth.add_argument("--height", type=int, default=128)
    p_synth.add_argument("--looks", type=int, default=2)
    p_synth.add_argument("--shift-y", type=float, default=0.0)
    p_synth.add_argument("--shift-x", type=float, default=0.0)
    p_synth.add_argument("--regions", type=int, default=3)
    p_synth.add_argument("--contrast", type=float, default=4.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="learn a change metric from an image pair")
    p_train.add_argument("--i1", required=True)
    p_train.add_argument("--i2", required=True)
    p_train.add_argument("--labels", required=True, help="ground-truth change map (PGM)")
    p_train.add_argument("--op", choices=(diffops.OP_SUB, diffops.OP_LR), default=diffops.OP_LR)
    p_train.add_argument("--patch", type=int, default=23, help="patch side (odd)")
    p_train.add_argument("--n", type=int, default=2000, help="constraint pairs (even)")
    p_train.add_argument("--c", type=float, default=40.0)
    p_train.add_argument("--jitter", type=int, default=constraints.DEFAULT_JITTER)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--tol", type=float, default=1e-3)
    p_train.add_argument("--max-iters", type=int, default=200)
    p_train.add_argument(
        "--no-psd-project",
        action="store_true",
        help="keep the raw learned matrix instead of projecting it to the PSD cone",
    )
    p_train.add_argument("--out", required=True, help="output model file")

    p_infer = sub.add_parser("infer", help="sweep a model over an image pair")
    p_infer.add_argument("--model", required=True)
    p_infer.add_argument("--i1", required=True)
    p_infer.add_argument("--i2", required=True)
    # sign realizes the trained decision rule and suits raw (unprojected)
    # models; the PSD projection shifts scores upward, so the projected
    # default models binarize better with Otsu
    p_infer.add_argument("--mode", choices=("sign", "otsu"), default="otsu")
    p_infer.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="score a predicted change map against truth")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--pma-denominator", choices=("changed", "unchanged"), default="changed")
    p_eval.add_argument("--oneline", action="store_true", help="single machine-readable line")

    p_base = sub.add_parser("baseline", help="pixelwise log-ratio + Otsu reference")
    p_base.add_argument("--i1", required=True)
    p_base.add_argument("--i2", required=True)
    p_base.add_argument("--truth", required=True)
    p_base.add_argument("--window", type=int, default=1, help="mean-of-log window (odd)")
    p_base.add_argument("--pma-denominator", choices=("changed", "unchanged"), default="changed")
    p_base.add_argument("--oneline", action="store_true")
    p_base.add_argument("--out", required=True, help="output directory")

    return parser


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise UsageError(message)


def _write_manifest(path: Path, subcommand: str, params: dict, inputs: dict, outputs: dict) -> None:
    manifest = {
        "subcommand": subcommand,
        "params": params,
        "inputs": inputs,
        "outputs": outputs,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    _require(args.width >= 1 and args.height >= 1, "--width and --height must be >= 1")
    _require(args.looks >= 1, "--looks must be >= 1")
    _require(args.contrast > 0, "--contrast must be > 0")
    _require(abs(args.shift_y) <= 3 and abs(args.shift_x) <= 3, "--shift-* must be within 3 px")
    _require(args.regions >= 0, "--regions must be >= 0")
    cfg = synth.SceneConfig(
        width=args.width,
        height=args.height,
        looks=args.looks,
        shift=(args.shift_y, args.shift_x),
        n_regions=args.regions,
        contrast=args.contrast,
        seed=args.seed,
    )
    i1, i2, truth = synth.gen_scene(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "i1": str(out / "i1.sarr"),
        "i2": str(out / "i2.sarr"),
        "truth": str(out / "truth.pgm"),
    }
    raster.save_raster(i1, paths["i1"])
    raster.save_raster(i2, paths["i2"])
    raster.save_labels(truth, paths["truth"])
    _write_manifest(
        out / "manifest.json",
        "synth",
        {
            "width": args.width,
            "height": args.height,
            "looks": args.looks,
            "shift-y": args.shift_y,
            "shift-x": args.shift_x,
            "regions": args.regions,
            "contrast": args.contrast,
            "seed": args.seed,
        },
        inputs={},
        outputs=paths,
    )
    return 0


def cmd_train(args) -> int:
    _require(args.patch >= 1 and args.patch % 2 == 1, "--patch must be odd and >= 1")
    _require(args.n >= 2 and args.n % 2 == 0, "--n must be even and >= 2")
    _require(args.c > 0, "--c must be > 0")
    _require(args.jitter >= 0, "--jitter must be >= 0")
    _require(args.tol > 0, "--tol must be > 0")
    _require(args.max_iters >= 1, "--max-iters must be >= 1")
    if args.patch > PATCH_SIDE_MEMORY_LIMIT:
        print(
            f"warning: --patch {args.patch} lifts features to length "
            f"{args.patch ** 4 + 1}; sides above {PATCH_SIDE_MEMORY_LIMIT} are "
            "memory-heavy, desk-scale runs use 5 or 7",
            file=sys.stderr,
        )
    i1 = raster.load_raster(args.i1)
    i2 = raster.load_raster(args.i2)
    labels = raster.load_labels(args.labels)
    cs = constraints.sample_constraints(
        i1, i2, labels, op=args.op, side=args.patch, n=args.n, r=args.jitter, seed=args.seed
    )
    cfg = solver.TrainConfig(
        c=args.c,
        tol=args.tol,
        max_iters=args.max_iters,
        psd_project=not args.no_psd_project,
    )
    model = solver.train(cs, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    diffops.save_model(model, out)
    _write_manifest(
        Path(str(out) + ".manifest.json"),
        "train",
        {
            "op": args.op,
            "patch": args.patch,
            "n": args.n,
            "c": args.c,
            "jitter": args.jitter,
            "seed": args.seed,
            "tol": args.tol,
            "max-iters": args.max_iters,
            "psd-project": not args.no_psd_project,
        },
        inputs={"i1": args.i1, "i2": args.i2, "labels": args.labels},
        outputs={"model": str(out)},
    )
    return 0


def cmd_infer(args) -> int:
    model = diffops.load_model(args.model)
    i1 = raster.load_raster(args.i1)
    i2 = raster.load_raster(args.i2)
    scores = inference.difference_image(i1, i2, model)
    cmap = inference.change_map(scores, mode=args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "scores": str(out / "scores.sarr"),
        "scores_preview": str(out / "scores.pgm"),
        "change_map": str(out / "change.pgm"),
    }
    raster.save_raster(scores, paths["scores"])
    raster.save_pgm_preview(scores, paths["scores_preview"])
    raster.save_labels(cmap, paths["change_map"])
    _write_manifest(
        out / "manifest.json",
        "infer",
        {"mode": args.mode},
        inputs={"model": args.model, "i1": args.i1, "i2": args.i2},
        outputs=paths,
    )
    return 0


def cmd_eval(args) -> int:
    pred = raster.load_labels(args.pred)
    truth = raster.load_labels(args.truth)
    report = inference.evaluate(pred, truth, pma_denominator=args.pma_denominator)
    if args.oneline:
        print(report.oneline())
    else:
        for line in report.lines():
            print(line)
    return 0


def cmd_baseline(args) -> int:
    _require(args.window >= 1 and args.window % 2 == 1, "--window must be odd and >= 1")
    i1 = raster.load_raster(args.i1)
    i2 = raster.load_raster(args.i2)
    truth = raster.load_labels(args.truth)
    scores = inference.baseline_lr_map(i1, i2, window=args.window)
    cmap = inference.change_map(scores, mode="otsu")
    report = inference.evaluate(cmap, truth, pma_denominator=args.pma_denominator)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "scores": str(out / "baseline_scores.sarr"),
        "scores_preview": str(out / "baseline_scores.pgm"),
        "change_map": str(out / "baseline_change.pgm"),
    }
    raster.save_raster(scores, paths["scores"])
    raster.save_pgm_preview(scores, paths["scores_preview"])
    raster.save_labels(cmap, paths["change_map"])
    _write_manifest(
        out / "manifest.json",
        "baseline",
        {"window": args.window, "pma-denominator": args.pma_denominator},
        inputs={"i1": args.i1, "i2": args.i2, "truth": args.truth},
        outputs=paths,
    )
    if args.oneline:
        print(report.oneline())
    else:
        for line in report.lines():
            print(line)
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.subcommand](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
