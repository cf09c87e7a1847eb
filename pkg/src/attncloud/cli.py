"""Command-line surface: dataset generation, training, evaluation,
completion, and branch-based segmentation.

Every subcommand is reproducible: identical inputs, config, and seeds yield
byte-identical outputs (reports at 17 significant digits, binary clouds and
checkpoints, pinned-style PNG figures). ``--threads 1`` pins the worker
count; results are collected in input order, so the output bytes do not
depend on scheduling either way.

Exit codes: 0 success, 1 usage/config error, 2 data or parse error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from . import data as D
from . import figures as F
from . import metrics as M
from . import segmentation as S
from .checkpoint import load_checkpoint
from .cloud import read_cloud, write_cloud, PointCloud
from .errors import ConfigError, ContractError, FormatError, NumericsError
from .models import CompletionNet
from .report import write_metrics_report
from .training import evaluate_loss, train  # noqa: F401  (train used below)
from . import training as Tr

EVAL_METRICS = ("cd-l1", "cd-l2", "fscore", "jsd", "mmd-cov-nna")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _ordered_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _load_run_config(args) -> C.RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "threads", None) is not None:
        overrides.append(f"threads={args.threads}")
    return C.load_config(args.config, overrides)


def _write_provenance(out_dir: Path, rc: C.RunConfig):
    (out_dir / "config.txt").write_text(rc.text())


def cmd_gen_data(args) -> int:
    rc = _load_run_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = D.generate_dataset(out_dir, C.dataset_config(rc), threads=rc["threads"])
    _write_provenance(out_dir, rc)
    print(f"wrote {len(entries)} shapes to {out_dir}")
    return 0


def _stack_training_arrays(shapes, task: str):
    targets = np.stack([s.cloud.points for s in shapes])
    if task == "reconstruct":
        return targets, targets
    missing = [s.path for s in shapes if s.partial is None]
    if missing:
        raise ContractError(f"no partial clouds for completion training: {missing[0]}")
    return np.stack([s.partial.points for s in shapes]), targets


def cmd_train(args) -> int:
    rc = _load_run_config(args)
    task = rc["task"]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with_partials = task == "complete"
    train_shapes = D.load_split(args.data, "train", with_partials, rc["families"])
    try:
        val_shapes = D.load_split(args.data, "val", with_partials, rc["families"])
    except ContractError:
        val_shapes = []
    x_train, y_train = _stack_training_arrays(train_shapes, task)
    x_val, y_val = (None, None)
    if val_shapes:
        x_val, y_val = _stack_training_arrays(val_shapes, task)
    model = C.build_model(rc)
    cfg = C.train_config(rc)

    def log(epoch, train_loss, val_loss):
        print(f"epoch {epoch + 1}/{cfg.epochs}: train {train_loss:.6g} val {val_loss:.6g}")

    result = Tr.train(model, cfg, x_train, y_train, x_val, y_val,
                      out_dir=out_dir, run_config=rc.raw, log=log)
    F.loss_curve_figure(result.history, out_dir / "loss_curve.png",
                        title=f"{task} ({rc['decoder'] if task == 'reconstruct' else 'completion'})")
    _write_provenance(out_dir, rc)
    return 0


def _load_model(checkpoint_path):
    ckpt = load_checkpoint(checkpoint_path)
    model, rc = C.model_from_checkpoint(ckpt)
    return ckpt, model, rc


def _predictions(model, rc, shapes, threads: int):
    if rc["task"] == "complete":
        mode = rc["completion_mode"]
        missing = [s.path for s in shapes if s.partial is None]
        if missing:
            raise ContractError(f"no partial cloud for {missing[0]}")
        return _ordered_map(
            lambda s: model.complete(s.partial.points, mode=mode)[1], shapes, threads
        )
    return _ordered_map(lambda s: model.reconstruct(s.cloud.points)[0], shapes, threads)


def cmd_eval(args) -> int:
    wanted = tuple(args.metrics.split(",")) if args.metrics else EVAL_METRICS
    for name in wanted:
        if name not in EVAL_METRICS:
            raise ConfigError(f"--metrics: unknown metric {name!r}")
    if (args.checkpoint is None) == (args.pred_dir is None):
        raise ConfigError("--checkpoint or --pred-dir required (exactly one)")

    if args.checkpoint is not None:
        ckpt, model, rc = _load_model(args.checkpoint)
    else:
        model, rc = None, C.load_config(args.config, list(args.set or []))
    if getattr(args, "threads", None) is not None:
        rc = rc.with_overrides([f"threads={args.threads}"])
    split = args.split or rc["eval_split"]
    threads = rc["threads"]

    rows = []
    per_metric = {}
    for family in rc["families"]:
        shapes = D.load_split(args.data, split, rc["task"] == "complete", (family,))
        gts = [s.cloud.points for s in shapes]
        if model is not None:
            preds = _predictions(model, rc, shapes, threads)
        else:
            pred_root = Path(args.pred_dir)
            preds = [read_cloud(pred_root / s.path).points for s in shapes]

        pairs = list(zip(preds, gts))
        values = {}
        if "cd-l1" in wanted:
            values["cd-l1"] = float(np.mean([M.chamfer_l1(p, g) for p, g in pairs]))
        if "cd-l2" in wanted:
            values["cd-l2"] = float(np.mean([M.chamfer_l2(p, g) for p, g in pairs]))
        if "fscore" in wanted:
            thr = rc["fscore_threshold"]
            values["fscore"] = float(np.mean([M.fscore(p, g, thr) for p, g in pairs]))
        if "jsd" in wanted:
            # report-path convention: predictions are clamped into the unit box
            clipped = [np.clip(p, -0.5, 0.5) for p in preds]
            values["jsd"] = M.jsd(clipped, gts, rc["jsd_resolution"])
        if "mmd-cov-nna" in wanted:
            gen = M.mmd_cov_1nna(preds, gts)
            values["mmd-cd"] = gen.mmd_cd
            values["cov"] = gen.cov
            values["1-nna"] = gen.nna
        for metric, value in values.items():
            rows.append((metric, family, value))
            per_metric.setdefault(metric, []).append(value)
    for metric, vals in per_metric.items():
        rows.append((metric, "average", float(np.mean(vals))))

    report = Path(args.report)
    if report.parent != Path("."):
        report.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_report(report, rows)
    F.metric_bars_figure(rows, report.with_suffix(".png"))
    for metric, category, value in rows:
        print(f"{metric}[{category}] = {value:.6g}")
    return 0


def cmd_complete(args) -> int:
    _, model, rc = _load_model(args.checkpoint)
    if not isinstance(model, CompletionNet):
        raise ConfigError("--checkpoint does not hold a completion model")
    cloud = read_cloud(args.input)
    mode = "vanilla" if args.vanilla else rc["completion_mode"]
    coarse, final, ids = model.complete(cloud.points, mode=mode)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_cloud(out_dir / "coarse.pcf", PointCloud(coarse))
    write_cloud(out_dir / "final.pcf", PointCloud(final, ids))
    F.cloud_views_figure(
        [("input (partial)", cloud.points, None),
         ("coarse", coarse, None),
         (f"final ({mode})", final, ids)],
        out_dir / "views.png",
    )
    print(f"wrote coarse ({len(coarse)} pts) and final ({len(final)} pts) to {out_dir}")
    return 0


def cmd_assign(args) -> int:
    _, model, rc = _load_model(args.checkpoint)
    reference = read_cloud(args.reference)
    families = rc["families"]
    names = D.PART_NAMES[families[0]] if len(families) == 1 else ()
    smap = S.assign_branches(reference, model, names, reference_name=str(args.reference))
    out = Path(args.out_map)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    S.save_map(out, smap)
    if smap.degenerate_branches:
        print(f"warning: degenerate branches {list(smap.degenerate_branches)}")
    print(f"wrote branch map for {smap.branches} branches to {out}")
    return 0


def cmd_segment(args) -> int:
    _, model, _ = _load_model(args.checkpoint)
    smap = S.load_map(args.map)
    cloud = read_cloud(args.input)
    labeled = S.segment(cloud.points, model, smap)
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_cloud(out, labeled)
    F.cloud_views_figure(
        [("input", cloud.points, cloud.labels), ("segmented", labeled.points, labeled.labels)],
        out.with_suffix(out.suffix + ".png"),
    )
    print(f"wrote labeled cloud ({len(labeled)} pts) to {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="attncloud",
                     description="attention-based point cloud generation, completion, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="run configuration file (key = value lines)")
            p.add_argument("--set", action="append", metavar="KEY=VALUE",
                           help="override a config key")
        p.add_argument("--threads", type=int, help="worker cap (1 = fully serial)")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or prediction files)")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--pred-dir", help="evaluate stored predictions instead of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", help=f"comma list from: {','.join(EVAL_METRICS)}")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--report", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("complete", help="complete one partial cloud")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="partial cloud file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--vanilla", action="store_true", help="skip the refinement stage")
    p.set_defaults(fn=cmd_complete)

    p = sub.add_parser("assign", help="label branches from a labeled reference shape")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reference", required=True, help="labeled reference cloud file")
    p.add_argument("--out-map", required=True)
    p.set_defaults(fn=cmd_assign)

    p = sub.add_parser("segment", help="segment a cloud through a branch map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--map", required=True, help="branch map file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="labeled output cloud file")
    p.set_defaults(fn=cmd_segment)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ContractError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
