"""Command-line interface wrapping the library pipeline.

Subcommands: synth, autolabel, pretrain, finetune, eval, experiment.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
abort during training, 1 experiment grid with failed cells.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, NumericAbort
from .evaluation import evaluate_params, merge_to_rule_classes, report_csv, report_table
from .experiment import build_frame_table, run_experiment
from .labels import FINE_CLASSES, RULE_CLASSES
from .network import init_params, load_checkpoint
from .rules import write_annotations
from .synth import generate_corpus, load_corpus, save_corpus
from .training import (
    build_labeled_set,
    finetune,
    pretrain,
    selected_params,
    subset_per_class,
    train,
)


def _config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return ExperimentConfig()


def _table(cfg: ExperimentConfig, corpus_dir):
    frames = load_corpus(corpus_dir)
    return build_frame_table(frames, cfg.sensor, cfg.segmentation, cfg.crop)


def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, train_seed=args.seed, test_seed=args.seed + 1)
    out = Path(args.out)
    for name, train_flag in (("train", True), ("test", False)):
        spec = cfg.corpus_spec(train=train_flag)
        frames = generate_corpus(spec)
        save_corpus(out / name, spec, frames)
        if args.verbose:
            total = sum(len(f.xyz) for f in frames)
            print(f"{name}: {len(frames)} frames, {total} points -> {out / name}")
    return 0


def cmd_autolabel(args) -> int:
    cfg = _config(args)
    frames = load_corpus(args.corpus)
    rows = []
    counts: Counter = Counter()
    from .geometry import project
    from .rules import autolabel_frame
    from .segmentation import segment

    for cloud in frames:
        img = project(cloud, cfg.sensor)
        segs = segment(img, cfg.segmentation)
        for seg_id, name in autolabel_frame(img, cloud, segs):
            rows.append((cloud.frame_id, seg_id, name))
            counts[name] += 1
    write_annotations(args.out, rows)
    for name in RULE_CLASSES:
        print(f"{name} {counts.get(name, 0)}")
    print(f"total {len(rows)}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    table = _table(cfg, args.corpus)
    data = build_labeled_set(table.samples, table.rule_ids, RULE_CLASSES)
    seed = args.seed if args.seed is not None else 0
    sched = replace(cfg.pretrain_schedule, shuffle_seed=seed)
    params, record = pretrain(
        data, cfg.network_config(n_classes=5), sched, seed=seed, out_dir=args.out,
        holdout_frac=cfg.pretrain_holdout_frac,
    )
    print(f"selected iteration {record.selected_iteration} "
          f"holdout mean f1 {record.selected_f1:.2f}")
    print(f"checkpoint {Path(args.out) / record.selected_path}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _config(args)
    table = _table(cfg, args.corpus)
    data = build_labeled_set(table.samples, table.fine_ids, FINE_CLASSES)
    seed = args.seed if args.seed is not None else 0
    if args.labels_per_class > 0:
        data = subset_per_class(data, args.labels_per_class, seed=seed)
    sched = replace(cfg.finetune_schedule, shuffle_seed=seed)
    if args.init:
        _, theta_r, _ = load_checkpoint(args.init)
        params, record = finetune(
            theta_r, data, sched, frozen_conv=args.frozen, seed=seed,
            out_dir=args.out,
        )
    else:
        if args.frozen:
            raise ConfigError("--frozen requires --init (nothing to freeze)")
        net_cfg = cfg.network_config(n_classes=len(FINE_CLASSES))
        params = init_params(net_cfg, seed=seed)
        record = train(
            params, data, sched, frozen_conv=False, cfg=net_cfg,
            out_dir=args.out, select_set=data,
        )
    print(f"trained on {len(data)} samples; selected iteration "
          f"{record.selected_iteration} mean f1 {record.selected_f1:.2f}")
    print(f"checkpoint {Path(args.out) / record.selected_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    net_cfg, params, _ = load_checkpoint(args.ckpt)
    table = _table(cfg, args.corpus)
    if net_cfg.n_classes == len(RULE_CLASSES):
        names = RULE_CLASSES
        truth = merge_to_rule_classes(table.fine_ids)
    elif net_cfg.n_classes == len(FINE_CLASSES):
        names = FINE_CLASSES
        truth = table.fine_ids
    else:
        raise DataError(f"checkpoint has unsupported class count {net_cfg.n_classes}")
    data = np.stack([s.data for s in table.samples]) if table.samples else \
        np.zeros((0, cfg.crop.out_size, cfg.crop.out_size, 3))
    rep = evaluate_params(params, data, truth, names)
    print(report_table(rep))
    if args.out:
        Path(args.out).write_text(report_csv(rep), encoding="utf-8")
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        # echo the exact config for provenance
        (out / "config.txt").write_text(
            Path(args.config).read_text(encoding="utf-8"), encoding="utf-8"
        )
    report = run_experiment(cfg, out, jobs=args.jobs, verbose=args.verbose)
    print(f"rule mean f1 {report.rule_report.mean_f1:.2f}")
    pre = [r.mean_f1 for r in report.pretrain_reports.values()]
    print(f"pretrained mean f1 {float(np.mean(pre)):.2f} over {len(pre)} seeds")
    for subset in report.subset_sizes:
        parts = []
        for variant in ("baseline", "pretrain", "pretrain-fix"):
            mean = report.mean_f1(variant, subset)
            if not np.isnan(mean):
                parts.append(f"{variant} {mean:.2f}")
        print(f"subset {subset}: " + "  ".join(parts))
    if report.failed:
        print(f"{len(report.failed)} grid cell(s) failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarseg",
        description="Rule-pretrained LiDAR segment classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=False, jobs=False):
        if config:
            p.add_argument("--config", help="flat config file (section.key = value)")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if jobs:
            p.add_argument("--jobs", type=int, default=1,
                           help="concurrent grid cells")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("synth", help="generate train/test corpora")
    p.add_argument("--out", required=True, help="output directory")
    common(p, seed=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("autolabel", help="segment a corpus and write rule labels")
    p.add_argument("corpus", help="corpus directory (manifest.txt inside)")
    p.add_argument("--out", required=True, help="annotation file to write")
    common(p)
    p.set_defaults(func=cmd_autolabel)

    p = sub.add_parser("pretrain", help="train the 5-class network on rule labels")
    p.add_argument("corpus", help="training corpus directory")
    p.add_argument("--out", required=True, help="run directory")
    common(p, seed=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the 7-class network on ground truth")
    p.add_argument("corpus", help="labeled corpus directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--init", help="checkpoint to transfer conv layers from")
    p.add_argument("--frozen", action="store_true", help="freeze conv layers")
    p.add_argument("--labels-per-class", type=int, default=0,
                   help="cap per-class training labels (0 = use all)")
    common(p, seed=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("corpus", help="evaluation corpus directory")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", help="also write per-class CSV here")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the full protocol grid")
    p.add_argument("--out", required=True, help="experiment output directory")
    common(p, jobs=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"invalid value: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
