"""Experiment driver: corpus -> pipeline -> pretrain -> fine-tune grid.

Reproduces the full protocol on synthetic corpora: rule-based scoring,
rule-pretrained network scoring, and a (subset size x init variant x seed)
fine-tuning grid, written out as text tables and CSVs plus a manifest that
ties every number to a run directory on disk.

Everything here is deterministic for a fixed config: corpora are seeded,
training streams are seeded per run, and report files carry no timestamps
or absolute paths, so identical configs give byte-identical reports.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .evaluation import (
    EvalReport,
    confusion,
    evaluate_params,
    f1_scores,
    merge_to_rule_classes,
    report_table,
)
from .geometry import PointCloud, SensorModel, project
from .labels import FINE_CLASSES, RULE_CLASSES, RULE_ID
from .network import NetworkConfig, init_params
from .rules import classify_rules, compute_features
from .samples import CropParams, Sample, extract_frame_samples
from .segmentation import SegmentationParams, segment
from .synth import generate_corpus, majority_vote_labels
from .training import (
    LabeledSet,
    build_labeled_set,
    finetune,
    pretrain,
    subset_per_class,
    train,
    selected_params,
)

VARIANTS = ("baseline", "pretrain", "pretrain-fix")


@dataclass(frozen=True)
class FrameTable:
    """Per-segment view of a corpus: one sample, rule label, and ground
    truth (segment majority vote) per segment, in frame order."""

    samples: list[Sample]
    rule_ids: np.ndarray  # 5-class auto-annotation
    fine_ids: np.ndarray  # 7-class ground truth
    n_frames: int

    def __len__(self) -> int:
        return len(self.samples)


def build_frame_table(
    frames: list[PointCloud],
    sensor: SensorModel,
    seg_params: SegmentationParams,
    crop: CropParams,
) -> FrameTable:
    samples: list[Sample] = []
    rule_ids: list[int] = []
    fine_ids: list[int] = []
    for cloud in frames:
        img = project(cloud, sensor)
        segs = segment(img, seg_params)
        votes = majority_vote_labels(img, cloud, segs)
        samples.extend(extract_frame_samples(img, cloud, segs, crop))
        for seg, vote in zip(segs, votes):
            feats = compute_features(seg, cloud, img)
            rule_ids.append(RULE_ID[classify_rules(feats)])
            fine_ids.append(int(vote))
    return FrameTable(
        samples=samples,
        rule_ids=np.asarray(rule_ids, dtype=np.int64),
        fine_ids=np.asarray(fine_ids, dtype=np.int64),
        n_frames=len(frames),
    )


@dataclass
class GridCell:
    variant: str
    subset: object  # int or "all"
    seed: int
    run_dir: str  # relative to the experiment out dir
    n_train: int = 0
    report: EvalReport | None = None
    selected_iteration: int = -1
    error: str = ""

    @property
    def label(self) -> str:
        return f"{self.variant}-{self.subset}"


@dataclass
class ExperimentReport:
    rule_report: EvalReport
    pretrain_reports: dict  # seed -> EvalReport (5-class, vs ground truth)
    cells: list[GridCell]
    subset_sizes: tuple
    seeds: tuple

    @property
    def failed(self) -> list[GridCell]:
        return [c for c in self.cells if c.error]

    def cell(self, variant: str, subset, seed: int) -> GridCell:
        for c in self.cells:
            if (c.variant, c.subset, c.seed) == (variant, subset, seed):
                return c
        raise KeyError((variant, subset, seed))

    def mean_f1(self, variant: str, subset) -> float:
        vals = [
            c.report.mean_f1
            for c in self.cells
            if c.variant == variant and c.subset == subset and c.report is not None
        ]
        return float(np.mean(vals)) if vals else float("nan")


def _fmt(x: float) -> str:
    return f"{x:.1f}"


def _log(verbose: bool, message: str) -> None:
    if verbose:
        print(message, flush=True)


def run_experiment(
    cfg: ExperimentConfig, out_dir, jobs: int = 1, verbose: bool = False
) -> ExperimentReport:
    """Run the whole protocol under out_dir and write report files.

    Grid cells run independently (optionally across jobs threads); a cell
    that raises is marked failed in the manifest instead of aborting the
    rest of the grid.
    """
    out_dir = Path(out_dir)
    (out_dir / "runs").mkdir(parents=True, exist_ok=True)

    _log(verbose, "generating corpora")
    train_frames = generate_corpus(cfg.corpus_spec(train=True))
    test_frames = generate_corpus(cfg.corpus_spec(train=False))
    _log(verbose, "extracting segments and samples")
    table_tr = build_frame_table(train_frames, cfg.sensor, cfg.segmentation, cfg.crop)
    table_te = build_frame_table(test_frames, cfg.sensor, cfg.segmentation, cfg.crop)

    test_rule_truth = merge_to_rule_classes(table_te.fine_ids)
    rule_report = f1_scores(
        confusion(table_te.rule_ids, test_rule_truth, RULE_CLASSES)
    )
    _log(verbose, f"rule classifier mean F1 {rule_report.mean_f1:.2f} "
                  f"on {len(table_te)} test segments")

    auto_set = build_labeled_set(table_tr.samples, table_tr.rule_ids, RULE_CLASSES)
    manual_set = build_labeled_set(table_tr.samples, table_tr.fine_ids, FINE_CLASSES)
    test5 = build_labeled_set(table_te.samples, test_rule_truth, RULE_CLASSES)
    test7 = build_labeled_set(table_te.samples, table_te.fine_ids, FINE_CLASSES)

    # stage one: a rule-pretrained network per seed
    pretrained = {}
    pretrain_reports = {}
    for seed in cfg.seeds:
        run_dir = f"runs/pretrain_s{seed}"
        sched = replace(cfg.pretrain_schedule, shuffle_seed=seed)
        select = test5 if cfg.select_on == "test" else None
        params, record = pretrain(
            auto_set,
            cfg.network_config(n_classes=5),
            sched,
            seed=seed,
            out_dir=out_dir / run_dir,
            holdout_frac=cfg.pretrain_holdout_frac,
            select_set=select,
        )
        pretrained[seed] = (params, record, run_dir)
        pretrain_reports[seed] = evaluate_params(
            params, test5.data, test5.labels, RULE_CLASSES
        )
        _log(verbose, f"pretrain seed {seed}: selected iteration "
                      f"{record.selected_iteration}, ground-truth mean F1 "
                      f"{pretrain_reports[seed].mean_f1:.2f}")

    cells = []
    for subset in cfg.subset_sizes:
        for variant in VARIANTS:
            if variant == "pretrain" and not cfg.run_free:
                continue
            if variant == "pretrain-fix" and not cfg.run_frozen:
                continue
            for seed in cfg.seeds:
                cells.append(
                    GridCell(
                        variant=variant,
                        subset=subset,
                        seed=seed,
                        run_dir=f"runs/{variant}_n{subset}_s{seed}",
                    )
                )

    def run_cell(cell: GridCell) -> None:
        if cell.subset == "all":
            data = manual_set
        else:
            data = subset_per_class(manual_set, int(cell.subset), seed=cell.seed)
        cell.n_train = len(data)
        sched = replace(cfg.finetune_schedule, shuffle_seed=cell.seed)
        select = test7 if cfg.select_on == "test" else data
        run_dir = out_dir / cell.run_dir
        if cell.variant == "baseline":
            net_cfg = cfg.network_config(n_classes=len(FINE_CLASSES))
            params = init_params(net_cfg, seed=cell.seed)
            record = train(
                params, data, sched, frozen_conv=False,
                cfg=net_cfg, out_dir=run_dir, select_set=select,
            )
            params = selected_params(record)
        else:
            theta_r = pretrained[cell.seed][0]
            frozen = cell.variant == "pretrain-fix"
            params, record = finetune(
                theta_r, data, sched, frozen_conv=frozen, seed=cell.seed,
                out_dir=run_dir, select_set=select,
            )
        cell.selected_iteration = record.selected_iteration
        cell.report = evaluate_params(params, test7.data, test7.labels, FINE_CLASSES)
        _log(verbose, f"{cell.label} seed {cell.seed}: mean F1 "
                      f"{cell.report.mean_f1:.2f} ({cell.n_train} train samples)")

    def guarded(cell: GridCell) -> None:
        try:
            run_cell(cell)
        except Exception as exc:  # cell failure must not sink the grid
            cell.error = f"{type(exc).__name__}: {exc}"
            _log(verbose, f"{cell.label} seed {cell.seed} FAILED: {cell.error}")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(guarded, cells))
    else:
        for cell in cells:
            guarded(cell)

    report = ExperimentReport(
        rule_report=rule_report,
        pretrain_reports=pretrain_reports,
        cells=cells,
        subset_sizes=cfg.subset_sizes,
        seeds=cfg.seeds,
    )
    _write_report_files(out_dir, cfg, report, pretrained, table_tr, table_te)
    return report


# ------------------------------------------------------------- report files


def _grid_variants(report: ExperimentReport):
    seen = []
    for cell in report.cells:
        if cell.variant not in seen:
            seen.append(cell.variant)
    return seen


def _report_text(report: ExperimentReport) -> str:
    lines = []
    lines.append("rule-based classifier, 5-class scoring "
                 "(bush and cyclist count as unknown)")
    lines.append(report_table(report.rule_report))
    lines.append("")
    lines.append("rule-pretrained network, 5-class scoring against ground truth")
    for seed in report.seeds:
        rep = report.pretrain_reports[seed]
        lines.append(f"seed {seed}  mean f1 {_fmt(rep.mean_f1)}")
    mean_pre = float(np.mean([r.mean_f1 for r in report.pretrain_reports.values()]))
    lines.append(f"mean over seeds {_fmt(mean_pre)}")
    lines.append("")
    lines.append("fine-tuned classifiers, 7-class scoring, "
                 "per-class F1 averaged over seeds")
    name_w = max(len(f"{v}-{s}") for v in _grid_variants(report)
                 for s in report.subset_sizes) + 2
    header = "classifier".ljust(name_w) + "".join(
        name.rjust(10) for name in FINE_CLASSES
    ) + "mean".rjust(10) + "n".rjust(8)
    lines.append(header)
    for subset in report.subset_sizes:
        for variant in _grid_variants(report):
            group = [c for c in report.cells
                     if c.variant == variant and c.subset == subset]
            ok = [c for c in group if c.report is not None]
            row = f"{variant}-{subset}".ljust(name_w)
            if not ok:
                lines.append(row + "  all seeds failed")
                continue
            per_class = np.mean([c.report.f1 for c in ok], axis=0)
            row += "".join(_fmt(v).rjust(10) for v in per_class)
            row += _fmt(float(np.mean([c.report.mean_f1 for c in ok]))).rjust(10)
            row += str(ok[0].n_train).rjust(8)
            if len(ok) < len(group):
                row += f"  ({len(group) - len(ok)} seed(s) failed)"
            lines.append(row)
    lines.append("")
    lines.append("mean F1 per seed")
    for subset in report.subset_sizes:
        for variant in _grid_variants(report):
            for cell in report.cells:
                if cell.variant != variant or cell.subset != subset:
                    continue
                val = "failed" if cell.report is None else _fmt(cell.report.mean_f1)
                lines.append(f"{cell.label} seed {cell.seed} {val}")
    return "\n".join(lines) + "\n"


def _cells_csv(report: ExperimentReport) -> str:
    rows = ["variant,subset,seed,class,precision,recall,f1"]
    for cell in report.cells:
        if cell.report is None:
            rows.append(f"{cell.variant},{cell.subset},{cell.seed},failed,,,")
            continue
        rep = cell.report
        for i, name in enumerate(rep.class_names):
            rows.append(
                f"{cell.variant},{cell.subset},{cell.seed},{name},"
                f"{rep.precision[i]:.6f},{rep.recall[i]:.6f},{rep.f1[i]:.6f}"
            )
        rows.append(f"{cell.variant},{cell.subset},{cell.seed},mean,,,{rep.mean_f1:.6f}")
    return "\n".join(rows) + "\n"


def _subset_series_csv(report: ExperimentReport) -> str:
    variants = _grid_variants(report)
    rows = ["subset," + ",".join(variants)]
    for subset in report.subset_sizes:
        vals = []
        for variant in variants:
            mean = report.mean_f1(variant, subset)
            vals.append("" if np.isnan(mean) else f"{mean:.6f}")
        rows.append(f"{subset}," + ",".join(vals))
    return "\n".join(rows) + "\n"


def _pretrain_csv(report: ExperimentReport) -> str:
    rows = ["seed,class,precision,recall,f1"]
    for seed in report.seeds:
        rep = report.pretrain_reports[seed]
        for i, name in enumerate(rep.class_names):
            rows.append(
                f"{seed},{name},{rep.precision[i]:.6f},"
                f"{rep.recall[i]:.6f},{rep.f1[i]:.6f}"
            )
        rows.append(f"{seed},mean,,,{rep.mean_f1:.6f}")
    return "\n".join(rows) + "\n"


def _manifest_text(cfg, report, pretrained, table_tr, table_te) -> str:
    lines = [
        f"train corpus frames {cfg.train_frames} seed {cfg.train_seed} "
        f"segments {len(table_tr)}",
        f"test corpus frames {cfg.test_frames} seed {cfg.test_seed} "
        f"segments {len(table_te)}",
        f"seeds {','.join(str(s) for s in cfg.seeds)}",
        f"subsets {','.join(str(s) for s in cfg.subset_sizes)}",
        f"select_on {cfg.select_on}",
    ]
    for seed in report.seeds:
        _, record, run_dir = pretrained[seed]
        rep = report.pretrain_reports[seed]
        lines.append(
            f"run pretrain seed {seed} dir {run_dir} "
            f"selected {record.selected_iteration} f1 {rep.mean_f1:.6f}"
        )
    for cell in report.cells:
        if cell.error:
            lines.append(
                f"run {cell.variant} subset {cell.subset} seed {cell.seed} "
                f"dir {cell.run_dir} FAILED {cell.error}"
            )
        else:
            lines.append(
                f"run {cell.variant} subset {cell.subset} seed {cell.seed} "
                f"dir {cell.run_dir} selected {cell.selected_iteration} "
                f"f1 {cell.report.mean_f1:.6f} n_train {cell.n_train}"
            )
    return "\n".join(lines) + "\n"


def _write_report_files(out_dir, cfg, report, pretrained, table_tr, table_te):
    (out_dir / "report.txt").write_text(_report_text(report), encoding="utf-8")
    (out_dir / "cells.csv").write_text(_cells_csv(report), encoding="utf-8")
    (out_dir / "mean_f1_by_subset.csv").write_text(
        _subset_series_csv(report), encoding="utf-8"
    )
    (out_dir / "pretrain.csv").write_text(_pretrain_csv(report), encoding="utf-8")
    from .evaluation import confusion_csv, report_csv

    (out_dir / "rules.csv").write_text(
        report_csv(report.rule_report)
        + confusion_csv(report.rule_report.confusion),
        encoding="utf-8",
    )
    (out_dir / "manifest.txt").write_text(
        _manifest_text(cfg, report, pretrained, table_tr, table_te),
        encoding="utf-8",
    )


REPORT_FILES = (
    "report.txt",
    "cells.csv",
    "mean_f1_by_subset.csv",
    "pretrain.csv",
    "rules.csv",
    "manifest.txt",
)
