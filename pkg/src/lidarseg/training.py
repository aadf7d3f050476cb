"""Training runs: minibatch ADAM loop, checkpoint cadence, F1 selection.

A run writes everything it knows into its output directory: numbered
checkpoint files (parameters plus optimizer state) and a run.txt log with
one line per iteration. Losses are logged with full float64 round-trip
precision and the minibatch stream is a pure function of (shuffle seed,
iteration), so a run resumed from its last checkpoint continues bit-for-bit
identically to one that never stopped.

The two-stage workflow lives here as well: pretraining on rule-labeled
5-class data, then fine-tuning a transferred copy (conv stack kept, head
redrawn) on 7-class data, optionally with the conv stack frozen.
"""

from __future__ import annotations

import math
import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericAbort
from .evaluation import EvalReport, evaluate_params
from .labels import RULE_CLASSES
from .network import (
    NetworkConfig,
    adam_step,
    init_adam,
    init_params,
    load_checkpoint,
    loss_and_grad,
    onehot,
    replace_head,
    save_checkpoint,
)

_CONV_PLANES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b")
_WINDOW = 100  # iterations averaged for the stop rule


@dataclass(frozen=True)
class LabeledSet:
    """Sample tensors with integer labels over a declared class list."""

    data: np.ndarray  # (N, S, S, C) float64
    labels: np.ndarray  # (N,) int64
    class_names: tuple[str, ...]

    def __post_init__(self):
        if self.data.ndim != 4 or len(self.data) != len(self.labels):
            raise ValueError("data must be (N, S, S, C) with one label per sample")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= len(self.class_names)
        ):
            raise ValueError("labels outside the declared class list")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices) -> "LabeledSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.data[idx], self.labels[idx], self.class_names)


def build_labeled_set(samples, labels, class_names) -> LabeledSet:
    """Stack extracted Sample objects into one training tensor."""
    if len(samples) != len(labels):
        raise ValueError("one label per sample required")
    if not samples:
        size = 8
        return LabeledSet(
            np.zeros((0, size, size, 3)), np.zeros(0, dtype=np.int64), tuple(class_names)
        )
    data = np.stack([s.data for s in samples]).astype(np.float64)
    return LabeledSet(data, np.asarray(labels, dtype=np.int64), tuple(class_names))


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 2
    lr: float = 1e-4
    checkpoint_every: int = 100
    loss_stop: float = 1e-4
    max_iterations: int = 5000
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("batch_size and checkpoint_every must be positive")
        if self.lr <= 0 or self.loss_stop <= 0:
            raise ValueError("lr and loss_stop must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass
class RunRecord:
    """What one training run did: per-iteration rows (iteration, loss,
    checkpoint file or None), checkpoint F1 scores on the selection set,
    and the winning checkpoint."""

    rows: list = field(default_factory=list)
    checkpoint_scores: list = field(default_factory=list)
    selected_path: str = ""
    selected_iteration: int = -1
    selected_f1: float = float("nan")
    report: EvalReport | None = None
    aborted: bool = False
    out_dir: Path | None = None

    def __post_init__(self):
        its = [r[0] for r in self.rows]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("row iterations must be strictly increasing")


def batch_indices(n: int, sched: TrainSchedule, iteration: int) -> np.ndarray:
    """Minibatch for a 1-based iteration: seeded per-epoch shuffle, then
    consecutive slices. Pure, so any iteration is reconstructible."""
    per_epoch = math.ceil(n / sched.batch_size)
    epoch, slot = divmod(iteration - 1, per_epoch)
    perm = np.random.default_rng([sched.shuffle_seed, epoch]).permutation(n)
    lo = slot * sched.batch_size
    return perm[lo : lo + sched.batch_size]


def _checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:06d}.lckp"


def _zero_conv(grads) -> None:
    for name in _CONV_PLANES:
        grads[name] = np.zeros_like(grads[name])


def write_run_record(record: RunRecord) -> Path:
    path = Path(record.out_dir) / "run.txt"
    lines = []
    for iteration, loss, ckpt in record.rows:
        lines.append(f"{iteration} {loss!r} {ckpt or '-'}")
    for iteration, f1 in record.checkpoint_scores:
        lines.append(f"score {iteration} {_checkpoint_name(iteration)} {f1!r}")
    if record.selected_iteration >= 0:
        lines.append(
            f"selected {record.selected_path} {record.selected_iteration} "
            f"{record.selected_f1!r}"
        )
    if record.aborted:
        lines.append("aborted")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_run_record(out_dir) -> RunRecord:
    path = Path(out_dir) / "run.txt"
    record = RunRecord(out_dir=Path(out_dir))
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"{path}: missing run record") from exc
    for line_no, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "score":
            record.checkpoint_scores.append((int(parts[1]), float(parts[3])))
        elif parts[0] == "selected":
            record.selected_path = parts[1]
            record.selected_iteration = int(parts[2])
            record.selected_f1 = float(parts[3])
        elif parts[0] == "aborted":
            record.aborted = True
        else:
            if len(parts) != 3:
                raise DataError(f"{path}:{line_no}: bad row")
            ckpt = None if parts[2] == "-" else parts[2]
            record.rows.append((int(parts[0]), float(parts[1]), ckpt))
    return record


def train(
    params,
    data: LabeledSet,
    sched: TrainSchedule,
    frozen_conv: bool = False,
    *,
    cfg: NetworkConfig,
    out_dir,
    select_set: LabeledSet | None = None,
    adam=None,
    start_iteration: int = 0,
    prior_rows=None,
) -> RunRecord:
    """Run the minibatch loop and select the best checkpoint by mean F1.

    Checkpoints are written at iteration 0, every checkpoint_every
    iterations, and at the final iteration. Training stops when the
    100-iteration running mean of the loss falls below loss_stop, when
    max_iterations is reached, or on a non-finite loss (abort: the last
    checkpoint stays, nothing new is written).
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    if params["head_b"].size != data.n_classes:
        raise ValueError(
            f"network head width {params['head_b'].size} != {data.n_classes} classes"
        )
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    if adam is None:
        adam = init_adam(params, lr=sched.lr)

    labels_1h = onehot(data.labels, data.n_classes)
    rows = list(prior_rows) if prior_rows else []
    window = deque((loss for it, loss, _ in rows if it >= 1), maxlen=_WINDOW)
    aborted = False

    if start_iteration == 0:
        first = batch_indices(len(data), sched, 1)
        probe, _ = loss_and_grad(params, data.data[first], labels_1h[first])
        name = _checkpoint_name(0)
        save_checkpoint(out_dir / name, cfg, params, adam=adam)
        rows.append((0, probe, name))

    it = start_iteration
    while it < sched.max_iterations:
        if len(window) == _WINDOW and sum(window) / _WINDOW < sched.loss_stop:
            break
        it += 1
        idx = batch_indices(len(data), sched, it)
        loss, grads = loss_and_grad(params, data.data[idx], labels_1h[idx])
        if not math.isfinite(loss):
            rows.append((it, loss, None))
            aborted = True
            break
        if frozen_conv:
            _zero_conv(grads)
        try:
            params, adam = adam_step(params, grads, adam)
        except NumericAbort:
            rows.append((it, loss, None))
            aborted = True
            break
        name = None
        if it % sched.checkpoint_every == 0:
            name = _checkpoint_name(it)
            save_checkpoint(out_dir / name, cfg, params, adam=adam)
        window.append(loss)
        rows.append((it, loss, name))

    if not aborted and rows and rows[-1][0] >= 1 and rows[-1][2] is None:
        final_it, final_loss, _ = rows[-1]
        name = _checkpoint_name(final_it)
        save_checkpoint(out_dir / name, cfg, params, adam=adam)
        rows[-1] = (final_it, final_loss, name)

    record = RunRecord(rows=rows, aborted=aborted, out_dir=out_dir)
    _select_checkpoint(record, data if select_set is None else select_set)
    write_run_record(record)
    return record


def _select_checkpoint(record: RunRecord, select_set: LabeledSet) -> None:
    """Score every saved checkpoint; highest mean F1 wins, earliest on ties."""
    best = None
    for iteration, _, ckpt in record.rows:
        if ckpt is None:
            continue
        _, params, _ = load_checkpoint(Path(record.out_dir) / ckpt)
        rep = evaluate_params(
            params, select_set.data, select_set.labels, select_set.class_names
        )
        record.checkpoint_scores.append((iteration, rep.mean_f1))
        if best is None or rep.mean_f1 > best[2]:
            best = (iteration, ckpt, rep.mean_f1, rep)
    if best is not None:
        record.selected_iteration, record.selected_path = best[0], best[1]
        record.selected_f1, record.report = best[2], best[3]


def resume_train(
    out_dir,
    data: LabeledSet,
    sched: TrainSchedule,
    frozen_conv: bool = False,
    select_set: LabeledSet | None = None,
) -> RunRecord:
    """Continue an interrupted run from its newest checkpoint.

    Rows after that checkpoint are discarded and regenerated; because the
    batch stream is pure and the optimizer state rides in the checkpoint,
    the continuation matches an uninterrupted run bit for bit.
    """
    out_dir = Path(out_dir)
    ckpts = sorted(out_dir.glob("ckpt_*.lckp"))
    if not ckpts:
        raise DataError(f"{out_dir}: no checkpoints to resume from")
    newest = ckpts[-1]
    cfg, params, adam = load_checkpoint(newest)
    if adam is None:
        raise DataError(f"{newest}: checkpoint has no optimizer state")
    prior = read_run_record(out_dir)
    kept = [row for row in prior.rows if row[0] <= adam.t]
    return train(
        params,
        data,
        sched,
        frozen_conv,
        cfg=cfg,
        out_dir=out_dir,
        select_set=select_set,
        adam=adam,
        start_iteration=adam.t,
        prior_rows=kept,
    )


def selected_params(record: RunRecord):
    """Load the parameters of the run's winning checkpoint."""
    if not record.selected_path:
        raise DataError("run has no selected checkpoint")
    _, params, _ = load_checkpoint(Path(record.out_dir) / record.selected_path)
    return params


# ------------------------------------------------------------ two stages


def pretrain(
    data_auto: LabeledSet,
    cfg: NetworkConfig,
    sched: TrainSchedule,
    seed: int,
    out_dir,
    holdout_frac: float = 0.1,
    select_set: LabeledSet | None = None,
):
    """Stage one: train from scratch on rule-labeled 5-class data.

    By default a seeded fraction of the auto-labeled set is held out and
    used only to pick the best checkpoint; passing select_set scores the
    checkpoints on that set instead and trains on all of data_auto.
    Returns (selected params, run record).
    """
    if len(data_auto) == 0:
        raise ValueError("pretraining data is empty")
    if tuple(data_auto.class_names) != RULE_CLASSES:
        raise ValueError("pretraining expects the 5 rule classes")
    if select_set is not None:
        fit = data_auto
    else:
        if not 0.0 < holdout_frac < 1.0:
            raise ValueError("holdout_frac must be in (0, 1)")
        perm = np.random.default_rng([seed, 1]).permutation(len(data_auto))
        n_hold = max(1, int(round(holdout_frac * len(data_auto))))
        if n_hold >= len(data_auto):
            raise ValueError("holdout would consume the whole set")
        select_set = data_auto.subset(perm[:n_hold])
        fit = data_auto.subset(perm[n_hold:])
    params = init_params(cfg, seed=seed)
    record = train(
        params, fit, sched, frozen_conv=False, cfg=cfg, out_dir=out_dir,
        select_set=select_set,
    )
    return selected_params(record), record


def finetune(
    theta_r,
    data_manual: LabeledSet,
    sched: TrainSchedule,
    frozen_conv: bool,
    seed: int,
    out_dir,
    select_set: LabeledSet | None = None,
):
    """Stage two: transfer the conv stack, redraw the head, train on the
    fine class set. Returns (selected params, run record)."""
    if len(data_manual) == 0:
        raise ValueError("fine-tuning data is empty")
    start = replace_head(theta_r, data_manual.n_classes, seed=seed)
    cfg = _config_for(start, data_manual)
    record = train(
        start, data_manual, sched, frozen_conv=frozen_conv, cfg=cfg,
        out_dir=out_dir, select_set=select_set,
    )
    return selected_params(record), record


def _config_for(params, data: LabeledSet) -> NetworkConfig:
    size = data.data.shape[1]
    return NetworkConfig(
        input_size=size,
        conv_channels=(
            params["conv1_w"].shape[3],
            params["conv2_w"].shape[3],
            params["conv3_w"].shape[3],
        ),
        fc_width=params["fc1_b"].size,
        n_classes=params["head_b"].size,
        kernel_size=params["conv1_w"].shape[0],
        in_channels=params["conv1_w"].shape[2],
    )


def subset_per_class(data: LabeledSet, n_per_class: int, seed: int) -> LabeledSet:
    """Seeded per-class subsample without replacement; classes with fewer
    than n_per_class samples keep everything. Original order preserved."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    keep = []
    for cls in range(data.n_classes):
        idx = np.flatnonzero(data.labels == cls)
        if idx.size > n_per_class:
            rng = np.random.default_rng([seed, cls])
            idx = idx[rng.choice(idx.size, size=n_per_class, replace=False)]
        keep.append(idx)
    merged = np.sort(np.concatenate(keep))
    return data.subset(merged)
