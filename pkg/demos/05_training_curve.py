"""Pretrain a small network on rule labels for a handful of iterations and
watch the loss fall and the checkpoint scores move. Runs in ~20 s."""

import tempfile
from pathlib import Path

from lidarseg.config import ExperimentConfig
from lidarseg.experiment import build_frame_table
from lidarseg.labels import RULE_CLASSES
from lidarseg.network import NetworkConfig
from lidarseg.synth import CorpusSpec, generate_corpus
from lidarseg.training import TrainSchedule, build_labeled_set, pretrain

cfg = ExperimentConfig()
frames = generate_corpus(CorpusSpec(n_frames=12, seed=42))
table = build_frame_table(frames, cfg.sensor, cfg.segmentation, cfg.crop)
data = build_labeled_set(table.samples, table.rule_ids, RULE_CLASSES)
print(f"{len(data)} rule-labeled samples from {table.n_frames} frames")

# small net + short schedule, just to see the curve move
net = NetworkConfig(input_size=cfg.crop.out_size, conv_channels=(8, 8, 16),
                    fc_width=32, n_classes=5)
sched = TrainSchedule(max_iterations=120, checkpoint_every=30, lr=2e-3)

with tempfile.TemporaryDirectory() as tmp:
    params, record = pretrain(data, net, sched, seed=0, out_dir=Path(tmp) / "run")
    losses = [loss for _, loss, _ in record.rows]
    for i in range(0, len(losses), 15):
        bar = "#" * int(40 * losses[i] / losses[0])
        print(f"iter {i + 1:4d} loss {losses[i]:.4f} {bar}")
    print("\ncheckpoint holdout scores:")
    for iteration, f1 in record.checkpoint_scores:
        print(f"  iter {iteration:4d} mean F1 {f1:.2f}")
    print(f"selected iteration {record.selected_iteration} "
          f"(holdout mean F1 {record.selected_f1:.2f})")
