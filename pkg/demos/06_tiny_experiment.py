"""Run the full experiment grid at toy scale: synthesize corpora, pretrain on
rule labels, fine-tune free and frozen against a scratch baseline, and print
the report. Everything lands in ./tiny_experiment_out. Takes ~30 s.

The real protocol uses the config defaults (200 train frames, subsets
100/400/1600/all, 5 seeds); this shrinks every axis to keep the demo quick.
"""

from pathlib import Path

from lidarseg.config import config_from_text
from lidarseg.experiment import run_experiment

CONFIG = """
corpus.train_frames = 8
corpus.test_frames = 4
corpus.n_objects_min = 5
corpus.n_objects_max = 8
crop.out_size = 16
crop.window_rows = 16
crop.window_cols = 32
network.conv_channels = 4,4,8
network.fc_width = 16
pretrain.max_iterations = 60
pretrain.checkpoint_every = 20
finetune.max_iterations = 40
finetune.checkpoint_every = 10
experiment.subsets = 5, all
experiment.seeds = 0, 1
"""

out = Path(__file__).resolve().parent / "tiny_experiment_out"
report = run_experiment(config_from_text(CONFIG), out, verbose=True)

print(f"\nrules mean F1: {report.rule_report.mean_f1:.2f}")
print("(network scores below are noise at this toy scale; the point is the grid)")
for subset in report.subset_sizes:
    row = ", ".join(
        f"{v} {report.mean_f1(v, subset):.2f}"
        for v in ("baseline", "pretrain", "pretrain-fix")
    )
    print(f"subset {subset}: {row}")
print(f"\nreport files in {out}:")
for p in sorted(out.glob("*.csv")) + [out / "report.txt"]:
    print(f"  {p.name}")
