"""End-to-end command-line checks: each subcommand on a tiny corpus,
wrapper-equals-library on fixed seeds, and the exit-code contract."""

from dataclasses import replace

import numpy as np
import pytest

from lidarseg.cli import main
from lidarseg.config import load_config
from lidarseg.experiment import REPORT_FILES, build_frame_table
from lidarseg.geometry import project
from lidarseg.labels import RULE_CLASSES
from lidarseg.network import load_checkpoint
from lidarseg.rules import autolabel_frame, read_annotations
from lidarseg.segmentation import segment
from lidarseg.synth import load_corpus
from lidarseg.training import build_labeled_set, pretrain

TINY_CFG = """
corpus.train_frames = 3
corpus.test_frames = 2
corpus.n_objects_min = 4
corpus.n_objects_max = 6
crop.out_size = 16
crop.window_rows = 16
crop.window_cols = 32
network.conv_channels = 3,3,6
network.fc_width = 12
pretrain.max_iterations = 10
pretrain.checkpoint_every = 5
finetune.max_iterations = 8
finetune.checkpoint_every = 4
experiment.subsets = 2
experiment.seeds = 0
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.cfg"
    cfg_path.write_text(TINY_CFG, encoding="utf-8")
    code = main(["synth", "--out", str(root / "corpus"),
                 "--config", str(cfg_path), "--seed", "7"])
    assert code == 0
    return root, cfg_path


class TestParser:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "synth" in capsys.readouterr().out

    def test_missing_required_flag_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["synth"])
        assert exc.value.code == 2

    def test_unknown_command_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestSynth:
    def test_writes_both_corpora(self, workspace):
        root, _ = workspace
        assert (root / "corpus" / "train" / "manifest.txt").exists()
        assert (root / "corpus" / "test" / "manifest.txt").exists()
        assert len(load_corpus(root / "corpus" / "train")) == 3
        assert len(load_corpus(root / "corpus" / "test")) == 2

    def test_same_seed_reproduces_bytes(self, workspace, tmp_path):
        root, cfg_path = workspace
        code = main(["synth", "--out", str(tmp_path / "again"),
                     "--config", str(cfg_path), "--seed", "7"])
        assert code == 0
        for rel in ("train/manifest.txt", "train/frame_00000.lseg",
                    "test/frame_00001.lseg"):
            assert (tmp_path / "again" / rel).read_bytes() == (
                root / "corpus" / rel
            ).read_bytes(), rel

    def test_seed_flag_changes_frames(self, workspace, tmp_path):
        root, cfg_path = workspace
        main(["synth", "--out", str(tmp_path / "other"),
              "--config", str(cfg_path), "--seed", "8"])
        a = (tmp_path / "other" / "train" / "frame_00000.lseg").read_bytes()
        b = (root / "corpus" / "train" / "frame_00000.lseg").read_bytes()
        assert a != b


class TestAutolabel:
    def test_matches_library_and_counts(self, workspace, capsys):
        root, cfg_path = workspace
        out = root / "auto.txt"
        code = main(["autolabel", str(root / "corpus" / "train"),
                     "--out", str(out), "--config", str(cfg_path)])
        assert code == 0
        printed = capsys.readouterr().out

        cfg = load_config(cfg_path)
        expected = []
        for cloud in load_corpus(root / "corpus" / "train"):
            img = project(cloud, cfg.sensor)
            segs = segment(img, cfg.segmentation)
            for seg_id, name in autolabel_frame(img, cloud, segs):
                expected.append((cloud.frame_id, seg_id, name))
        assert read_annotations(out) == expected
        assert f"total {len(expected)}" in printed
        for name in RULE_CLASSES:
            n = sum(1 for row in expected if row[2] == name)
            assert f"{name} {n}" in printed

    def test_missing_corpus_exits_three(self, workspace, capsys):
        root, _ = workspace
        code = main(["autolabel", str(root / "nowhere"),
                     "--out", str(root / "x.txt")])
        assert code == 3
        assert "data error" in capsys.readouterr().err


class TestPretrain:
    def test_wrapper_equals_library(self, workspace, capsys, tmp_path):
        root, cfg_path = workspace
        code = main(["pretrain", str(root / "corpus" / "train"),
                     "--out", str(root / "pre"), "--config", str(cfg_path),
                     "--seed", "3"])
        assert code == 0
        printed = capsys.readouterr().out
        ckpt_line = [l for l in printed.splitlines() if l.startswith("checkpoint ")]
        _, cli_params, _ = load_checkpoint(ckpt_line[0].split(" ", 1)[1])

        cfg = load_config(cfg_path)
        frames = load_corpus(root / "corpus" / "train")
        table = build_frame_table(frames, cfg.sensor, cfg.segmentation, cfg.crop)
        data = build_labeled_set(table.samples, table.rule_ids, RULE_CLASSES)
        sched = replace(cfg.pretrain_schedule, shuffle_seed=3)
        lib_params, _ = pretrain(
            data, cfg.network_config(n_classes=5), sched, seed=3,
            out_dir=tmp_path / "pre_lib",
            holdout_frac=cfg.pretrain_holdout_frac,
        )
        assert sorted(cli_params) == sorted(lib_params)
        for key in lib_params:
            assert np.array_equal(cli_params[key], lib_params[key]), key


class TestFinetune:
    def test_from_checkpoint_and_frozen_guard(self, workspace, capsys):
        root, cfg_path = workspace
        pre_ckpts = sorted((root / "pre").glob("ckpt_*.lckp"))
        assert pre_ckpts, "pretrain test must run first"
        code = main(["finetune", str(root / "corpus" / "train"),
                     "--out", str(root / "ft"), "--config", str(cfg_path),
                     "--init", str(pre_ckpts[-1]), "--frozen",
                     "--labels-per-class", "2", "--seed", "1"])
        assert code == 0
        printed = capsys.readouterr().out
        assert "trained on" in printed
        assert list((root / "ft").glob("ckpt_*.lckp"))

        code = main(["finetune", str(root / "corpus" / "train"),
                     "--out", str(root / "ft_bad"), "--config", str(cfg_path),
                     "--frozen"])
        assert code == 2
        assert "requires --init" in capsys.readouterr().err

    def test_random_init_path(self, workspace, capsys):
        root, cfg_path = workspace
        code = main(["finetune", str(root / "corpus" / "train"),
                     "--out", str(root / "ft_scratch"), "--config", str(cfg_path),
                     "--seed", "0"])
        assert code == 0
        assert "selected iteration" in capsys.readouterr().out


class TestEval:
    def test_five_class_checkpoint_table(self, workspace, capsys):
        root, cfg_path = workspace
        ckpt = sorted((root / "pre").glob("ckpt_*.lckp"))[-1]
        code = main(["eval", str(root / "corpus" / "test"),
                     "--ckpt", str(ckpt), "--config", str(cfg_path),
                     "--out", str(root / "eval.csv")])
        assert code == 0
        printed = capsys.readouterr().out
        for name in RULE_CLASSES:
            assert name in printed
        assert "mean" in printed
        header = (root / "eval.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == "class,precision,recall,f1"

    def test_missing_checkpoint_exits_three(self, workspace, capsys):
        root, cfg_path = workspace
        code = main(["eval", str(root / "corpus" / "test"),
                     "--ckpt", str(root / "missing.lckp"),
                     "--config", str(cfg_path)])
        assert code == 3


class TestExperiment:
    def test_tiny_grid_run(self, workspace, capsys):
        root, cfg_path = workspace
        code = main(["experiment", "--out", str(root / "exp"),
                     "--config", str(cfg_path)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "rule mean f1" in printed
        assert "subset 2:" in printed
        for name in REPORT_FILES:
            assert (root / "exp" / name).exists(), name
        assert (root / "exp" / "config.txt").read_text(encoding="utf-8") == TINY_CFG

    def test_bad_config_exits_two(self, workspace, capsys, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("corpus.train_frames = never\n", encoding="utf-8")
        code = main(["experiment", "--out", str(tmp_path / "exp"),
                     "--config", str(bad)])
        assert code == 2
        assert "config error" in capsys.readouterr().err
