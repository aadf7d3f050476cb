"""Training loop behavior: cadence, stopping, resume, transfer, subsetting."""

import numpy as np
import pytest

from lidarseg.errors import DataError
from lidarseg.labels import FINE_CLASSES, RULE_CLASSES
from lidarseg.network import NetworkConfig, init_params, load_checkpoint
from lidarseg.training import (
    LabeledSet,
    RunRecord,
    TrainSchedule,
    batch_indices,
    build_labeled_set,
    finetune,
    pretrain,
    read_run_record,
    resume_train,
    selected_params,
    subset_per_class,
    train,
    write_run_record,
)
from lidarseg.evaluation import evaluate_params

TINY = NetworkConfig(input_size=8, conv_channels=(2, 2, 2), fc_width=4, n_classes=5)
CONV = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b")
FC = ("fc1_w", "fc1_b", "fc2_w", "fc2_b", "head_w", "head_b")


def _dataset(n=12, k=5, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, k, size=n)
    data = rng.uniform(0.0, 1.0, size=(n, 8, 8, 3))
    for i, lab in enumerate(labels):
        # weak class signal so short runs still have something to learn
        data[i, :, :, 0] = np.clip(0.2 * data[i, :, :, 0] + lab / k, 0.0, 1.0)
    names = RULE_CLASSES if k == 5 else FINE_CLASSES
    return LabeledSet(data, labels, names)


def _sched(**kw):
    base = dict(batch_size=2, lr=1e-3, checkpoint_every=10, loss_stop=1e-9,
                max_iterations=20, shuffle_seed=0)
    base.update(kw)
    return TrainSchedule(**base)


class TestTypes:
    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            TrainSchedule(batch_size=0)
        with pytest.raises(ValueError):
            TrainSchedule(lr=0.0)
        with pytest.raises(ValueError):
            TrainSchedule(checkpoint_every=0)
        with pytest.raises(ValueError):
            TrainSchedule(max_iterations=-1)
        TrainSchedule(max_iterations=0)  # explicitly allowed

    def test_labeled_set_validation(self):
        data = np.zeros((3, 8, 8, 3))
        with pytest.raises(ValueError):
            LabeledSet(data, np.zeros(2, dtype=np.int64), RULE_CLASSES)
        with pytest.raises(ValueError):
            LabeledSet(data, np.array([0, 1, 5]), RULE_CLASSES)
        ds = LabeledSet(data, np.array([0, 1, 4]), RULE_CLASSES)
        assert len(ds.subset([2, 0])) == 2

    def test_run_record_monotone_rows(self):
        with pytest.raises(ValueError):
            RunRecord(rows=[(0, 1.0, None), (0, 0.5, None)])


class TestBatchStream:
    def test_pure_and_within_bounds(self):
        sched = _sched(batch_size=3, shuffle_seed=5)
        a = batch_indices(10, sched, 7)
        b = batch_indices(10, sched, 7)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0 and a.max() < 10

    def test_epoch_covers_every_sample(self):
        sched = _sched(batch_size=3, shuffle_seed=1)
        seen = np.concatenate([batch_indices(10, sched, it) for it in range(1, 5)])
        assert sorted(seen.tolist()) == list(range(10))

    def test_epochs_reshuffle(self):
        sched = _sched(batch_size=10, shuffle_seed=2)
        first = batch_indices(10, sched, 1)
        second = batch_indices(10, sched, 2)
        assert not np.array_equal(first, second)
        assert sorted(second.tolist()) == list(range(10))


class TestTrainLoop:
    def test_zero_iterations(self, tmp_path):
        data = _dataset()
        params = init_params(TINY, seed=0)
        rec = train(params, data, _sched(max_iterations=0), cfg=TINY, out_dir=tmp_path)
        assert len(rec.rows) == 1
        it, loss, ckpt = rec.rows[0]
        assert it == 0 and np.isfinite(loss) and ckpt == "ckpt_000000.lckp"
        assert (tmp_path / "ckpt_000000.lckp").exists()
        assert rec.selected_iteration == 0
        assert (tmp_path / "run.txt").exists()

    def test_frozen_conv_constant(self, tmp_path):
        data = _dataset()
        params = init_params(TINY, seed=1)
        before = {k: params[k].copy() for k in params}
        rec = train(params, data, _sched(max_iterations=30), frozen_conv=True,
                    cfg=TINY, out_dir=tmp_path)
        final_it = rec.rows[-1][0]
        _, after, _ = load_checkpoint(tmp_path / f"ckpt_{final_it:06d}.lckp")
        for name in CONV:
            np.testing.assert_array_equal(after[name], before[name])
        assert any(np.any(after[name] != before[name]) for name in FC)

    def test_overfits_single_sample(self, tmp_path):
        data = _dataset(n=1)
        params = init_params(TINY, seed=2)
        sched = _sched(lr=1e-2, max_iterations=200, checkpoint_every=100)
        rec = train(params, data, sched, cfg=TINY, out_dir=tmp_path)
        losses = [loss for it, loss, _ in rec.rows if it >= 1]
        assert losses[-1] < 0.01
        assert losses[-1] < losses[0]

    def test_checkpoint_cadence_and_selection(self, tmp_path):
        data = _dataset(n=10, seed=3)
        params = init_params(TINY, seed=3)
        rec = train(params, data, _sched(checkpoint_every=10, max_iterations=25),
                    cfg=TINY, out_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.glob("ckpt_*.lckp"))
        assert names == ["ckpt_000000.lckp", "ckpt_000010.lckp",
                         "ckpt_000020.lckp", "ckpt_000025.lckp"]
        # exhaustive re-check: the recorded winner has the max mean F1
        best_f1, best_it = -1.0, None
        for it, _, ckpt in rec.rows:
            if ckpt is None:
                continue
            _, p, _ = load_checkpoint(tmp_path / ckpt)
            f1 = evaluate_params(p, data.data, data.labels, data.class_names).mean_f1
            if f1 > best_f1:
                best_f1, best_it = f1, it
        assert rec.selected_iteration == best_it
        assert rec.selected_f1 == pytest.approx(best_f1)
        assert dict(rec.checkpoint_scores)[rec.selected_iteration] == rec.selected_f1

    def test_loss_stop_halts_early(self, tmp_path):
        data = _dataset(n=1)
        params = init_params(TINY, seed=4)
        # overfit quickly, then the 100-iteration window mean crosses the stop
        sched = _sched(lr=5e-2, loss_stop=1e-3, max_iterations=2000,
                       checkpoint_every=500)
        rec = train(params, data, sched, cfg=TINY, out_dir=tmp_path)
        assert rec.rows[-1][0] < 2000
        tail = [loss for it, loss, _ in rec.rows[-100:]]
        assert sum(tail) / len(tail) < 1e-3

    def test_empty_data_and_head_mismatch(self, tmp_path):
        params = init_params(TINY, seed=0)
        empty = LabeledSet(np.zeros((0, 8, 8, 3)), np.zeros(0, dtype=np.int64), RULE_CLASSES)
        with pytest.raises(ValueError):
            train(params, empty, _sched(), cfg=TINY, out_dir=tmp_path)
        seven = _dataset(k=7)
        with pytest.raises(ValueError):
            train(params, seven, _sched(), cfg=TINY, out_dir=tmp_path)

    def test_nonfinite_loss_aborts(self, tmp_path):
        data = _dataset(n=4)
        data.data[:] = np.nan
        params = init_params(TINY, seed=5)
        rec = train(params, data, _sched(), cfg=TINY, out_dir=tmp_path)
        assert rec.aborted
        assert rec.rows[-1][0] == 1 and rec.rows[-1][2] is None
        assert not np.isfinite(rec.rows[-1][1])
        assert sorted(p.name for p in tmp_path.glob("ckpt_*.lckp")) == ["ckpt_000000.lckp"]
        assert "aborted" in (tmp_path / "run.txt").read_text()


class TestDeterminismAndResume:
    def test_identical_runs_identical_bytes(self, tmp_path):
        outs = []
        for sub in ("a", "b"):
            data = _dataset(n=10, seed=7)
            params = init_params(TINY, seed=7)
            train(params, data, _sched(max_iterations=15, checkpoint_every=5),
                  cfg=TINY, out_dir=tmp_path / sub)
            outs.append(tmp_path / sub)
        a, b = outs
        assert (a / "run.txt").read_bytes() == (b / "run.txt").read_bytes()
        assert (a / "ckpt_000015.lckp").read_bytes() == (b / "ckpt_000015.lckp").read_bytes()

    def test_resume_matches_uninterrupted(self, tmp_path):
        data = _dataset(n=10, seed=8)

        full_dir = tmp_path / "full"
        train(init_params(TINY, seed=8), data,
              _sched(max_iterations=24, checkpoint_every=8),
              cfg=TINY, out_dir=full_dir)

        part_dir = tmp_path / "part"
        train(init_params(TINY, seed=8), data,
              _sched(max_iterations=12, checkpoint_every=8),
              cfg=TINY, out_dir=part_dir)
        rec = resume_train(part_dir, data, _sched(max_iterations=24, checkpoint_every=8))

        for name in ("ckpt_000016.lckp", "ckpt_000024.lckp"):
            assert (part_dir / name).read_bytes() == (full_dir / name).read_bytes(), name
        full_rows = {it: loss for it, loss, _ in read_run_record(full_dir).rows}
        for it, loss, _ in rec.rows:
            if it >= 13:
                assert full_rows[it] == loss, it

    def test_record_round_trip(self, tmp_path):
        rec = RunRecord(
            rows=[(0, 2.3025850929940455, "ckpt_000000.lckp"), (1, 1.5, None),
                  (2, float("nan"), None)],
            checkpoint_scores=[(0, 37.5)],
            selected_path="ckpt_000000.lckp",
            selected_iteration=0,
            selected_f1=37.5,
            aborted=True,
            out_dir=tmp_path,
        )
        write_run_record(rec)
        back = read_run_record(tmp_path)
        assert back.rows[:2] == rec.rows[:2]
        assert back.rows[2][0] == 2 and np.isnan(back.rows[2][1])
        assert back.checkpoint_scores == rec.checkpoint_scores
        assert back.selected_path == rec.selected_path
        assert back.selected_f1 == rec.selected_f1
        assert back.aborted

    def test_missing_record(self, tmp_path):
        with pytest.raises(DataError):
            read_run_record(tmp_path)
        with pytest.raises(DataError):
            resume_train(tmp_path, _dataset(), _sched())


class TestStages:
    def test_pretrain_shape_and_determinism(self, tmp_path):
        data = _dataset(n=20, seed=9)
        sched = _sched(max_iterations=10, checkpoint_every=5)
        theta_a, rec_a = pretrain(data, TINY, sched, seed=3, out_dir=tmp_path / "a")
        theta_b, _ = pretrain(data, TINY, sched, seed=3, out_dir=tmp_path / "b")
        assert theta_a["head_b"].size == 5
        for name in theta_a:
            np.testing.assert_array_equal(theta_a[name], theta_b[name])
        assert rec_a.report is not None

    def test_pretrain_rejects_bad_input(self, tmp_path):
        sched = _sched(max_iterations=5)
        empty = LabeledSet(np.zeros((0, 8, 8, 3)), np.zeros(0, dtype=np.int64), RULE_CLASSES)
        with pytest.raises(ValueError):
            pretrain(empty, TINY, sched, seed=0, out_dir=tmp_path)
        with pytest.raises(ValueError):
            pretrain(_dataset(k=7), TINY, sched, seed=0, out_dir=tmp_path)

    def test_finetune_transfer_and_freeze(self, tmp_path):
        five = _dataset(n=20, seed=10)
        seven = _dataset(n=20, k=7, seed=11)
        sched = _sched(max_iterations=10, checkpoint_every=5)
        theta_r, _ = pretrain(five, TINY, sched, seed=4, out_dir=tmp_path / "pre")

        star, rec = finetune(theta_r, seven, sched, frozen_conv=False, seed=5,
                             out_dir=tmp_path / "free")
        _, start, _ = load_checkpoint(tmp_path / "free" / "ckpt_000000.lckp")
        for name in CONV:
            np.testing.assert_array_equal(start[name], theta_r[name])
        assert star["head_b"].size == 7

        frozen_star, _ = finetune(theta_r, seven, sched, frozen_conv=True, seed=5,
                                  out_dir=tmp_path / "frozen")
        for name in CONV:
            np.testing.assert_array_equal(frozen_star[name], theta_r[name])

    def test_selected_params_loads_winner(self, tmp_path):
        data = _dataset(n=10, seed=12)
        rec = train(init_params(TINY, seed=12), data,
                    _sched(max_iterations=10, checkpoint_every=5),
                    cfg=TINY, out_dir=tmp_path)
        params = selected_params(rec)
        _, direct, _ = load_checkpoint(tmp_path / rec.selected_path)
        for name in params:
            np.testing.assert_array_equal(params[name], direct[name])


class TestSubset:
    def _set_with_counts(self, counts):
        labels = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
        rng = np.random.default_rng(0)
        data = rng.uniform(0, 1, size=(labels.size, 8, 8, 3))
        return LabeledSet(data, labels.astype(np.int64), RULE_CLASSES)

    def test_caps_common_keeps_rare(self):
        ds = self._set_with_counts([10, 3, 8, 1, 5])
        sub = subset_per_class(ds, 4, seed=1)
        hist = np.bincount(sub.labels, minlength=5).tolist()
        assert hist == [4, 3, 4, 1, 4]

    def test_order_preserved_no_replacement(self):
        ds = self._set_with_counts([10, 3, 8, 1, 5])
        sub = subset_per_class(ds, 4, seed=2)
        # membership: every subset row exists unchanged in the parent
        parent = {ds.data[i].tobytes(): int(ds.labels[i]) for i in range(len(ds))}
        rows = [sub.data[i].tobytes() for i in range(len(sub))]
        assert len(set(rows)) == len(rows)
        for i, row in enumerate(rows):
            assert parent[row] == sub.labels[i]

    def test_one_per_class_and_full_set(self):
        ds = self._set_with_counts([3, 2, 0, 1, 4])
        one = subset_per_class(ds, 1, seed=0)
        assert np.bincount(one.labels, minlength=5).tolist() == [1, 1, 0, 1, 1]
        full = subset_per_class(ds, 99, seed=0)
        assert len(full) == len(ds)
        np.testing.assert_array_equal(full.labels, ds.labels)

    def test_deterministic(self):
        ds = self._set_with_counts([20, 20, 20, 20, 20])
        a = subset_per_class(ds, 5, seed=7)
        b = subset_per_class(ds, 5, seed=7)
        np.testing.assert_array_equal(a.data, b.data)
        c = subset_per_class(ds, 5, seed=8)
        assert not np.array_equal(a.data, c.data)

    def test_build_labeled_set_empty_and_errors(self):
        out = build_labeled_set([], [], RULE_CLASSES)
        assert len(out) == 0
        with pytest.raises(ValueError):
            build_labeled_set([], [1], RULE_CLASSES)
