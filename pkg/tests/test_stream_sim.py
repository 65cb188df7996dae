"""Tests for the stream simulation: schedule, baselines, experiment driver."""

import numpy as np
import numpy.testing as npt
import pytest

from streamfp.stream_sim import (
    CSV_COLUMNS,
    StreamConfig,
    class_order_permutation,
    kcenter_coreset,
    keep_first_update,
    metrics_csv,
    random_coreset,
    relative_complexity,
    reservoir_update,
    run_experiment,
    skip_schedule,
)
from streamfp.buffer import BufferItem, RehearsalBuffer
from streamfp.seeding import substream


def tiny_config(**overrides):
    base = dict(
        dataset_size=200,
        batch_size=10,
        tasks=2,
        n_classes=4,
        dim=6,
        tokens=1,
        buffer_size=20,
        eval_size=20,
        pinned_batch_time=1e-9,
        seed=3,
    )
    base.update(overrides)
    return StreamConfig(**base)


class TestRelativeComplexity:
    def test_hand_value(self):
        # 2000 samples at lambda=1000/s -> 2 s of stream; 100 batches at
        # 0.05 s each -> 5 s of training; C_S = 2.5
        assert relative_complexity(0.05, 1000.0, 2000, 20) == pytest.approx(2.5)

    def test_below_one_when_fast(self):
        assert relative_complexity(1e-6, 1000.0, 2000, 20) < 1.0

    def test_positive_inputs_required(self):
        with pytest.raises(ValueError):
            relative_complexity(0.0, 1000.0, 2000, 20)
        with pytest.raises(ValueError):
            relative_complexity(0.05, -1.0, 2000, 20)


class TestSkipSchedule:
    def test_no_skipping_at_or_below_one(self):
        rng = substream(1, "s")
        npt.assert_array_equal(skip_schedule(10, 0.5, rng), np.arange(10))
        npt.assert_array_equal(skip_schedule(10, 1.0, rng), np.arange(10))

    def test_keep_count_is_ceil(self):
        rng = substream(2, "s")
        assert len(skip_schedule(100, 2.0, rng)) == 50
        assert len(skip_schedule(100, 3.0, rng)) == 34
        assert len(skip_schedule(7, 2.0, rng)) == 4

    def test_sorted_unique_in_range(self):
        rng = substream(3, "s")
        for _ in range(50):
            n = int(rng.integers(1, 200))
            c_s = float(rng.uniform(1.0, 10.0))
            kept = skip_schedule(n, c_s, rng)
            assert np.all(np.diff(kept) > 0)
            assert kept[0] >= 0 and kept[-1] < n

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            skip_schedule(0, 2.0, substream(4, "s"))


class TestBaselineSelectors:
    def test_random_coreset_size_and_range(self):
        rng = substream(5, "r")
        sel = random_coreset(20, 0.5, rng)
        assert len(sel) == 10
        assert len(set(sel.tolist())) == 10
        assert sel.min() >= 0 and sel.max() < 20

    def test_random_coreset_minimum_one(self):
        rng = substream(6, "r")
        assert len(random_coreset(5, 0.1, rng)) == 1

    def test_kcenter_covers_clusters(self):
        # two tight, well-separated clusters: the two selected centers must
        # come from different clusters
        rng = substream(7, "k")
        a = rng.standard_normal((10, 3)) * 0.01 + np.array([10.0, 0.0, 0.0])
        b = rng.standard_normal((10, 3)) * 0.01 - np.array([10.0, 0.0, 0.0])
        sel = kcenter_coreset(np.concatenate([a, b]), 0.1)
        assert len(sel) == 2
        assert (sel < 10).sum() == 1

    def test_kcenter_deterministic(self):
        rng = substream(8, "k")
        x = rng.standard_normal((30, 4))
        npt.assert_array_equal(kcenter_coreset(x, 0.3), kcenter_coreset(x, 0.3))

    def test_kcenter_token_axis_pooled(self):
        rng = substream(9, "k")
        x = rng.standard_normal((12, 2, 5))
        npt.assert_array_equal(
            kcenter_coreset(x, 0.5), kcenter_coreset(x.mean(axis=1), 0.5)
        )

    def test_sigma_validation(self):
        with pytest.raises(ValueError):
            random_coreset(10, 0.0, substream(10, "r"))
        with pytest.raises(ValueError):
            kcenter_coreset(np.zeros((4, 2)), 1.5)


class TestBaselineBuffers:
    def _items(self, ids):
        return [BufferItem(int(i), np.zeros((1, 2)), 0, 0.0) for i in ids]

    def test_reservoir_uniform_retention(self):
        # after a long stream, every prefix position is equally likely to be
        # retained: check the retained-fraction of the first half
        trials = 2000
        kept_first_half = 0
        for t in range(trials):
            rng = substream(t, "res")
            buf = RehearsalBuffer(4)
            reservoir_update(buf, self._items(range(40)), rng)
            kept_first_half += sum(1 for it in buf.items if it.sample_id < 20)
        frac = kept_first_half / (trials * 4)
        assert abs(frac - 0.5) < 0.03

    def test_reservoir_counts(self):
        rng = substream(11, "res")
        buf = RehearsalBuffer(5)
        reservoir_update(buf, self._items(range(17)), rng)
        assert len(buf) == 5
        assert buf.n_seen == 17

    def test_keep_first(self):
        buf = RehearsalBuffer(3)
        keep_first_update(buf, self._items(range(10)))
        assert [it.sample_id for it in buf.items] == [0, 1, 2]
        assert buf.n_seen == 10


class TestClassOrder:
    def test_permutation_property(self):
        for order_id in range(1, 6):
            perm = class_order_permutation(order_id, 10)
            assert sorted(perm.tolist()) == list(range(10))

    def test_orders_differ(self):
        perms = {tuple(class_order_permutation(i, 10)) for i in range(1, 6)}
        assert len(perms) == 5

    def test_reproducible(self):
        npt.assert_array_equal(
            class_order_permutation(3, 8), class_order_permutation(3, 8)
        )


class TestStreamConfigValidate:
    def test_default_is_valid(self):
        assert StreamConfig().validate() == []

    def test_collects_all_errors(self):
        cfg = StreamConfig(lam=-1.0, sigma=2.0, selector="magic",
                           buffer_size=0, n_classes=2, tasks=5)
        errors = cfg.validate()
        assert len(errors) >= 5
        joined = "\n".join(errors)
        for word in ("lambda", "sigma", "selector", "buffer_size", "n_classes"):
            assert word in joined

    def test_run_experiment_rejects_invalid(self):
        with pytest.raises(ValueError, match="sigma"):
            run_experiment(tiny_config(sigma=0.0))


class TestRunExperiment:
    def test_deterministic_given_seed(self):
        r1 = run_experiment(tiny_config())
        r2 = run_experiment(tiny_config())
        assert r1.acc_rows == r2.acc_rows
        assert r1.avg_accuracy == r2.avg_accuracy
        assert r1.avg_forgetting == r2.avg_forgetting

    def test_triangular_accuracy_matrix(self):
        report = run_experiment(tiny_config(tasks=3, dataset_size=300))
        assert [len(row) for row in report.acc_rows] == [1, 2, 3]
        for row in report.acc_rows:
            for a in row:
                assert 0.0 <= a <= 1.0

    def test_skipping_halves_retained_batches(self):
        report = run_experiment(tiny_config(c_s_override=2.0))
        assert report.total_batches == 20
        assert report.retained_batches == 10

    def test_lower_ratio_keeps_all_batches(self):
        report = run_experiment(
            tiny_config(c_s_override=2.0, skip_mode="lower_ratio")
        )
        assert report.retained_batches == report.total_batches

    def test_all_selector_buffer_combinations_run(self):
        for selector in ("streamfp", "random", "kcenter", "none"):
            for policy in ("streamfp", "reservoir", "keep_first", "none"):
                report = run_experiment(
                    tiny_config(dataset_size=100, selector=selector,
                                buffer_policy=policy, eval_size=10)
                )
                assert np.isfinite(report.avg_accuracy)

    def test_learning_beats_chance(self):
        # mild setting: accuracy after training should clear 1/n_classes
        report = run_experiment(
            tiny_config(dataset_size=400, learning_rate=0.1, noise_std=0.1,
                        drift_std=0.0, eval_size=50)
        )
        assert report.avg_accuracy > 0.25 + 0.1

    def test_pinned_timing_figures(self):
        report = run_experiment(
            tiny_config(c_s_override=1.0, pinned_selection_throughput=123.0,
                        pinned_total_runtime=4.5)
        )
        assert report.c_s == 1.0
        assert report.selection_throughput_sps == 123.0
        assert report.total_runtime_s == 4.5


class TestMetricsCsv:
    def test_header_and_row(self):
        cfg = tiny_config(run_id="demo")
        report = run_experiment(cfg)
        text = metrics_csv([(report, cfg)])
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(CSV_COLUMNS)
        row = lines[1].split(",")
        assert len(row) == len(CSV_COLUMNS)
        assert row[0] == "demo"
        assert row[CSV_COLUMNS.index("seed")] == "3"
        assert float(row[CSV_COLUMNS.index("avg_accuracy")]) == pytest.approx(
            report.avg_accuracy, abs=1e-6
        )
