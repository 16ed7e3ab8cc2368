"""Preprocessing: class bins, labeling, windowing, balancing, folds, GZDS."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazeseq.oracle import GazeTrace, sample_population, simulate_population
from gazeseq.preprocess import (
    ClassBins,
    angle_to_class,
    augment_balance,
    build_dataset,
    default_bins,
    export_dataset_csv,
    kfold_split,
    label_trace,
    load_dataset,
    save_dataset,
    windowize,
)
from gazeseq.scenario import builtin_scenario, rasterize


@pytest.fixture(scope="module")
def s1():
    return builtin_scenario("s1")


@pytest.fixture(scope="module")
def s2():
    return builtin_scenario("s2")


@pytest.fixture(scope="module")
def s2_dataset(s2):
    matrix = rasterize(s2)
    personas = sample_population(3, base_seed=0)
    traces = simulate_population(s2, personas, base_seed=0)
    return build_dataset(matrix, traces, default_bins(s2), "s2")


class TestBins:
    def test_default_bins_s1(self, s1):
        bins = default_bins(s1)
        assert bins.n_classes == 6
        assert bins.edges[0] == 90.0 and bins.edges[-1] == 270.0
        assert np.allclose(np.diff(bins.edges), 30.0)

    def test_default_bins_s2(self, s2):
        bins = default_bins(s2)
        assert bins.n_classes == 7
        assert np.allclose(np.diff(bins.edges), 180.0 / 7)

    def test_invalid_bins(self):
        with pytest.raises(ValueError):
            ClassBins(3, (0.0, 1.0, 2.0))  # wrong edge count
        with pytest.raises(ValueError):
            ClassBins(2, (0.0, 2.0, 1.0))  # not increasing

    def test_center(self, s1):
        assert default_bins(s1).center(3) == pytest.approx(195.0)


class TestAngleToClass:
    def test_examples(self, s1):
        bins = default_bins(s1)
        assert angle_to_class(180.0, bins) == 3
        assert angle_to_class(270.0, bins) == 5  # inclusive top edge
        assert angle_to_class(275.0, bins) == 5  # clamp then bin
        assert angle_to_class(90.0, bins) == 0
        assert angle_to_class(50.0, bins) == 0

    @settings(max_examples=100, deadline=None)
    @given(a=st.floats(-50.0, 400.0), b=st.floats(-50.0, 400.0))
    def test_total_and_monotone(self, s1, a, b):
        bins = default_bins(s1)
        lo, hi = min(a, b), max(a, b)
        ca, cb = angle_to_class(lo, bins), angle_to_class(hi, bins)
        assert 0 <= ca <= cb <= 5

    def test_vectorized_matches_scalar(self, s2):
        bins = default_bins(s2)
        yaws = np.linspace(-10, 190, 97)
        vec = angle_to_class(yaws, bins)
        assert vec.tolist() == [angle_to_class(float(y), bins) for y in yaws]


class TestLabelTrace:
    def test_constant_trace(self, s1):
        trace = GazeTrace(0, "s1", np.full(30, 180.0))
        assert label_trace(trace, default_bins(s1)).tolist() == [3] * 30

    def test_alternating(self, s1):
        trace = GazeTrace(0, "s1", np.array([100.0, 260.0] * 5))
        assert label_trace(trace, default_bins(s1)).tolist() == [0, 5] * 5

    def test_empty(self, s1):
        trace = GazeTrace(0, "s1", np.array([]))
        assert len(label_trace(trace, default_bins(s1))) == 0


class TestWindowize:
    def make(self, T, s1):
        spec = builtin_scenario("s1")
        spec.duration_s = T / 10.0
        spec.events = [e for e in spec.events if e.end_s <= spec.duration_s]
        return rasterize(spec)

    def test_count(self, s1):
        matrix = self.make(100, s1)
        labels = np.arange(100) % 6
        assert len(windowize(matrix, labels)) == 71

    def test_single_window(self, s1):
        matrix = self.make(30, s1)
        labels = np.arange(30) % 6
        samples = windowize(matrix, labels)
        assert len(samples) == 1
        assert samples[0].target == labels[29]

    def test_too_short_warns(self, s1):
        matrix = self.make(29, s1)
        with pytest.warns(UserWarning):
            assert windowize(matrix, np.zeros(29, dtype=int)) == []

    def test_round_trip_slices(self, s1):
        matrix = self.make(60, s1)
        labels = np.arange(60) % 6
        for s in windowize(matrix, labels):
            expect = matrix.features()[s.start : s.start + 30]
            assert np.array_equal(s.features, expect)
            assert s.target == labels[s.start + 29]

    def test_stride(self, s1):
        matrix = self.make(100, s1)
        labels = np.zeros(100, dtype=int)
        assert len(windowize(matrix, labels, stride=10)) == 8


class TestAugmentBalance:
    def test_balances_to_max(self, s2_dataset):
        hist = s2_dataset.class_histogram
        assert hist.min() < hist.max()  # meaningful test case
        balanced = augment_balance(s2_dataset, seed=0)
        assert np.all(balanced.class_histogram == hist.max())

    def test_uniform_is_noop(self, s2_dataset):
        balanced = augment_balance(s2_dataset, seed=0)
        again = augment_balance(balanced, seed=1)
        assert again is balanced

    def test_added_windows_match_source(self, s2_dataset):
        balanced = augment_balance(s2_dataset, seed=0)
        n_orig = len(s2_dataset.samples)
        for s in balanced.samples[n_orig:]:
            feats, labels = balanced.sources[s.participant_id]
            assert np.array_equal(s.features, feats[s.start : s.start + 30])
            assert s.target == int(labels[s.start + 29])

    def test_never_decreases_counts(self, s2_dataset):
        before = s2_dataset.class_histogram
        after = augment_balance(s2_dataset, seed=3).class_histogram
        assert np.all(after >= before)

    def test_deterministic(self, s2_dataset):
        a = augment_balance(s2_dataset, seed=5)
        b = augment_balance(s2_dataset, seed=5)
        assert [s.start for s in a.samples] == [s.start for s in b.samples]

    def test_unrepresented_class_error(self, s2):
        matrix = rasterize(s2)
        trace = GazeTrace(0, "s2", np.full(s2.n_frames, 90.0))
        ds = build_dataset(matrix, [trace], default_bins(s2), "s2")
        with pytest.raises(ValueError, match="class 0 unrepresented"):
            augment_balance(ds, seed=0)


class TestKfold:
    def test_even_split(self, s2_dataset):
        ds = kfold_split(s2_dataset, k=10, seed=0)
        folds = np.asarray([s.fold for s in ds.samples])
        sizes = np.bincount(folds, minlength=10)
        assert sizes.max() - sizes.min() <= 1
        assert sizes.sum() == len(ds.samples)

    def test_95_samples(self, s2_dataset):
        import copy
        ds = copy.deepcopy(s2_dataset)
        ds.samples = ds.samples[:95]
        kfold_split(ds, k=10, seed=0)
        sizes = sorted(np.bincount([s.fold for s in ds.samples]).tolist())
        assert sizes == [9] * 5 + [10] * 5

    def test_deterministic(self, s2_dataset):
        a = kfold_split(s2_dataset, k=10, seed=7)
        folds_a = [s.fold for s in a.samples]
        b = kfold_split(s2_dataset, k=10, seed=7)
        assert folds_a == [s.fold for s in b.samples]

    def test_too_few_samples(self, s2_dataset):
        import copy
        ds = copy.deepcopy(s2_dataset)
        ds.samples = ds.samples[:5]
        with pytest.raises(ValueError):
            kfold_split(ds, k=10, seed=0)

    def test_by_participant(self, s2_dataset):
        ds = kfold_split(s2_dataset, k=3, seed=0, by_participant=True)
        fold_of = {}
        for s in ds.samples:
            fold_of.setdefault(s.participant_id, set()).add(s.fold)
        assert all(len(v) == 1 for v in fold_of.values())


class TestGzds:
    def test_round_trip(self, s2_dataset, tmp_path):
        ds = kfold_split(s2_dataset, k=10, seed=0)
        path = tmp_path / "d.gzds"
        save_dataset(ds, path)
        again = load_dataset(path)
        assert again.n_classes == ds.n_classes
        assert len(again.samples) == len(ds.samples)
        for a, b in zip(ds.samples, again.samples):
            assert np.array_equal(a.features, b.features)
            assert (a.target, a.fold, a.participant_id) == (
                b.target, b.fold, b.participant_id)

    def test_header(self, s2_dataset, tmp_path):
        path = tmp_path / "d.gzds"
        save_dataset(s2_dataset, path)
        raw = path.read_bytes()
        assert raw[:4] == b"GZDS"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == len(s2_dataset.samples)
        assert int.from_bytes(raw[12:16], "little") == 30
        assert int.from_bytes(raw[16:20], "little") == 24
        assert int.from_bytes(raw[20:24], "little") == 7

    def test_unassigned_fold_round_trip(self, s2_dataset, tmp_path):
        import copy
        ds = copy.deepcopy(s2_dataset)
        for s in ds.samples:
            s.fold = -1
        path = tmp_path / "d.gzds"
        save_dataset(ds, path)
        again = load_dataset(path)
        assert all(s.fold == -1 for s in again.samples)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gzds"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ValueError, match="GZDS"):
            load_dataset(path)

    def test_csv_export(self, s2_dataset, tmp_path):
        import copy
        ds = copy.deepcopy(s2_dataset)
        ds.samples = ds.samples[:3]
        path = tmp_path / "d.csv"
        export_dataset_csv(ds, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("sample,frame,f0")
        assert lines[0].endswith("f23,target,fold")
        assert len(lines) == 1 + 3 * 30
