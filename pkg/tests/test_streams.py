import gzip
import struct
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamreplay.objectives import TaskKind
from streamreplay.streams import (
    DataMissingError, IdxFormatError, Schema, StreamConfigError, StreamSpec, Vocabulary,
    build_stream, encode_features, hash_groups, load_csv_table, load_idx_images, make_phase,
    make_windows, read_idx, rotate_dataset, rotate_images, scenario, split_group, split_label_pairs,
    split_time, synth_drift, synth_pairs, write_idx, zscore,
)
from streamreplay.streams.idx import IMAGES_MAGIC, LABELS_MAGIC
from streamreplay.streams.scenarios import SCENARIOS
from streamreplay.streams.splits import slice_bounds
from streamreplay.streams.synth import drift_means, pair_means
from streamreplay.streams.tabular import CsvFormatError

from conftest import write_airlines_fixture, write_electricity_fixture, write_mnist_fixture


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


class TestIdx:
    def test_all_white_image_scales_to_one(self, tmp_path):
        (tmp_path / "i").write_bytes(idx_bytes(IMAGES_MAGIC, (1, 28, 28), [255] * 784))
        (tmp_path / "l").write_bytes(idx_bytes(LABELS_MAGIC, (1,), [7]))
        images, labels = load_idx_images(tmp_path / "i", tmp_path / "l")
        assert images.shape == (1, 28, 28) and np.all(images == 1.0)
        assert labels.tolist() == [7]

    def test_count_mismatch(self, tmp_path):
        (tmp_path / "i").write_bytes(idx_bytes(IMAGES_MAGIC, (2, 2, 2), [0] * 8))
        (tmp_path / "l").write_bytes(idx_bytes(LABELS_MAGIC, (3,), [0, 1, 2]))
        with pytest.raises(IdxFormatError):
            load_idx_images(tmp_path / "i", tmp_path / "l")

    def test_bad_magic_reports_offset(self, tmp_path):
        (tmp_path / "l").write_bytes(idx_bytes(0x0803, (1,), [0]))
        with pytest.raises(IdxFormatError) as err:
            read_idx(tmp_path / "l", LABELS_MAGIC)
        assert err.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        (tmp_path / "i").write_bytes(idx_bytes(IMAGES_MAGIC, (2, 3, 3), [1] * 10))
        with pytest.raises(IdxFormatError) as err:
            read_idx(tmp_path / "i", IMAGES_MAGIC)
        assert err.value.offset == 16 + 10
        assert str(tmp_path / "i") in str(err.value)

    def test_trailing_bytes(self, tmp_path):
        (tmp_path / "l").write_bytes(idx_bytes(LABELS_MAGIC, (2,), [1, 2, 3]))
        with pytest.raises(IdxFormatError):
            read_idx(tmp_path / "l", LABELS_MAGIC)

    @pytest.mark.parametrize("name", ["a.idx", "a.idx.gz"])
    def test_round_trip(self, tmp_path, rng, name):
        arr = rng.integers(0, 256, (4, 5, 6)).astype(np.uint8)
        write_idx(tmp_path / name, arr)
        assert np.array_equal(read_idx(tmp_path / name, IMAGES_MAGIC), arr)

    def test_gzip_is_really_compressed(self, tmp_path):
        write_idx(tmp_path / "x.gz", np.zeros(3, dtype=np.uint8))
        assert gzip.decompress((tmp_path / "x.gz").read_bytes())[:4] == struct.pack(">I", LABELS_MAGIC)


class TestRotation:
    def test_zero_angle_is_identity(self, rng):
        img = rng.random((1, 28, 28))
        assert np.array_equal(rotate_images(img, [0.0]), img)

    def test_half_turn_flips_both_axes(self, rng):
        img = rng.random((28, 28))
        out = rotate_images(img[None], [180.0])[0]
        assert np.max(np.abs(out - img[::-1, ::-1])) <= 1e-6

    def test_interior_mass_preserved(self):
        yy, xx = np.mgrid[:28, :28]
        blob = np.exp(-((yy - 13.5) ** 2 + (xx - 13.5) ** 2) / 18.0)
        for angle in (17.0, -33.0, 45.0):
            out = rotate_images(blob[None], [angle])[0]
            assert out.sum() == pytest.approx(blob.sum(), rel=0.02)

    def test_dataset_angles_bounded_and_seeded(self, rng):
        images = rng.random((50, 8, 8))
        a = rotate_dataset(images, np.arange(50), seed=3)
        b = rotate_dataset(images, np.arange(50), seed=3)
        assert np.all(np.abs(a[2]) <= 45.0)
        assert np.array_equal(a[0], b[0])


class TestSplits:
    def test_slice_remainder_goes_first(self):
        sizes = [b - a for a, b in slice_bounds(101, 5)]
        assert sizes == [21, 20, 20, 20, 20]

    def test_too_few_examples(self):
        with pytest.raises(StreamConfigError):
            slice_bounds(3, 5)

    @settings(max_examples=100)
    @given(st.integers(1, 500), st.integers(1, 20))
    def test_slices_partition(self, n, T):
        if n < T:
            return
        bounds = slice_bounds(n, T)
        covered = [i for a, b in bounds for i in range(a, b)]
        assert covered == list(range(n))
        sizes = [b - a for a, b in bounds]
        assert max(sizes) - min(sizes) <= 1

    def test_time_split_partitions_examples(self, rng):
        x = rng.standard_normal((53, 3))
        phases = split_time(x, x[:, :1], 5, TaskKind.forecasting(3), val_fraction=0.2)
        keys = np.concatenate([np.concatenate([p.train_keys, p.val_keys]) for p in phases])
        assert sorted(keys.tolist()) == list(range(53))
        assert [p.phase_id for p in phases] == [1, 2, 3, 4, 5]

    def test_label_pairs_brute_force(self, rng):
        y = rng.integers(0, 10, 400)
        x = rng.standard_normal((400, 2))
        phases = split_label_pairs(x, y)
        for t, p in enumerate(phases):
            allowed = {2 * t, 2 * t + 1}
            assert set(p.train_y.tolist()) | set(p.val_y.tolist()) <= allowed
            expected = np.flatnonzero(np.isin(y, list(allowed)))
            got = np.sort(np.concatenate([p.train_keys, p.val_keys]))
            assert np.array_equal(got, expected)

    def test_overlapping_pairs_rejected(self, rng):
        with pytest.raises(StreamConfigError):
            split_label_pairs(np.zeros((10, 2)), np.arange(10), ((0, 1), (1, 2)))

    def test_empty_pair_rejected(self):
        with pytest.raises(StreamConfigError):
            split_label_pairs(np.zeros((4, 2)), np.array([0, 1, 0, 1]), ((0, 1), (2, 3)))

    def test_group_split_and_empty_group(self, rng):
        x = rng.standard_normal((30, 2))
        groups = np.repeat([1, 2, 3], 10)
        phases = split_group(x, np.zeros(30), groups, 3, TaskKind.forecasting(2))
        assert [len(p.train_x) + len(p.val_x) for p in phases] == [10, 10, 10]
        with pytest.raises(StreamConfigError):
            split_group(x, np.zeros(30), groups, 4, TaskKind.forecasting(2))
        with pytest.raises(StreamConfigError):
            split_group(x, np.zeros(30), lambda i: 1, 2, TaskKind.forecasting(2))

    def test_hash_groups_recomputed_and_balanced(self):
        import hashlib
        keys = [f"MT_{i:03d}" for i in range(1, 23)]
        groups = hash_groups(keys, 5)
        assert hash_groups(list(reversed(keys)), 5) == groups
        ranked = sorted(keys, key=lambda k: hashlib.sha256(k.encode()).hexdigest())
        assert groups == {k: i % 5 + 1 for i, k in enumerate(ranked)}
        assert sorted(Counter(groups.values()).values()) == [4, 4, 4, 5, 5]


class TestPhaseDataset:
    def test_holdout_is_tail(self):
        p = make_phase(1, np.arange(10)[:, None], np.arange(10), np.arange(10),
                       TaskKind.forecasting(1), 0.2)
        assert p.val_keys.tolist() == [8, 9]

    def test_tiny_phase_keeps_both_splits(self):
        p = make_phase(1, np.zeros((2, 1)), np.zeros(2), [5, 6], TaskKind.forecasting(1), 0.01)
        assert len(p.train_x) == 1 and len(p.val_x) == 1

    def test_shared_keys_rejected(self):
        with pytest.raises(StreamConfigError):
            make_phase(1, np.zeros((4, 1)), np.zeros(4), [1, 2, 3, 1], TaskKind.forecasting(1), 0.25)


class TestWindows:
    def test_counts(self):
        x, y, ent, start = make_windows([np.arange(100.0), np.arange(96.0)], 96, normalize=False)
        assert x.shape == (4, 96) and y.shape == (4, 1)
        assert ent.tolist() == [0, 0, 0, 0]
        assert np.array_equal(x[2], np.arange(2.0, 98.0)) and y[2, 0] == 98.0

    def test_short_series_gives_nothing(self):
        x, y, _, _ = make_windows([np.arange(5.0)], 96)
        assert x.shape == (0, 96) and y.shape == (0, 1)

    def test_constant_series_normalises_to_zero(self):
        x, y, _, _ = make_windows([np.full(10, 3.0)], 4)
        assert np.all(x == 0) and np.all(y == 0)

    def test_zscore_uses_prefix(self):
        s = np.array([1.0, 3.0, 100.0])
        assert np.allclose(zscore(s, 2), [-1.0, 1.0, 98.0])


CSV = """Airline,From,Time,Delay
AA,SFO,10.5,1
DL,JFK,3,0
AA,ORD,7.25,1
"""


class TestCsv:
    def schema(self):
        return Schema.parse("Airline = feature_categorical+entity_id\nFrom = feature_categorical\n"
                            "Time = feature_numeric\nDelay = label\n")

    def test_fixture_parses(self, tmp_path):
        (tmp_path / "a.csv").write_text(CSV)
        t = load_csv_table(tmp_path / "a.csv", self.schema())
        assert t.numeric[:, 0].tolist() == [10.5, 3.0, 7.25]
        assert t.label.tolist() == [1.0, 0.0, 1.0]
        assert t.entity.tolist() == ["AA", "DL", "AA"]
        assert t.categorical[:, 0].tolist() == [1, 2, 1]

    def test_unknown_category_maps_to_zero(self, tmp_path):
        (tmp_path / "a.csv").write_text(CSV)
        vocab = Vocabulary({"Airline": {"AA": 1}, "From": {}}, frozen=True)
        t = load_csv_table(tmp_path / "a.csv", self.schema(), vocab=vocab)
        assert t.categorical[:, 0].tolist() == [1, 0, 1]

    def test_max_size_caps_vocabulary(self):
        vocab = Vocabulary(max_size=3)
        assert [vocab.index("c", v) for v in "abcab"] == [1, 2, 0, 1, 2]

    def test_vocabulary_round_trip(self, tmp_path):
        vocab = Vocabulary()
        for v in ("x", "y", "z"):
            vocab.index("col", v)
        vocab.save(tmp_path / "v.json")
        loaded = Vocabulary.load(tmp_path / "v.json")
        assert loaded.maps == vocab.maps and loaded.frozen
        assert loaded.index("col", "new") == 0

    def test_bad_cell_reports_row_and_column(self, tmp_path):
        (tmp_path / "a.csv").write_text(CSV.replace("3,0", "oops,0"))
        with pytest.raises(CsvFormatError) as err:
            load_csv_table(tmp_path / "a.csv", self.schema())
        assert err.value.row == 3 and err.value.column == "Time"

    def test_missing_column(self, tmp_path):
        (tmp_path / "a.csv").write_text("Airline,Time\nAA,1\n")
        with pytest.raises(CsvFormatError):
            load_csv_table(tmp_path / "a.csv", self.schema())

    def test_schema_round_trip_and_bad_role(self):
        s = self.schema()
        assert Schema.parse(s.dumps()) == s
        with pytest.raises(StreamConfigError):
            Schema.parse("a = feature_magic")

    def test_encoding_shapes(self, tmp_path):
        (tmp_path / "a.csv").write_text(CSV)
        t = load_csv_table(tmp_path / "a.csv", self.schema())
        feats, (mean, std) = encode_features(t)
        # 1 numeric + (2 airlines + unknown) + (3 airports + unknown)
        assert feats.shape == (3, 1 + 3 + 4)
        assert feats[:, 0].mean() == pytest.approx(0.0)
        assert np.all(feats[:, 1:].sum(axis=1) == 2)


class TestSynth:
    def test_pairs_phase_labels(self):
        phases = synth_pairs(0, samples_per_phase=200)
        for t, p in enumerate(phases, start=1):
            assert set(np.concatenate([p.train_y, p.val_y]).tolist()) == {2 * t - 2, 2 * t - 1}
            assert p.task.num_classes == 10

    def test_pair_means_separation(self):
        means = pair_means(3, 6.0)
        d = np.linalg.norm(means[:, None] - means[None], axis=-1)
        off = d[~np.eye(10, dtype=bool)]
        assert off.min() == pytest.approx(6.0)
        assert off.max() == pytest.approx(6.0 * np.sqrt(2) * np.sqrt(1.5), rel=0.3)

    def test_bayes_accuracy_is_high(self):
        # the optimal rule for two equal-prior unit-variance Gaussians is nearest mean
        means = pair_means(0, 6.0)
        rng = np.random.default_rng(99)
        labels = rng.integers(0, 2, 20_000)
        x = means[labels] + rng.standard_normal((20_000, 16))
        d = np.linalg.norm(x[:, None] - means[None, :2], axis=-1)
        assert np.mean(np.argmin(d, axis=1) == labels) >= 0.99

    def test_zero_drift_is_one_distribution(self):
        m = drift_means(0, 3.0, 0.0, 5)
        assert np.all(m == m[0])

    def test_drift_step_moves_means(self):
        m = drift_means(0, 3.0, 0.5, 5)
        assert np.linalg.norm(m[4] - m[0], axis=1) == pytest.approx([2.0, 2.0])

    @pytest.mark.parametrize("fn", [synth_pairs, synth_drift])
    def test_deterministic_and_disjoint(self, fn):
        a, b = fn(5, samples_per_phase=100), fn(5, samples_per_phase=100)
        for p, q in zip(a, b):
            assert np.array_equal(p.train_x, q.train_x) and np.array_equal(p.val_y, q.val_y)
        keys = np.concatenate([np.concatenate([p.train_keys, p.val_keys]) for p in a])
        assert len(np.unique(keys)) == len(keys) == 500

    def test_too_many_phases(self):
        with pytest.raises(StreamConfigError):
            synth_pairs(0, num_phases=6)


class TestStreamSpec:
    def test_round_trip(self):
        spec = StreamSpec("synth", "synth_drift", num_phases=4, drift_step=0.25, seed=9)
        assert StreamSpec.loads(spec.dumps()) == spec

    @pytest.mark.parametrize("text", ["dataset = nope\nsplit = x\n", "dataset = synth\nsplit = time\n",
                                      "dataset = synth\nsplit = synth_pairs\nbogus = 1\n",
                                      "dataset = synth\nsplit = synth_pairs\nnum_phases = 1\n",
                                      "dataset = electricity\nsplit = time\ntask = classification\n"])
    def test_invalid(self, text):
        with pytest.raises(StreamConfigError):
            StreamSpec.loads(text)

    def test_names(self):
        assert set(SCENARIOS) >= {"synth.synth_pairs", "rotmnist.digits_pairs.reconstruction"}
        for name, (spec, _) in SCENARIOS.items():
            assert spec.name == name

    def test_missing_data_names_path(self, tmp_path):
        with pytest.raises(DataMissingError) as err:
            build_stream(scenario("rotmnist.digits_pairs"), tmp_path)
        assert "mnist" in err.value.path


class TestBuilders:
    def test_rotmnist_classification(self, tmp_path):
        _, labels = write_mnist_fixture(tmp_path)
        phases = build_stream(scenario("rotmnist.digits_pairs", samples_per_phase=20), tmp_path)
        assert len(phases) == 5
        for t, p in enumerate(phases):
            assert set(p.train_y.tolist()) <= {2 * t, 2 * t + 1}
            assert p.input_dim == 64 and len(p.train_x) + len(p.val_x) == 20

    def test_rotmnist_reconstruction(self, tmp_path):
        write_mnist_fixture(tmp_path)
        phases = build_stream(scenario("rotmnist.digits_pairs.reconstruction"), tmp_path)
        assert phases[0].task.kind == "reconstruction"
        assert np.array_equal(phases[0].train_x, phases[0].train_y)

    @pytest.mark.parametrize("split", ["time", "meters"])
    def test_electricity(self, tmp_path, split):
        write_electricity_fixture(tmp_path)
        spec = scenario(f"electricity.{split}", window_len=4, samples_per_phase=50)
        phases = build_stream(spec, tmp_path)
        assert len(phases) == 5 and phases[0].input_dim == 4
        assert all(p.train_y.shape[1] == 1 for p in phases)
        keys = np.concatenate([np.concatenate([p.train_keys, p.val_keys]) for p in phases])
        assert len(np.unique(keys)) == len(keys)

    @pytest.mark.parametrize("split", ["time", "airline_group"])
    def test_airlines(self, tmp_path, split):
        write_airlines_fixture(tmp_path)
        phases = build_stream(scenario(f"airlines.{split}"), tmp_path)
        assert len(phases) == 5
        assert {p.input_dim for p in phases} == {phases[0].input_dim}
        assert set(np.concatenate([p.train_y for p in phases]).tolist()) <= {0, 1}
