import numpy as np
import pytest

from fedsim.data import (
    ColumnMap,
    DatasetManifest,
    LoadReport,
    SyntheticSpec,
    load_generic_csv,
    load_wisdm,
    synth_generate,
    synthetic_activities,
    write_generic_csv,
)
from fedsim.errors import ConfigurationError, DataFormatError
from fedsim.features import extract_features, segment

WISDM_ACTIVITIES = ("Walking", "Jogging", "Sitting", "Standing", "Upstairs", "Downstairs")


def wisdm_manifest(activities=WISDM_ACTIVITIES):
    return DatasetManifest(source="wisdm_raw", activities=tuple(activities))


class TestWisdmLoader:
    def test_single_line(self, tmp_path):
        path = tmp_path / "raw.txt"
        path.write_text("33,Jogging,49105962326000,-0.69,12.68,0.50;\n")
        streams = load_wisdm(path, wisdm_manifest())
        assert len(streams) == 1
        stream = streams[0]
        assert stream.user_id == "33"
        assert stream.labels == ["Jogging"]
        assert stream.timestamps[0] == 49105962326000
        assert np.allclose(stream.values[0], [-0.69, 12.68, 0.50])

    def test_malformed_lines_skipped_and_counted(self, tmp_path):
        path = tmp_path / "raw.txt"
        path.write_text(
            "33,Jogging,100,-0.69,12.68,0.50;\n"
            "garbage line\n"
            "34,Walking,200,0.1,0.2\n"          # missing z
            "34,Walking,300,0.1,0.2,not_a_number;\n"
            "\n"
            "34,Walking,400,0.1,0.2,0.3;\n"
        )
        report = LoadReport()
        streams = load_wisdm(path, wisdm_manifest(), report)
        assert report.skipped == 3
        assert report.valid == 2
        assert {s.user_id for s in streams} == {"33", "34"}

    def test_concatenated_records_on_one_line(self, tmp_path):
        path = tmp_path / "raw.txt"
        path.write_text("1,Walking,10,0,0,1;1,Walking,20,0,0,2;\n")
        streams = load_wisdm(path, wisdm_manifest())
        assert len(streams[0].labels) == 2

    def test_empty_file_is_format_error(self, tmp_path):
        path = tmp_path / "raw.txt"
        path.write_text("\n\n")
        with pytest.raises(DataFormatError):
            load_wisdm(path, wisdm_manifest())

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(OSError):
            load_wisdm(tmp_path / "nope.txt", wisdm_manifest())

    def test_whitelist_filters_activities(self, tmp_path):
        path = tmp_path / "raw.txt"
        path.write_text(
            "1,Walking,10,0,0,1;\n"
            "1,Dancing,20,0,0,2;\n"
        )
        streams = load_wisdm(path, wisdm_manifest(("Walking",)))
        assert streams[0].labels == ["Walking"]

    def test_samples_sorted_by_timestamp(self, tmp_path):
        path = tmp_path / "raw.txt"
        path.write_text(
            "1,Walking,30,0,0,3;\n"
            "1,Walking,10,0,0,1;\n"
            "1,Walking,20,0,0,2;\n"
        )
        streams = load_wisdm(path, wisdm_manifest())
        assert list(streams[0].timestamps) == [10, 20, 30]
        assert list(streams[0].values[:, 2]) == [1.0, 2.0, 3.0]


NINE_AXES = tuple(f"a{i}" for i in range(9))


def csv_manifest(axes=("x", "y", "z"), activities=("standing", "walking", "jogging", "jumping", "sitting")):
    return DatasetManifest(
        source="generic_csv",
        activities=tuple(activities),
        columns=ColumnMap(user="subject", activity="label", timestamp="ts", axes=tuple(axes)),
    )


class TestGenericCsv:
    def test_nine_axis_mapping(self, tmp_path):
        path = tmp_path / "data.csv"
        header = "subject,label,ts," + ",".join(NINE_AXES)
        lines = [header]
        for t in range(4):
            lines.append(f"s1,walking,{t}," + ",".join(str(0.1 * i + t) for i in range(9)))
        path.write_text("\n".join(lines) + "\n")
        streams = load_generic_csv(path, csv_manifest(axes=NINE_AXES))
        assert streams[0].n_axes == 9
        assert len(streams[0].labels) == 4

    def test_missing_column_named_in_error(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("subject,label,ts,x,y\n" "s1,walking,0,1,2\n")
        with pytest.raises(DataFormatError, match="'z'"):
            load_generic_csv(path, csv_manifest())

    def test_whitelist(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text(
            "subject,label,ts,x,y,z\n"
            "s1,walking,0,1,2,3\n"
            "s1,falling,1,1,2,3\n"
            "s1,sitting,2,1,2,3\n"
        )
        streams = load_generic_csv(path, csv_manifest())
        assert streams[0].labels == ["walking", "sitting"]

    def test_roundtrip_identical_samples(self, tmp_path):
        rng = np.random.default_rng(0)
        streams = synth_generate(3, 2, 4, 3, seed=5,
                                 spec=SyntheticSpec(samples_per_window=8, seed=5))
        path = tmp_path / "rt.csv"
        columns = ColumnMap("subject", "label", "ts", ("x", "y", "z"))
        write_generic_csv(streams, path, columns)
        manifest = DatasetManifest(
            source="generic_csv", activities=synthetic_activities(2), columns=columns
        )
        reloaded = load_generic_csv(path, manifest)
        assert len(reloaded) == len(streams)
        for a, b in zip(streams, reloaded):
            assert a.user_id == b.user_id
            assert np.array_equal(a.timestamps, b.timestamps)
            assert np.array_equal(a.values, b.values)
            assert a.labels == b.labels
        del rng


class TestSyntheticGenerator:
    def test_same_seed_identical(self):
        a = synth_generate(4, 3, 6, 2, seed=9)
        b = synth_generate(4, 3, 6, 2, seed=9)
        for sa, sb in zip(a, b):
            assert sa.user_id == sb.user_id
            assert np.array_equal(sa.values, sb.values)
            assert sa.labels == sb.labels

    def test_even_class_budget(self):
        spec = SyntheticSpec(samples_per_window=8)
        streams = synth_generate(3, 4, 12, 2, seed=1, spec=spec)
        for stream in streams:
            windows = segment(stream, 8, 0.0)
            counts = {}
            for w in windows:
                counts[w.true_label] = counts.get(w.true_label, 0) + 1
            assert sorted(counts.values()) == [3, 3, 3, 3]

    @staticmethod
    def _centroid_accuracy(streams, spec):
        """Nearest-centroid oracle on extracted features, averaged over the two
        parity train/test folds."""
        xs, ys = [], []
        for stream in streams:
            for window in segment(stream, spec.samples_per_window, 0.0):
                xs.append(extract_features(window).features)
                ys.append(window.true_label)
        x = np.stack(xs)
        labels = sorted(set(ys))
        y = np.asarray([labels.index(v) for v in ys])
        fold_accs = []
        for parity in (0, 1):
            train_idx = np.arange(parity, len(y), 2)
            test_idx = np.arange(1 - parity, len(y), 2)
            mu = x[train_idx].mean(axis=0)
            sd = x[train_idx].std(axis=0)
            sd[sd == 0] = 1.0
            xz = (x - mu) / sd
            centroids = np.stack([xz[train_idx][y[train_idx] == c].mean(axis=0)
                                  for c in range(len(labels))])
            d = ((xz[test_idx, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
            fold_accs.append(float(np.mean(np.argmin(d, axis=1) == y[test_idx])))
        return float(np.mean(fold_accs))

    def test_centroid_oracle_beats_80_percent(self):
        spec = SyntheticSpec()
        streams = synth_generate(20, 5, 60, 3, seed=7, spec=spec)
        assert self._centroid_accuracy(streams, spec) >= 0.80

    def test_separability_stable_across_seeds(self):
        spec = SyntheticSpec()
        accs = []
        for seed in range(10):
            streams = synth_generate(12, 5, 40, 3, seed=seed, spec=spec)
            accs.append(self._centroid_accuracy(streams, spec))
        mean = float(np.mean(accs))
        assert max(abs(a - mean) for a in accs) <= 0.05

    def test_invalid_args(self):
        with pytest.raises(ConfigurationError):
            synth_generate(0, 3, 5, 2, seed=0)
        with pytest.raises(ConfigurationError):
            synth_generate(2, 1, 5, 2, seed=0)
