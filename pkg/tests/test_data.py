import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mixcop.data import LongitudinalDataset


def _toy():
    ids = np.array(["b", "b", "a", "a", "a"])
    times = np.array([2.0, 1.0, 1.0, 3.0, 2.0])
    y = np.array([3, 1, 0, 2, 5])
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    return LongitudinalDataset(ids, times, y, X, covariate_names=["intercept", "z"])


class TestConstruction:
    def test_rows_grouped_and_time_ordered(self):
        ds = _toy()
        # first-appearance order: b then a; times ascending within block
        assert ds.subject_ids.tolist() == ["b", "b", "a", "a", "a"]
        assert ds.times.tolist() == [1.0, 2.0, 1.0, 2.0, 3.0]
        assert ds.y.tolist() == [1, 3, 0, 5, 2]
        assert ds.n_subjects == 2
        assert ds.subject_lengths().tolist() == [2, 3]

    def test_slices_cover_all_rows(self):
        ds = _toy()
        idx = np.concatenate([np.arange(s.start, s.stop) for s in ds.subject_slices()])
        assert_array_equal(np.sort(idx), np.arange(ds.n_obs))

    def test_singleton_subject_allowed(self):
        ds = LongitudinalDataset(["a"], [1.0], [4], [[1.0]])
        assert ds.n_subjects == 1
        assert ds.subject_lengths().tolist() == [1]

    @pytest.mark.parametrize(
        "y, msg",
        [([-1, 2], "non-negative"), ([0.5, 2], "non-negative"), ([1], "equal length")],
    )
    def test_bad_counts_rejected(self, y, msg):
        with pytest.raises(ValueError, match=msg):
            LongitudinalDataset(["a", "a"], [1.0, 2.0], y, np.ones((2, 1)))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            LongitudinalDataset(["a", "a"], [1.0, np.nan], [1, 2], np.ones((2, 1)))
        with pytest.raises(ValueError, match="finite"):
            LongitudinalDataset(["a", "a"], [1.0, 2.0], [1, 2], [[1.0], [np.inf]])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            LongitudinalDataset([], [], [], np.empty((0, 1)))


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        ds = _toy()
        path = tmp_path / "data.csv"
        ds.to_csv(path)
        back = LongitudinalDataset.from_csv(path)
        assert back.subject_ids.tolist() == ds.subject_ids.tolist()
        assert_allclose(back.times, ds.times)
        assert_array_equal(back.y, ds.y)
        assert_allclose(back.X, ds.X)
        assert back.covariate_names == ["intercept", "z"]

    def test_time_covariate_round_trip(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("subject,time,y,dose\n1,1,3,0.5\n1,2,4,0.5\n2,1,0,1.5\n")
        ds = LongitudinalDataset.from_csv(path, include_time_covariate=True)
        assert ds.covariate_names == ["intercept", "dose", "time"]
        assert_allclose(ds.X[:, 2], ds.times)
        out = tmp_path / "t2.csv"
        ds.to_csv(out)
        back = LongitudinalDataset.from_csv(out, include_time_covariate=True)
        assert_allclose(back.X, ds.X)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,when,count\n1,1,3\n")
        with pytest.raises(ValueError, match="subject,time,y"):
            LongitudinalDataset.from_csv(path)

    def test_malformed_field_rejected(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("subject,time,y\n1,one,3\n")
        with pytest.raises(ValueError, match="malformed"):
            LongitudinalDataset.from_csv(path)
