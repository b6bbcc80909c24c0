import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locfield.core import Dataset, order_neighbors, read_dataset, telescope_weights, write_dataset


class TestDataset:
    def test_shapes(self):
        d = Dataset(np.arange(5.0), np.ones(5))
        assert d.n == 5 and d.dim == 1
        assert d.locations.shape == (5, 1)

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty dataset"):
            Dataset(np.zeros((0, 1)), np.zeros(0))

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            Dataset(np.array([0.0, 1.0, 0.0]), np.ones(3))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([0.0, 1.0]), np.array([1.0, np.nan]))

    def test_rejects_3d(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 3)) + np.arange(2)[:, None], np.ones(2))

    def test_csv_roundtrip(self, tmp_path, rng):
        d = Dataset(rng.uniform(size=(7, 2)), rng.standard_normal(7))
        back = read_dataset(write_dataset(d, tmp_path / "d.csv"))
        np.testing.assert_array_equal(back.locations, d.locations)
        np.testing.assert_array_equal(back.responses, d.responses)


class TestOrderNeighbors:
    def test_sorted_by_distance(self, rng):
        locs = rng.uniform(size=(30, 2))
        o = order_neighbors(locs, [0.3, 0.6])
        assert np.all(np.diff(o.dists) >= 0)
        np.testing.assert_allclose(o.dists, np.linalg.norm(locs[o.perm] - [0.3, 0.6], axis=1))
        np.testing.assert_allclose(o.offsets, np.array([0.3, 0.6]) - locs[o.perm])

    def test_ties_by_index(self):
        o = order_neighbors(np.array([[1.0], [-1.0], [2.0]]), [0.0])
        np.testing.assert_array_equal(o.perm, [0, 1, 2])

    def test_truncate(self, rng):
        o = order_neighbors(rng.uniform(size=(10, 1)), [0.5]).truncate(4)
        assert len(o) == 4

    def test_spec_tie(self):
        o = order_neighbors(np.array([[0.1], [0.2], [0.5]]), [0.15])
        np.testing.assert_array_equal(o.perm, [0, 1, 2])

    def test_coincident_target(self, rng):
        locs = rng.uniform(size=(8, 2))
        o = order_neighbors(locs, locs[3])
        assert o.perm[0] == 3 and o.dists[0] == 0

    def test_brute_force(self, rng):
        locs = rng.uniform(size=(10, 2))
        d = np.linalg.norm(locs - 0.5, axis=1)
        np.testing.assert_array_equal(order_neighbors(locs, [0.5, 0.5]).perm, np.argsort(d, kind="stable"))

    def test_shuffle_invariant(self, rng):
        locs = rng.uniform(size=(15, 2))
        shuffled = locs[rng.permutation(15)]
        a = locs[order_neighbors(locs, [0.3, 0.3]).perm]
        b = shuffled[order_neighbors(shuffled, [0.3, 0.3]).perm]
        np.testing.assert_array_equal(a, b)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty dataset"):
            order_neighbors(np.zeros((0, 1)), [0.0])

    def test_zero_based(self):
        o = order_neighbors(np.array([[0.0], [1.0]]), [0.9])
        assert o.perm[0] == 1


class TestTelescope:
    def test_example(self):
        w = telescope_weights([3.0, 2.0, 1.0])
        np.testing.assert_allclose(w.wtilde, [1 / 6, 1 / 6, 1 / 6])

    def test_hard_threshold_mass_at_cutoff(self):
        w = telescope_weights([1.0, 1.0, 1.0, 0.0, 0.0])
        np.testing.assert_allclose(w.wtilde, [0, 0, 1 / 3, 0, 0])
        assert w.effective_size() == 3

    def test_constant(self):
        np.testing.assert_allclose(telescope_weights([1.0, 1.0, 1.0]).wtilde, [0, 0, 1 / 3])

    def test_single(self):
        np.testing.assert_allclose(telescope_weights([4.2]).wtilde, [1.0])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=20).filter(lambda w: sum(w) > 0))
    def test_nonincreasing_nonnegative(self, w):
        w = sorted(w, reverse=True)
        assert np.all(telescope_weights(w).wtilde >= 0)

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate weights"):
            telescope_weights([1.0, -1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=30))
    def test_first_moment_is_one(self, w):
        wt = telescope_weights(w).wtilde
        assert abs(np.sum(np.arange(1, len(w) + 1) * wt) - 1.0) < 1e-12
