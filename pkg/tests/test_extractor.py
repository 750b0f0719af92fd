"""Feature extractor: edge features, dense units, equivariance, channel budget."""

import numpy as np
import pytest

from pup3d import extractor as ex
from pup3d import tensor as T


class TestEdgeFeatures:
    def test_self_neighbor_zero_diff(self):
        rng = np.random.default_rng(0)
        f = T.Tensor(rng.normal(size=(5, 4)))
        idx = np.arange(5)[:, None]  # every point is its own neighbor
        out = ex.edge_features(f, idx)
        np.testing.assert_array_equal(out.data[:, :, :4], np.zeros((5, 1, 4)))
        np.testing.assert_array_equal(out.data[:, 0, 4:], f.data)

    def test_hand_case(self):
        f = T.Tensor([[1.0], [3.0]])
        out = ex.edge_features(f, [[1], [0]])
        np.testing.assert_array_equal(out.data, [[[2.0, 1.0]], [[-2.0, 3.0]]])

    def test_shape(self):
        rng = np.random.default_rng(1)
        f = T.Tensor(rng.normal(size=(7, 6)))
        idx = rng.integers(0, 7, size=(7, 3))
        assert ex.edge_features(f, idx).data.shape == (7, 3, 12)


class TestDenseUnit:
    def test_output_shape_any_k(self):
        rng = np.random.default_rng(2)
        prm = ex.init_extractor(rng, c0=6, g=8, num_units=1)
        f = T.Tensor(rng.normal(size=(10, 6)))
        for k in (1, 3, 10):
            assert ex.dense_edge_conv_unit(f, k, prm.units[0]).data.shape == (10, 8)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        prm = ex.init_extractor(rng, c0=6, g=8, num_units=1)
        f = rng.normal(size=(12, 6))
        perm = rng.permutation(12)
        out = ex.dense_edge_conv_unit(T.Tensor(f), 4, prm.units[0]).data
        out_p = ex.dense_edge_conv_unit(T.Tensor(f[perm]), 4, prm.units[0]).data
        assert np.abs(out_p - out[perm]).max() <= 1e-9

    def test_fully_connected_when_k_equals_n(self):
        # with k == N the graph is complete: nudging one far point's feature
        # must be able to change every output row
        rng = np.random.default_rng(4)
        prm = ex.init_extractor(rng, c0=4, g=6, num_units=1)
        f = rng.normal(size=(6, 4))
        base = ex.dense_edge_conv_unit(T.Tensor(f), 6, prm.units[0]).data
        nudged = f.copy()
        nudged[5] += 3.0  # large enough to win some max slots everywhere
        out = ex.dense_edge_conv_unit(T.Tensor(nudged), 6, prm.units[0]).data
        changed_rows = (np.abs(out - base).max(axis=1) > 0).sum()
        assert changed_rows == 6

    def test_k_exceeds_n(self):
        rng = np.random.default_rng(5)
        prm = ex.init_extractor(rng, c0=4, g=6, num_units=1)
        with pytest.raises(ValueError):
            ex.dense_edge_conv_unit(T.Tensor(rng.normal(size=(3, 4))), 4, prm.units[0])


class TestExtractFeatures:
    def test_full_config_output_width(self):
        # full-scale widths: 24 + 3*208 = 648 channels
        rng = np.random.default_rng(6)
        prm = ex.init_extractor(rng, c0=24, g=208, num_units=3)
        assert prm.out_channels == 648
        pts = T.Tensor(rng.normal(size=(20, 3)))
        assert ex.extract_features(pts, prm, k=16).data.shape == (20, 648)

    def test_desk_config_output_width(self):
        rng = np.random.default_rng(7)
        prm = ex.init_extractor(rng, c0=8, g=24, num_units=3)
        assert prm.out_channels == 80
        pts = T.Tensor(rng.normal(size=(16, 3)))
        assert ex.extract_features(pts, prm, k=4).data.shape == (16, 80)

    def test_channel_budget_generic(self):
        rng = np.random.default_rng(8)
        for c0, g, units in ((4, 2, 1), (10, 6, 4), (3, 8, 2)):
            prm = ex.init_extractor(rng, c0, g, units)
            assert prm.out_channels == c0 + units * g
            pts = T.Tensor(rng.normal(size=(9, 3)))
            assert ex.extract_features(pts, prm, k=3).data.shape == (9, prm.out_channels)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        prm = ex.init_extractor(rng, c0=8, g=24, num_units=3)
        pts = rng.normal(size=(14, 3))
        perm = rng.permutation(14)
        f = ex.extract_features(T.Tensor(pts), prm, k=5).data
        f_p = ex.extract_features(T.Tensor(pts[perm]), prm, k=5).data
        assert np.abs(f_p - f[perm]).max() <= 1e-9

    def test_translation_changes_features(self):
        # coordinates enter the entry MLP absolutely, so translation matters
        rng = np.random.default_rng(10)
        prm = ex.init_extractor(rng, c0=8, g=24, num_units=2)
        pts = rng.normal(size=(10, 3))
        f0 = ex.extract_features(T.Tensor(pts), prm, k=4).data
        f1 = ex.extract_features(T.Tensor(pts + [0.5, -0.3, 0.2]), prm, k=4).data
        assert np.abs(f1 - f0).max() > 1e-6

    def test_requires_at_least_k_points(self):
        rng = np.random.default_rng(11)
        prm = ex.init_extractor(rng, c0=4, g=4, num_units=1)
        with pytest.raises(ValueError):
            ex.extract_features(T.Tensor(rng.normal(size=(3, 3))), prm, k=4)

    def test_odd_g_rejected(self):
        with pytest.raises(ValueError):
            ex.init_extractor(np.random.default_rng(0), c0=4, g=5, num_units=1)
