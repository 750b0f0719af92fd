"""Geometry kernels vs. brute-force oracles, plus sampling statistics and I/O."""

import math

import numpy as np
import pytest

from pup3d import geometry as geo


def brute_knn(ref, queries, k):
    """O(M*Q) oracle: per query, sort all reference rows by (distance, index)."""
    out = np.empty((len(queries), k), dtype=np.int64)
    for qi, q in enumerate(queries):
        d = ((ref - q) ** 2).sum(axis=1)
        order = sorted(range(len(ref)), key=lambda j: (d[j], j))
        out[qi] = order[:k]
    return out


def brute_fps(pts, m, start):
    """Greedy oracle: next index maximizes min distance to selected; low index wins.

    Recomputes the full distance-to-selected-set matrix from scratch every
    step (no incremental state like the implementation keeps).
    """
    chosen = [start]
    for _ in range(m - 1):
        d = ((pts[:, None, :] - pts[chosen][None, :, :]) ** 2).sum(-1).min(axis=1)
        d[chosen] = -1.0  # already selected are not candidates
        chosen.append(int(np.argmax(d)))
    return np.asarray(chosen, dtype=np.int64)


class TestKnn:
    def test_hand_case(self):
        ref = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
        idx = geo.knn(ref, np.array([[0.9, 0, 0]]), 2)
        np.testing.assert_array_equal(idx, [[1, 0]])

    def test_k_equals_m_is_permutation(self):
        rng = np.random.default_rng(0)
        ref = rng.normal(size=(17, 3))
        idx = geo.knn(ref, ref[:1], 17)
        assert sorted(idx[0]) == list(range(17))

    def test_equidistant_tie_lower_index(self):
        ref = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
        idx = geo.knn(ref, np.array([[0.0, 0, 0]]), 1)
        assert idx[0, 0] == 0

    def test_self_knn_includes_self_first(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(20, 3))
        idx = geo.knn(pts, pts, 4)
        np.testing.assert_array_equal(idx[:, 0], np.arange(20))

    def test_matches_brute_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(100):
            m = int(rng.integers(4, 128))
            q = int(rng.integers(1, 128))
            k = int(rng.integers(1, m + 1))
            ref = rng.normal(size=(m, 3))
            queries = rng.normal(size=(q, 3))
            np.testing.assert_array_equal(
                geo.knn(ref, queries, k), brute_knn(ref, queries, k)
            )

    def test_feature_space_rows(self):
        rng = np.random.default_rng(3)
        ref = rng.normal(size=(30, 11))
        queries = rng.normal(size=(7, 11))
        np.testing.assert_array_equal(
            geo.knn(ref, queries, 5), brute_knn(ref, queries, 5)
        )

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            geo.knn(np.zeros((3, 3)), np.zeros((1, 3)), 4)

    def test_grid_path_matches_brute(self):
        # above the threshold the uniform-grid path runs; must match exactly
        rng = np.random.default_rng(4)
        ref = rng.normal(size=(4096, 3))
        queries = np.vstack([rng.normal(size=(40, 3)), ref[:10], ref[:5] * 4.0])
        got = geo._knn_grid(np.ascontiguousarray(ref), np.ascontiguousarray(queries), 16)
        np.testing.assert_array_equal(got, brute_knn(ref, queries, 16))
        full = geo.knn(ref, queries, 16)
        np.testing.assert_array_equal(full, got)

    def test_grid_path_with_exact_ties(self):
        # integer lattice gives many exact distance ties across cell borders
        g = np.arange(15)
        ref = np.array(np.meshgrid(g, g, g)).reshape(3, -1).T.astype(np.float64)
        queries = ref[[0, 7, 1000, 2222]] + 0.5
        got = geo._knn_grid(np.ascontiguousarray(ref), np.ascontiguousarray(queries), 9)
        np.testing.assert_array_equal(got, brute_knn(ref, queries, 9))


class TestFps:
    def test_m1(self):
        assert geo.farthest_point_sample(np.zeros((5, 3)) + np.arange(5)[:, None], 1, 2)[0] == 2

    def test_collinear_hand_case(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
        np.testing.assert_array_equal(geo.farthest_point_sample(pts, 3, start=0), [0, 3, 1])

    def test_m_equals_M_permutation(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(31, 3))
        idx = geo.farthest_point_sample(pts, 31)
        assert sorted(idx) == list(range(31))

    def test_matches_brute_oracle(self):
        rng = np.random.default_rng(6)
        for trial in range(100):
            n = int(rng.integers(2, 256))
            m = int(rng.integers(1, n + 1))
            start = int(rng.integers(0, n))
            pts = rng.normal(size=(n, 3))
            np.testing.assert_array_equal(
                geo.farthest_point_sample(pts, m, start), brute_fps(pts, m, start)
            )

    def test_prefix_property(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(64, 3))
        big = geo.farthest_point_sample(pts, 40, start=3)
        small = geo.farthest_point_sample(pts, 12, start=3)
        np.testing.assert_array_equal(big[:12], small)

    def test_m_out_of_range(self):
        with pytest.raises(ValueError):
            geo.farthest_point_sample(np.zeros((4, 3)), 5)


class TestRandomSubsample:
    def test_full_size(self):
        idx = geo.random_subsample(np.zeros((6, 3)), 6, np.random.default_rng(0))
        assert sorted(idx) == list(range(6))

    def test_deterministic_under_seed(self):
        pts = np.random.default_rng(1).normal(size=(30, 3))
        a = geo.random_subsample(pts, 10, np.random.default_rng(99))
        b = geo.random_subsample(pts, 10, np.random.default_rng(99))
        np.testing.assert_array_equal(a, b)

    def test_uniform_frequencies(self):
        # 10,000 draws of m=1 from 4 points: each frequency within [0.23, 0.27]
        rng = np.random.default_rng(123)
        pts = np.zeros((4, 3))
        counts = np.zeros(4)
        for _ in range(10_000):
            counts[geo.random_subsample(pts, 1, rng)[0]] += 1
        freq = counts / 10_000
        assert (freq >= 0.23).all() and (freq <= 0.27).all()

    def test_m_too_large(self):
        with pytest.raises(ValueError):
            geo.random_subsample(np.zeros((3, 3)), 4, np.random.default_rng(0))


def square_mesh():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1, 0], [0.0, 1, 0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return geo.Mesh(verts, tris)


class TestMeshSampling:
    def test_single_triangle_on_plane(self):
        mesh = geo.Mesh(
            np.array([[0.0, 0, 1], [1.0, 0, 1], [0.0, 1, 1]]), np.array([[0, 1, 2]])
        )
        pts = geo.sample_mesh_uniform(mesh, 500, np.random.default_rng(0))
        assert np.abs(pts[:, 2] - 1.0).max() <= 1e-12

    def test_area_proportional(self):
        # triangles of area 1 and 3: larger gets 75% +- 3% of 10,000 samples
        verts = np.array(
            [[0.0, 0, 0], [2.0, 0, 0], [0.0, 1, 0], [10.0, 0, 0], [10.0 + 2, 0, 0], [10.0, 3, 0]]
        )
        tris = np.array([[0, 1, 2], [3, 4, 5]])
        pts = geo.sample_mesh_uniform(geo.Mesh(verts, tris), 10_000, np.random.default_rng(1))
        frac_large = float((pts[:, 0] >= 9.0).mean())
        assert abs(frac_large - 0.75) <= 0.03

    def test_unit_square_mean(self):
        pts = geo.sample_mesh_uniform(square_mesh(), 10_000, np.random.default_rng(2))
        assert np.abs(pts.mean(axis=0) - [0.5, 0.5, 0.0]).max() <= 0.02

    def test_zero_area_errors(self):
        degenerate = geo.Mesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
        with pytest.raises(ValueError):
            geo.sample_mesh_uniform(degenerate, 10, np.random.default_rng(0))

    def test_poisson_like_count_and_spread(self):
        mesh = square_mesh()
        mins_poisson, mins_uniform = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            ps = geo.poisson_like_sample(mesh, 100, rng)
            us = geo.sample_mesh_uniform(mesh, 100, np.random.default_rng(seed + 1000))
            assert ps.shape == (100, 3)
            for pts, acc in ((ps, mins_poisson), (us, mins_uniform)):
                d = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
                np.fill_diagonal(d, np.inf)
                acc.append(float(np.sqrt(d.min())))
        assert np.median(mins_poisson) > np.median(mins_uniform)

    def test_poisson_like_oversample_validation(self):
        with pytest.raises(ValueError):
            geo.poisson_like_sample(square_mesh(), 10, np.random.default_rng(0), oversample=1)


class TestNormalize:
    def test_already_centered(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(40, 3))
        pts -= pts.mean(axis=0)
        pts /= np.sqrt((pts**2).sum(axis=1).max()) * 2.0  # inside unit ball
        out, rec = geo.normalize_to_unit_sphere(pts)
        assert np.abs(rec.center).max() <= 1e-12
        np.testing.assert_allclose(out * rec.radius, pts, atol=1e-15)

    def test_hand_case(self):
        pts = np.array([[0.0, 0, 0], [0.0, 0, 2]])
        out, rec = geo.normalize_to_unit_sphere(pts)
        np.testing.assert_allclose(out, [[0, 0, -1.0], [0, 0, 1.0]], atol=1e-15)
        np.testing.assert_allclose(rec.center, [0, 0, 1.0])
        assert rec.radius == 1.0

    def test_round_trip(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            pts = rng.normal(size=(17, 3)) * rng.uniform(0.1, 50) + rng.normal(size=3) * 10
            out, rec = geo.normalize_to_unit_sphere(pts)
            assert np.sqrt((out**2).sum(axis=1).max()) <= 1.0 + 1e-12
            back = geo.denormalize(out, rec)
            scale = np.abs(pts).max()
            assert np.abs(back - pts).max() <= 1e-12 * max(scale, 1.0)

    def test_degenerate_uses_radius_one(self):
        pts = np.ones((5, 3))
        out, rec = geo.normalize_to_unit_sphere(pts)
        assert rec.radius == 1.0
        np.testing.assert_array_equal(out, np.zeros((5, 3)))


class TestAugment:
    def test_identity_config(self):
        rng = np.random.default_rng(10)
        inp = rng.normal(size=(12, 3))
        gt = rng.normal(size=(24, 3))
        out_i, out_g = geo.augment(inp, gt, np.random.default_rng(0), geo.AugmentConfig.identity())
        np.testing.assert_array_equal(out_i, inp)
        np.testing.assert_array_equal(out_g, gt)

    def test_distances_scale_by_drawn_factor(self):
        rng = np.random.default_rng(11)
        inp = rng.normal(size=(10, 3))
        gt = rng.normal(size=(20, 3))
        cfg = geo.AugmentConfig(rotate=True, scale_lo=0.5, scale_hi=2.0, shift=0.3)
        out_i, _ = geo.augment(inp, gt, np.random.default_rng(77), cfg)
        # recover the factor the same way augment drew it
        rng2 = np.random.default_rng(77)
        rng2.random(3)  # rotation draw
        scale = rng2.uniform(0.5, 2.0)
        d_in = np.sqrt(((inp[:, None] - inp[None, :]) ** 2).sum(-1))
        d_out = np.sqrt(((out_i[:, None] - out_i[None, :]) ** 2).sum(-1))
        mask = d_in > 0
        np.testing.assert_allclose(d_out[mask] / d_in[mask], scale, rtol=1e-12)

    def test_rotation_is_isometry(self):
        rng = np.random.default_rng(12)
        pts = rng.normal(size=(15, 3))
        rot = geo.random_rotation(np.random.default_rng(5))
        d0 = np.sqrt(((pts[:, None] - pts[None, :]) ** 2).sum(-1))
        rp = pts @ rot.T
        d1 = np.sqrt(((rp[:, None] - rp[None, :]) ** 2).sum(-1))
        assert np.abs(d1 - d0).max() <= 1e-12 * max(1.0, d0.max())

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            geo.AugmentConfig(scale_lo=0.0)
        with pytest.raises(ValueError):
            geo.AugmentConfig(shift=-1.0)


class TestPatches:
    def test_whole_cloud_single_patch(self):
        rng = np.random.default_rng(13)
        pts = rng.normal(size=(20, 3))
        patches = geo.extract_patches(pts, patch_size=20, num_seeds=1)
        assert len(patches) == 1
        np.testing.assert_array_equal(np.sort(patches[0][0]), np.arange(20))

    def test_patch_size_and_seed_membership(self):
        rng = np.random.default_rng(14)
        pts = rng.normal(size=(100, 3))
        seeds = geo.farthest_point_sample(pts, 5, start=0)
        patches = geo.extract_patches(pts, patch_size=15, num_seeds=5)
        for (idx, cloud), seed in zip(patches, seeds):
            assert len(idx) == 15 and cloud.shape == (15, 3)
            assert seed in idx

    def test_sphere_coverage(self):
        rng = np.random.default_rng(15)
        v = rng.normal(size=(1024, 3))
        sphere = v / np.linalg.norm(v, axis=1, keepdims=True)
        patches = geo.extract_patches(sphere, patch_size=256, num_seeds=8)
        covered = np.zeros(1024, dtype=bool)
        for idx, _ in patches:
            covered[idx] = True
        assert covered.all()

    def test_patch_size_too_large(self):
        with pytest.raises(ValueError):
            geo.extract_patches(np.zeros((4, 3)), 5, 1)

    def test_merge_single_patch_permutation(self):
        rng = np.random.default_rng(16)
        pts = rng.normal(size=(12, 3))
        out = geo.merge_patches([pts], 12)
        assert sorted(map(tuple, out)) == sorted(map(tuple, pts))

    def test_merge_two_clusters(self):
        rng = np.random.default_rng(17)
        a = rng.normal(size=(100, 3)) * 0.1
        b = rng.normal(size=(100, 3)) * 0.1 + 100.0
        out = geo.merge_patches([a, b], 2)
        sides = sorted(out[:, 0] > 50.0)
        assert sides == [False, True]

    def test_merge_exact_size_and_no_duplicates(self):
        rng = np.random.default_rng(18)
        clouds = [rng.normal(size=(40, 3)) for _ in range(3)]
        out = geo.merge_patches(clouds, 75)
        assert out.shape == (75, 3)
        assert len({tuple(p) for p in out}) == 75

    def test_merge_insufficient(self):
        with pytest.raises(ValueError):
            geo.merge_patches([np.zeros((3, 3))], 4)


class TestFileFormats:
    def test_xyz_round_trip_f32_exact(self, tmp_path):
        rng = np.random.default_rng(19)
        pts = rng.normal(size=(50, 3)) * rng.uniform(1e-3, 1e3)
        path = tmp_path / "cloud.xyz"
        geo.write_xyz(path, pts)
        back = geo.read_xyz(path)
        assert np.array_equal(back.astype(np.float32), pts.astype(np.float32))

    def test_xyz_lf_endings(self, tmp_path):
        path = tmp_path / "c.xyz"
        geo.write_xyz(path, np.ones((2, 3)))
        raw = path.read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")

    def test_xyz_parse_error_has_line_number(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("1 2 3\n4 5\n")
        with pytest.raises(ValueError, match="bad.xyz:2"):
            geo.read_xyz(path)

    def test_off_round_trip(self, tmp_path):
        mesh = geo.icosphere(1)
        path = tmp_path / "m.off"
        geo.write_off(path, mesh)
        back = geo.read_off(path)
        np.testing.assert_array_equal(back.vertices, mesh.vertices)
        np.testing.assert_array_equal(back.triangles, mesh.triangles)

    def test_off_rejects_quads(self, tmp_path):
        path = tmp_path / "q.off"
        path.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
        with pytest.raises(ValueError, match="triangle"):
            geo.read_off(path)

    def test_off_missing_header(self, tmp_path):
        path = tmp_path / "h.off"
        path.write_text("3 1 0\n")
        with pytest.raises(ValueError, match="OFF"):
            geo.read_off(path)


class TestIcosphere:
    def test_unit_radius_and_valid_mesh(self):
        mesh = geo.icosphere(2)
        r = np.linalg.norm(mesh.vertices, axis=1)
        np.testing.assert_allclose(r, 1.0, atol=1e-12)
        assert (mesh.areas() > 0).all()
        # closed surface: V - E + F == 2
        edges = {
            (min(a, b), max(a, b))
            for tri in mesh.triangles
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))
        }
        euler = len(mesh.vertices) - len(edges) + len(mesh.triangles)
        assert euler == 2
