"""CLI pipeline: container round-trips, generate-data -> train -> upsample ->
evaluate composability, config validation, exit codes."""

import numpy as np
import pytest

from pup3d import cli, geometry as geo, gradcheck

DESK_CFG = """\
ratio = 4
preset = desk
n_patch = 64
n_object = 256
epochs = 2
batch_size = 4
seed = 7
lambda = 0.0
"""


@pytest.fixture()
def mesh_dir(tmp_path):
    d = tmp_path / "meshes"
    d.mkdir()
    geo.write_off(d / "sphere.off", geo.icosphere(2))
    return d


@pytest.fixture()
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(DESK_CFG)
    return p


class TestContainer:
    def test_round_trip_f32_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        patches = [rng.normal(size=(32, 3)) for _ in range(3)]
        ids = ["a", "b", "a"]
        path = tmp_path / "p.bpup"
        cli.write_patch_container(path, patches, ids)
        back, back_ids = cli.read_patch_container(path)
        assert back_ids == ids
        for orig, got in zip(patches, back):
            np.testing.assert_array_equal(got, orig.astype(np.float32).astype(np.float64))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.bpup"
        p.write_bytes(b"WHAT" + b"\x00" * 32)
        with pytest.raises(ValueError, match="BPUP"):
            cli.read_patch_container(p)


class TestGenerateData:
    def test_writes_container_and_pairs(self, tmp_path, mesh_dir, cfg_file, capsys):
        out = tmp_path / "data"
        rc = cli.main(
            ["generate-data", str(mesh_dir), "--out", str(out), "--config", str(cfg_file)]
        )
        assert rc == 0
        patches, ids = cli.read_patch_container(out / "patches.bpup")
        # rn = 4 * 64 = 256 points per patch; coverage-driven count = ceil(3*1024/256)
        assert all(p.shape == (256, 3) for p in patches)
        assert len(patches) == 12
        assert set(ids) == {"sphere"}
        # every normalized patch fits in the unit ball
        for p in patches:
            assert np.sqrt((p**2).sum(axis=1)).max() <= 1.0 + 1e-6
        gt = geo.read_xyz(out / "sphere_gt.xyz")
        inp = geo.read_xyz(out / "sphere_input.xyz")
        assert gt.shape == (1024, 3) and inp.shape == (256, 3)
        # Monte-Carlo input is a subset of the dense cloud
        gt_set = {tuple(p) for p in gt}
        assert all(tuple(p) in gt_set for p in inp)

    def test_explicit_patch_count(self, tmp_path, mesh_dir):
        # one sphere mesh, ground-truth patches of 1024 points, 8 seeds
        cfg = tmp_path / "eight.cfg"
        cfg.write_text(
            "ratio = 4\npreset = desk\nn_patch = 256\nn_object = 256\n"
            "patches_per_object = 8\n"
        )
        out = tmp_path / "d8"
        assert cli.main(
            ["generate-data", str(mesh_dir), "--out", str(out), "--config", str(cfg)]
        ) == 0
        patches, ids = cli.read_patch_container(out / "patches.bpup")
        assert len(patches) == 8
        assert all(p.shape == (1024, 3) for p in patches)

    def test_empty_dir_is_data_error(self, tmp_path, cfg_file):
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = cli.main(
            ["generate-data", str(empty), "--out", str(tmp_path / "o"), "--config", str(cfg_file)]
        )
        assert rc == 2


class TestTrainCommand:
    def test_end_to_end_artifacts(self, tmp_path, mesh_dir, cfg_file):
        data_dir = tmp_path / "data"
        assert cli.main(
            ["generate-data", str(mesh_dir), "--out", str(data_dir), "--config", str(cfg_file)]
        ) == 0
        ckpt = tmp_path / "model.bpuc"
        rc = cli.main(
            ["train", str(data_dir / "patches.bpup"), "--config", str(cfg_file),
             "--out", str(ckpt)]
        )
        assert rc == 0
        assert ckpt.exists()
        log = tmp_path / "model.bpuc.loss.csv"
        lines = log.read_text().splitlines()
        assert lines[0] == "epoch,lr,joint,cd_scale1,cd_scale2"
        assert len(lines) == 3  # header + 2 epochs

    def test_rerun_same_seed_identical_csv(self, tmp_path, mesh_dir, cfg_file):
        data_dir = tmp_path / "data"
        cli.main(["generate-data", str(mesh_dir), "--out", str(data_dir), "--config", str(cfg_file)])
        c1, c2 = tmp_path / "a.bpuc", tmp_path / "b.bpuc"
        for ck in (c1, c2):
            assert cli.main(
                ["train", str(data_dir / "patches.bpup"), "--config", str(cfg_file),
                 "--out", str(ck)]
            ) == 0
        log1 = (tmp_path / "a.bpuc.loss.csv").read_bytes()
        log2 = (tmp_path / "b.bpuc.loss.csv").read_bytes()
        assert log1 == log2
        assert c1.read_bytes() == c2.read_bytes()

    def test_container_patch_size_mismatch(self, tmp_path, cfg_file):
        box = tmp_path / "p.bpup"
        cli.write_patch_container(box, [np.zeros((16, 3))], ["x"])
        rc = cli.main(["train", str(box), "--config", str(cfg_file), "--out", str(tmp_path / "c")])
        assert rc == 2

    def test_missing_config_key_names_it(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("preset = desk\n")
        box = tmp_path / "p.bpup"
        cli.write_patch_container(box, [np.zeros((16, 3))], ["x"])
        rc = cli.main(["train", str(box), "--config", str(bad), "--out", str(tmp_path / "c")])
        assert rc == 2
        assert "ratio" in capsys.readouterr().err

    def test_nonfinite_loss_exits_3(self, tmp_path, capsys):
        cfg = tmp_path / "blow.cfg"
        cfg.write_text("ratio = 4\nn_patch = 16\nepochs = 3\nk = 4\nlr0 = 1e155\n")
        box = tmp_path / "p.bpup"
        rng = np.random.default_rng(0)
        cli.write_patch_container(box, [rng.normal(size=(64, 3)) for _ in range(2)], ["a", "b"])
        with np.errstate(all="ignore"):
            rc = cli.main(["train", str(box), "--config", str(cfg), "--out", str(tmp_path / "c")])
        assert rc == 3
        assert "non-finite" in capsys.readouterr().err

    def test_unknown_config_key_names_it(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("ratio = 4\nlerning_rate = 0.1\n")
        box = tmp_path / "p.bpup"
        cli.write_patch_container(box, [np.zeros((16, 3))], ["x"])
        rc = cli.main(["train", str(box), "--config", str(bad), "--out", str(tmp_path / "c")])
        assert rc == 2
        assert "lerning_rate" in capsys.readouterr().err


class TestUpsampleEvaluate:
    @pytest.fixture()
    def trained(self, tmp_path, mesh_dir, cfg_file):
        data_dir = tmp_path / "data"
        cli.main(["generate-data", str(mesh_dir), "--out", str(data_dir), "--config", str(cfg_file)])
        ckpt = tmp_path / "model.bpuc"
        cli.main(["train", str(data_dir / "patches.bpup"), "--config", str(cfg_file),
                  "--out", str(ckpt)])
        return data_dir, ckpt

    def test_upsample_exact_count_and_determinism(self, tmp_path, trained):
        data_dir, ckpt = trained
        out1, out2 = tmp_path / "up1.xyz", tmp_path / "up2.xyz"
        for out in (out1, out2):
            rc = cli.main(
                ["upsample", str(data_dir / "sphere_input.xyz"), "--checkpoint", str(ckpt),
                 "--out", str(out), "--ratio", "4"]
            )
            assert rc == 0
        pts = geo.read_xyz(out1)
        assert pts.shape == (4 * 256, 3)  # exactly r * M points
        assert out1.read_bytes() == out2.read_bytes()

    def test_upsample_ratio_mismatch(self, tmp_path, trained):
        data_dir, ckpt = trained
        rc = cli.main(
            ["upsample", str(data_dir / "sphere_input.xyz"), "--checkpoint", str(ckpt),
             "--out", str(tmp_path / "o.xyz"), "--ratio", "16"]
        )
        assert rc == 2

    def test_upsample_too_few_points(self, tmp_path, trained):
        _, ckpt = trained
        tiny = tmp_path / "tiny.xyz"
        geo.write_xyz(tiny, np.random.default_rng(0).normal(size=(10, 3)))
        rc = cli.main(
            ["upsample", str(tiny), "--checkpoint", str(ckpt), "--out", str(tmp_path / "o.xyz")]
        )
        assert rc == 2

    def test_evaluate_identity_row(self, tmp_path, capsys):
        pts = np.random.default_rng(1).normal(size=(64, 3))
        p = tmp_path / "same.xyz"
        geo.write_xyz(p, pts)
        rc = cli.main(["evaluate", str(p), str(p)])
        assert rc == 0
        out = capsys.readouterr().out.strip()
        assert out == "same\t0\t0"

    def test_evaluate_hand_value_and_p2f_column(self, tmp_path, capsys, mesh_dir):
        a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
        geo.write_xyz(a, np.array([[0.0, 0, 0]]))
        geo.write_xyz(b, np.array([[3.0, 4.0, 0]]))
        assert cli.main(["evaluate", str(a), str(b)]) == 0
        row = capsys.readouterr().out.strip().split("\t")
        assert row == ["a", "50000", "5000"]  # CD=50, HD=5 in 1e-3 units
        assert cli.main(
            ["evaluate", str(a), str(b), "--mesh", str(mesh_dir / "sphere.off")]
        ) == 0
        row = capsys.readouterr().out.strip().split("\t")
        assert len(row) == 4  # P2F column present

    def test_evaluate_malformed_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.xyz"
        bad.write_text("1 2 3\nnope\n")
        ok = tmp_path / "ok.xyz"
        geo.write_xyz(ok, np.ones((2, 3)))
        rc = cli.main(["evaluate", str(bad), str(ok)])
        assert rc == 2
        assert "bad.xyz:2" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_passes_and_lists_every_op_once(self, capsys):
        rc = cli.main(["gradcheck", "--seeds", "1"])
        assert rc == 0
        out = capsys.readouterr().out
        names = [line.split()[0] for line in out.splitlines()[1:] if line.strip()]
        assert sorted(names) == sorted(n for n, _ in gradcheck.REGISTRY)
        assert len(names) == len(set(names))

    def test_corrupted_gradient_reported(self, capsys):
        gradcheck.CORRUPT.add("gather_rows")
        try:
            rc = cli.main(["gradcheck", "--seeds", "1"])
        finally:
            gradcheck.CORRUPT.discard("gather_rows")
        assert rc == 3
        out = capsys.readouterr().out
        fail_lines = [ln for ln in out.splitlines() if ln.endswith("FAIL")]
        assert len(fail_lines) == 1 and fail_lines[0].startswith("gather_rows")


class TestBenchCommand:
    def test_smoke(self, capsys):
        rc = cli.main(["bench", "--scale", "0.05"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "selected backend" in out and "knn coords" in out


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert cli.main(["upsample"]) == 1

    def test_unknown_command(self):
        assert cli.main(["frobnicate"]) == 1

    def test_missing_file_is_data_error(self, tmp_path):
        rc = cli.main(
            ["evaluate", str(tmp_path / "nope.xyz"), str(tmp_path / "nope2.xyz")]
        )
        assert rc == 2
