import numpy as np
import pytest

from splinefield import cli, dataio, trainer
from splinefield.cli import main
from splinefield.field import DivergenceError


def _gen(tmp_path, kind="rigid-translate", points=40, frames=9, seed=0):
    path = tmp_path / "scene.traj"
    assert main(["gen", "--kind", kind, "--points", str(points),
                 "--frames", str(frames), "--seed", str(seed),
                 "--out", str(path)]) == 0
    return path


def _fit(tmp_path, traj_path, extra=()):
    ckpt = tmp_path / "field.ckpt"
    rc = main(["fit", "--traj", str(traj_path), "--out", str(ckpt),
               "--stride", "2", "--frac", "1.0", "--steps", "10",
               "--set", "rank=2", "--set", "hidden=16", "--set", "depth=2",
               "--set", "knn_k=4", *extra])
    assert rc == 0
    return ckpt


class TestGen:
    def test_file_size_formula(self, tmp_path):
        path = _gen(tmp_path, points=100, frames=16)
        assert path.stat().st_size == 16 + 4 * 16 * 100 * 3

    def test_missing_out_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--kind", "rotate"])
        assert exc.value.code == 2

    def test_same_seed_byte_identical(self, tmp_path):
        a = _gen(tmp_path, seed=7)
        b = tmp_path / "again.traj"
        main(["gen", "--kind", "rigid-translate", "--points", "40",
              "--frames", "9", "--seed", "7", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestFit:
    def test_logs_knot_count(self, tmp_path, capsys):
        traj = tmp_path / "long.traj"
        dataio.write_traj(traj, dataio.gen_synthetic("rigid-translate", 10, 120,
                                                     seed=0))
        ckpt = tmp_path / "f.ckpt"
        rc = main(["fit", "--traj", str(traj), "--out", str(ckpt),
                   "--stride", "4", "--K", "2", "--steps", "1",
                   "--set", "rank=1", "--set", "hidden=8", "--set", "depth=1",
                   "--set", "knn_k=3", "--frac", "1.0"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "15 knots" in out   # 30 train frames / 2

    def test_default_regularizer_weights(self):
        parser = cli._build_parser()
        args = parser.parse_args(["fit", "--traj", "x", "--out", "y"])
        assert args.alpha == 1.0 and args.beta == 0.01
        assert args.K == 2 and args.frac == 0.25 and args.K_neighbors == 10

    def test_rerun_same_seed_byte_identical_checkpoint(self, tmp_path,
                                                       monkeypatch):
        monkeypatch.setenv("SDF_THREADS", "0")
        traj = _gen(tmp_path)
        c1 = _fit(tmp_path, traj)
        blob1 = c1.read_bytes()
        c2 = _fit(tmp_path, traj)
        assert blob1 == c2.read_bytes()

    def test_missing_traj_is_io_error(self, tmp_path):
        rc = main(["fit", "--traj", str(tmp_path / "nope.traj"),
                   "--out", str(tmp_path / "f.ckpt")])
        assert rc == 1

    def test_divergence_maps_to_exit_3(self, tmp_path, monkeypatch):
        traj = _gen(tmp_path)

        def boom(*a, **kw):
            raise DivergenceError("non-finite loss at step 0")

        monkeypatch.setattr(trainer, "train", boom)
        rc = main(["fit", "--traj", str(traj), "--out",
                   str(tmp_path / "f.ckpt")])
        assert rc == 3


class TestEval:
    def test_report_rows_match_test_frames(self, tmp_path):
        traj = _gen(tmp_path)
        ckpt = _fit(tmp_path, traj)
        report = tmp_path / "report.csv"
        rc = main(["eval", "--ckpt", str(ckpt), "--traj", str(traj),
                   "--stride", "2", "--report", str(report)])
        assert rc == 0
        lines = report.read_text().strip().splitlines()
        assert len(lines) - 1 == 4   # 9 frames, stride 2 -> 4 held out

    def test_corrupt_checkpoint_is_io_error(self, tmp_path):
        traj = _gen(tmp_path)
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage!")
        assert main(["eval", "--ckpt", str(bad), "--traj", str(traj)]) == 1


class TestInterpAdvectFlow:
    def test_interp_writes_frames(self, tmp_path):
        traj = _gen(tmp_path)
        ckpt = _fit(tmp_path, traj)
        out = tmp_path / "interp.traj"
        rc = main(["interp", "--ckpt", str(ckpt), "--times", "0.0,0.5,1.0",
                   "--out", str(out)])
        assert rc == 0
        assert dataio.read_traj(out).n_frames == 3

    def test_interp_rejects_out_of_range_times(self, tmp_path):
        traj = _gen(tmp_path)
        ckpt = _fit(tmp_path, traj)
        rc = main(["interp", "--ckpt", str(ckpt), "--times", "1.5",
                   "--out", str(tmp_path / "x.traj")])
        assert rc == 2

    def test_advect_dt_zero_equals_deform(self, tmp_path):
        from splinefield.field import SplineField
        traj = _gen(tmp_path)
        ckpt = _fit(tmp_path, traj)
        out = tmp_path / "adv.ply"
        rc = main(["advect", "--ckpt", str(ckpt), "--from-t", "0.5",
                   "--dt", "0.0", "--out", str(out)])
        assert rc == 0
        fld = SplineField.load(ckpt)
        expected = fld.deform(fld.canonical, 0.5)
        lines = out.read_text().splitlines()
        body = lines[lines.index("end_header") + 1:]
        got = np.array([[float(x) for x in line.split()] for line in body])
        np.testing.assert_allclose(got, expected, atol=1e-5)

    def test_flow_emits_requested_count(self, tmp_path):
        traj = _gen(tmp_path)
        ckpt = _fit(tmp_path, traj)
        rc = main(["flow", "--ckpt", str(ckpt), "--frames", "6",
                   "--out-prefix", str(tmp_path / "flow")])
        assert rc == 0
        assert len(list(tmp_path.glob("flow_*.ply"))) == 6


class TestEnv:
    def test_bad_threads_value(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SDF_THREADS", "banana")
        assert main(["gen", "--kind", "rotate", "--points", "5",
                     "--frames", "3", "--out", str(tmp_path / "t.traj")]) == 2
