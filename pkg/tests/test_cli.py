import numpy as np
import pytest

from gbpgrid import cli, io as gio
from gbpgrid.cli import main

CONVERGING_FLAGS = [
    "--iterations", "150", "--nonlocal-steps", "3", "--lambda-smooth", "0.02",
    "--k-nonlocal", "6", "--search-radius", "14", "--min-distance", "6",
]


@pytest.fixture
def scene(tmp_path):
    """Small synthetic scene on disk: guide, ground truth, sparse sample."""
    rng = np.random.default_rng(8)
    guide = gio.DepthGrid(rng.uniform(0.4, 0.6, (16, 16, 3)))
    gt = gio.DepthGrid(rng.uniform(1.0, 5.0, (16, 16)))
    guide_p = tmp_path / "guide.pfm"
    gt_p = tmp_path / "gt.pfm"
    gio.write_pfm(guide, guide_p)
    gio.write_pfm(gt, gt_p)
    sparse_p = tmp_path / "sparse.csv"
    gio.write_sparse_csv(gio.sample_sparse(gt, 26, seed=0), sparse_p)
    return {"guide": guide_p, "gt": gt_p, "sparse": sparse_p, "dir": tmp_path}


class TestSynthAndSample:
    def test_synth_writes_scene(self, tmp_path):
        rc = main([
            "synth", "--height", "24", "--width", "30", "--seed", "3",
            "--out-gt", str(tmp_path / "gt.pfm"),
            "--out-guide", str(tmp_path / "guide.pfm"),
        ])
        assert rc == 0
        gt = gio.read_pfm(tmp_path / "gt.pfm")
        guide = gio.read_pfm(tmp_path / "guide.pfm")
        assert gt.data.shape == (24, 30)
        assert guide.channels == 3
        assert np.all(gt.data > 0)

    def test_sample_matches_library_call(self, scene):
        out = scene["dir"] / "s.csv"
        rc = main(["sample", "--gt", str(scene["gt"]), "--n-points", "40",
                   "--seed", "5", "--out", str(out)])
        assert rc == 0
        back = gio.read_sparse_csv(out, 16, 16)
        gt = gio.read_pfm(scene["gt"])
        direct = gio.sample_sparse(gt, 40, seed=5)
        assert np.array_equal(back.valid_mask, direct.valid_mask)


class TestComplete:
    def test_pipeline_and_eval(self, scene, capsys):
        mu_p = scene["dir"] / "mu.pfm"
        lam_p = scene["dir"] / "lam.pfm"
        rc = main([
            "complete", "--guide", str(scene["guide"]),
            "--sparse", str(scene["sparse"]),
            "--out-mu", str(mu_p), "--out-lambda", str(lam_p),
        ])
        assert rc == 0
        echo = capsys.readouterr().out
        assert "iterations=5" in echo
        mu = gio.read_pfm(mu_p)
        lam = gio.read_pfm(lam_p)
        assert np.all(lam.data >= 0)
        assert mu.valid_mask.all()

        rc = main(["eval", "--pred-mu", str(mu_p), "--pred-lambda", str(lam_p),
                   "--gt", str(scene["gt"]), "--json"])
        assert rc == 0
        import json
        report = json.loads(capsys.readouterr().out)
        assert report["n_valid"] == 256
        assert report["rmse"] >= 0

    def test_deterministic_outputs_bitwise(self, scene, monkeypatch):
        outs = []
        for attempt, threads in enumerate(("1", "8")):
            monkeypatch.setenv("GBPN_THREADS", threads)
            mu_p = scene["dir"] / f"mu{attempt}.pfm"
            rc = main([
                "complete", "--guide", str(scene["guide"]),
                "--sparse", str(scene["sparse"]), "--out-mu", str(mu_p),
                "--seed", "7",
            ])
            assert rc == 0
            outs.append(mu_p.read_bytes())
        assert outs[0] == outs[1]

    def test_config_echo_round_trip(self, scene):
        mu_a = scene["dir"] / "a.pfm"
        mu_b = scene["dir"] / "b.pfm"
        cfg_p = scene["dir"] / "run.cfg"
        rc = main([
            "complete", "--guide", str(scene["guide"]),
            "--sparse", str(scene["sparse"]), "--out-mu", str(mu_a),
            "--iterations", "7", "--lambda-smooth", "0.5", "--k-nonlocal", "1",
            "--dump-config", str(cfg_p),
        ])
        assert rc == 0
        rc = main([
            "complete", "--guide", str(scene["guide"]),
            "--sparse", str(scene["sparse"]), "--out-mu", str(mu_b),
            "--config", str(cfg_p),
        ])
        assert rc == 0
        assert mu_a.read_bytes() == mu_b.read_bytes()

    def test_trace_goes_to_stderr(self, scene, capsys):
        rc = main([
            "complete", "--guide", str(scene["guide"]),
            "--sparse", str(scene["sparse"]),
            "--out-mu", str(scene["dir"] / "mu.pfm"), "--trace",
            "--iterations", "3",
        ])
        assert rc == 0
        err = capsys.readouterr().err
        assert len([ln for ln in err.splitlines() if "\t" in ln]) == 3


class TestOracleCommand:
    def test_matches_complete_at_convergence(self, scene):
        mu_gbp = scene["dir"] / "gbp.pfm"
        mu_star = scene["dir"] / "star.pfm"
        args = ["--guide", str(scene["guide"]), "--sparse", str(scene["sparse"])]
        assert main(["complete", *args, "--out-mu", str(mu_gbp), *CONVERGING_FLAGS]) == 0
        assert main(["oracle", *args, "--out-mu", str(mu_star), *CONVERGING_FLAGS]) == 0
        a = gio.read_pfm(mu_gbp).data
        b = gio.read_pfm(mu_star).data
        assert np.sqrt(np.mean((a - b) ** 2)) < 1e-6

    def test_singular_input_exits_3(self, scene):
        empty = scene["dir"] / "empty.csv"
        empty.write_text("")
        rc = main([
            "oracle", "--guide", str(scene["guide"]),
            "--sparse", str(empty),
            "--out-mu", str(scene["dir"] / "x.pfm"),
        ])
        assert rc == 3


class TestErrorPaths:
    def test_usage_error_exits_1(self, capsys):
        assert main(["complete", "--no-such-flag"]) == 1

    def test_unknown_subcommand_exits_1(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_missing_file_exits_2(self, tmp_path, capsys):
        rc = main([
            "complete", "--guide", str(tmp_path / "nope.pfm"),
            "--sparse", str(tmp_path / "nope.csv"),
            "--out-mu", str(tmp_path / "mu.pfm"),
        ])
        assert rc == 2

    def test_unknown_config_key_rejected(self, scene, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_key=3\n")
        rc = main([
            "complete", "--guide", str(scene["guide"]),
            "--sparse", str(scene["sparse"]),
            "--out-mu", str(tmp_path / "mu.pfm"), "--config", str(bad),
        ])
        assert rc == 2

    def test_shape_mismatch_exits_2(self, scene, tmp_path):
        small = tmp_path / "small.pfm"
        gio.write_pfm(gio.DepthGrid(np.ones((4, 4))), small)
        rc = main(["eval", "--pred-mu", str(small), "--gt", str(scene["gt"])])
        assert rc == 2


class TestSweepDensity:
    def test_table_shape_and_density_column(self, scene, capsys):
        rc = main([
            "sweep-density", "--gt", str(scene["gt"]),
            "--guide", str(scene["guide"]),
            "--point-counts", "20,80", "--seeds", "2",
            "--iterations", "3",
        ])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        header = lines[0].split("\t")
        assert header[0] == "points"
        assert "rmse" in header
        assert [row.split("\t")[0] for row in lines[1:]] == ["20", "80"]

    def test_single_seed_matches_direct_evaluate(self, scene, capsys):
        rc = main([
            "sweep-density", "--gt", str(scene["gt"]),
            "--guide", str(scene["guide"]),
            "--point-counts", "30", "--seeds", "1",
            "--iterations", "4", "--seed", "2",
        ])
        assert rc == 0
        row = capsys.readouterr().out.strip().splitlines()[1].split("\t")

        from gbpgrid import engine, metrics
        guide = gio.read_pfm(scene["guide"])
        gt = gio.read_pfm(scene["gt"])
        cfg = cli.RunConfig(iterations=4, seed=2)
        g = cli.build_graph(guide, cfg)
        sparse = gio.sample_sparse(gt, 30, seed=2)
        params = cli.build_params(guide, sparse, g, cfg)
        res = engine.run(params, g, cfg.solver_config())
        mu, lam = cli._belief_grids(res.beliefs)
        expect = metrics.evaluate(mu, lam, gt)
        assert float(row[1]) == pytest.approx(expect.rmse, rel=1e-4)
