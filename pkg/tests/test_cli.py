import csv
import json
from pathlib import Path

import pytest

from leoroute import cli, gnn, oracle

TINY_CONFIG = """
num_planes = 4
sats_per_plane = 6
altitude_km = 1050.0
inclination_deg = 53.0
phase_factor = 1
comm_range_km = 6000.0
isl_policy = range
snapshot_count = 2
snapshot_cadence_s = 200.0
"""


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestConstellationCmd:
    def test_writes_snapshots_and_manifest(self, tmp_path, config_path, capsys):
        out = tmp_path / "snaps"
        assert cli.main(["constellation", "--config", str(config_path), "--out", str(out)]) == 0
        files = sorted(p.name for p in out.glob("snapshot_*.json"))
        assert files == ["snapshot_0000.json", "snapshot_0001.json"]
        captured = capsys.readouterr().out
        assert "nodes=24" in captured
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "constellation"
        assert manifest["config"]["num_planes"] == 4
        for rel in manifest["artifacts"].values():
            assert Path(rel).exists()

    def test_single_satellite_empty_links(self, tmp_path, capsys):
        cfg = tmp_path / "one.cfg"
        cfg.write_text(
            "num_planes = 1\nsats_per_plane = 1\naltitude_km = 1050\n"
            "inclination_deg = 0\nphase_factor = 0\ncomm_range_km = 3500\n"
        )
        out = tmp_path / "snaps"
        assert cli.main(["constellation", "--config", str(cfg), "--out", str(out)]) == 0
        doc = json.loads((out / "snapshot_0000.json").read_text())
        assert doc["n"] == 1 and doc["links"] == []

    def test_identical_runs_identical_files(self, tmp_path, config_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        cli.main(["constellation", "--config", str(config_path), "--out", str(out_a)])
        cli.main(["constellation", "--config", str(config_path), "--out", str(out_b)])
        for name in ("snapshot_0000.json", "snapshot_0001.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_bad_config_nonzero_exit(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("num_planes = 0\nsats_per_plane = 1\naltitude_km = 1050\n"
                       "inclination_deg = 0\nphase_factor = 0\ncomm_range_km = 3500\n")
        assert cli.main(["constellation", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
        assert "num_planes" in capsys.readouterr().err

    def test_set_overrides_win(self, tmp_path, config_path, capsys):
        out = tmp_path / "snaps"
        code = cli.main(["constellation", "--config", str(config_path),
                         "--set", "sats_per_plane=3", "--out", str(out)])
        assert code == 0
        assert "nodes=12" in capsys.readouterr().out


class TestDatasetCmd:
    def test_build_and_report(self, tmp_path, config_path, capsys):
        out = tmp_path / "tiny.ds"
        code = cli.main(["dataset", "--config", str(config_path), "--out", str(out),
                         "--destinations", "3", "--seed", "9"])
        assert code == 0
        assert "samples=6" in capsys.readouterr().out
        ds = oracle.load_dataset(out)
        assert len(ds.samples) == 6

    def test_determinism_byte_identical(self, tmp_path, config_path):
        a, b = tmp_path / "a.ds", tmp_path / "b.ds"
        for out in (a, b):
            cli.main(["dataset", "--config", str(config_path), "--out", str(out),
                      "--destinations", "3", "--seed", "9"])
        assert a.read_bytes() == b.read_bytes()

    def test_zero_snapshots_error_exit(self, tmp_path, config_path, capsys):
        out = tmp_path / "x.ds"
        code = cli.main(["dataset", "--config", str(config_path), "--out", str(out),
                         "--set", "snapshot_count=0"])
        assert code == 1
        assert "snapshot_count" in capsys.readouterr().err


class TestTrainCmd:
    @pytest.fixture
    def dataset_path(self, tmp_path, config_path):
        out = tmp_path / "tiny.ds"
        cli.main(["dataset", "--config", str(config_path), "--out", str(out),
                  "--destinations", "4", "--seed", "3"])
        return out

    def test_train_writes_model_and_curve(self, tmp_path, dataset_path, capsys):
        model = tmp_path / "m.params"
        code = cli.main(["train", "--dataset", str(dataset_path), "--out", str(model),
                         "--epochs", "8", "--hidden", "8", "--seed", "1"])
        assert code == 0
        params = gnn.load_params(model)
        assert params.hidden == 8
        curve = read_csv(Path(str(model) + ".train.csv"))
        assert len(curve) == 8
        losses = [float(r["train_loss"]) for r in curve]
        assert losses[-1] < losses[0]
        out = capsys.readouterr().out
        assert "epoch=1 " in out and "best_epoch=" in out

    def test_beta_shrinks_weight_norm(self, tmp_path, dataset_path):
        norms = {}
        for beta in ("0", "0.01"):
            model = tmp_path / f"m{beta}.params"
            cli.main(["train", "--dataset", str(dataset_path), "--out", str(model),
                      "--epochs", "30", "--hidden", "8", "--beta", beta, "--seed", "1"])
            norms[beta] = gnn.load_params(model).squared_weight_norm()
        assert norms["0.01"] <= norms["0"]

    def test_missing_dataset_nonzero_exit(self, tmp_path, capsys):
        code = cli.main(["train", "--dataset", str(tmp_path / "nope.ds"),
                         "--out", str(tmp_path / "m.params")])
        assert code == 1

    def test_model_determinism(self, tmp_path, dataset_path):
        a, b = tmp_path / "a.params", tmp_path / "b.params"
        for out in (a, b):
            cli.main(["train", "--dataset", str(dataset_path), "--out", str(out),
                      "--epochs", "5", "--hidden", "8", "--seed", "4"])
        assert a.read_bytes() == b.read_bytes()


class TestEvalCmd:
    def test_p_sweep_row_accounting(self, tmp_path, config_path):
        out = tmp_path / "results.csv"
        code = cli.main(["eval", "--config", str(config_path), "--out", str(out),
                         "--algorithms", "TBR,TSR,CGR", "--packets", "10",
                         "--p-values", "0,0.02,0.04,0.06,0.08", "--seed", "2"])
        assert code == 0
        rows = read_csv(out)
        assert len(rows) == 5 * 3
        manifest = json.loads(Path(str(out) + ".manifest.json").read_text())
        assert manifest["subcommand"] == "eval"
        assert manifest["config"]["p_values"] == [0, 0.02, 0.04, 0.06, 0.08]

    def test_scale_sweep_populates_compute_columns(self, tmp_path, config_path):
        out = tmp_path / "scales.csv"
        code = cli.main(["eval", "--config", str(config_path), "--out", str(out),
                         "--algorithms", "TBR", "--packets", "5",
                         "--scales", "4x6,5x6", "--seed", "2"])
        assert code == 0
        rows = read_csv(out)
        assert [r["scale"] for r in rows] == ["24", "30"]
        for row in rows:
            assert float(row["median_packet_compute_s"]) > 0.0
            assert float(row["total_compute_s"]) > 0.0

    def test_glr_without_model_errors(self, tmp_path, config_path, capsys):
        code = cli.main(["eval", "--config", str(config_path),
                         "--out", str(tmp_path / "x.csv"),
                         "--algorithms", "GLR,TBR", "--packets", "5"])
        assert code == 1
        assert "model" in capsys.readouterr().err

    def test_outcome_columns_deterministic(self, tmp_path, config_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            cli.main(["eval", "--config", str(config_path), "--out", str(out),
                      "--algorithms", "TBR,CGR", "--packets", "12",
                      "--p-values", "0.05", "--seed", "6"])
            stable = [
                {k: r[k] for k in ("algorithm", "scale", "p", "packets", "delivered",
                                   "dropped", "drop_rate", "mean_delay_s", "mean_hops",
                                   "decisions_per_packet")}
                for r in read_csv(out)
            ]
            outs.append(stable)
        assert outs[0] == outs[1]


class TestGradcheckCmd:
    def test_passes_and_reports_tensors(self, capsys):
        assert cli.main(["gradcheck", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "gradcheck PASS" in out
        for name in ("low_w1", "high_w2", "dense_b1", "dense_w2"):
            assert name in out

    def test_perturbed_gradient_detected(self):
        def corrupted(params, sample, cache, beta=0.0):
            grads = gnn.backward(params, sample, cache, beta)
            grads.dense_w2[0, 0] += 0.05
            return grads

        worst, _ = cli.run_gradcheck(seed=1, gradients_fn=corrupted)
        assert worst["dense_w2"] >= cli.GRADCHECK_TOLERANCE

    def test_cli_version_runs(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0
