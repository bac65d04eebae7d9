"""CLI tests: verbs end to end, byte-identical reports, exit codes."""

import json

import numpy as np
import pytest

from sumskip.cli import main


BLOBS = "blobs:5,120,8,3,0.5"


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "mlp"
    rc = main(["train", "--arch", "mlp:8-16-3", "--data", BLOBS,
               "--out", str(out), "--seed", "1", "--epochs", "5", "--lr", "0.1"])
    assert rc == 0
    return out


class TestTrainEval:
    def test_eval_plain_baseline(self, model_dir, tmp_path, capsys):
        report = tmp_path / "report.csv"
        rc = main(["eval", "--model", str(model_dir), "--data", BLOBS,
                   "--report", str(report)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "normalized FLOPs 1.0000" in out
        lines = report.read_text().splitlines()
        assert lines[0] == "layer,kind,param,flops,prunes,mispredicts"
        assert lines[-1].startswith("total,")

    def test_reports_byte_identical(self, model_dir, tmp_path):
        cfg = {"schema_version": 1, "order": "natural",
               "layers": {"dense1": {"kind": "statstest", "alpha": 0.2, "k": 4}},
               "head": {"kind": "none"}}
        cfg_path = tmp_path / "prune.json"
        cfg_path.write_text(json.dumps(cfg))
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for p in paths:
            rc = main(["eval", "--model", str(model_dir), "--data", BLOBS,
                       "--prune-config", str(cfg_path), "--report", str(p),
                       "--shadow-oracle"])
            assert rc == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_threads_do_not_change_report(self, model_dir, tmp_path):
        a, b = tmp_path / "t1.csv", tmp_path / "t2.csv"
        main(["eval", "--model", str(model_dir), "--data", BLOBS, "--report", str(a)])
        main(["eval", "--model", str(model_dir), "--data", BLOBS, "--report", str(b),
              "--threads", "3"])
        assert a.read_bytes() == b.read_bytes()

    def test_svg_emitted(self, model_dir, tmp_path):
        svg = tmp_path / "plot.svg"
        main(["eval", "--model", str(model_dir), "--data", BLOBS,
              "--report", str(tmp_path / "r.csv"), "--svg", str(svg)])
        text = svg.read_text()
        assert text.startswith("<svg")
        assert "normalized FLOPs" in text and "fidelity" in text

    def test_missing_model_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--data", BLOBS, "--report", "r.csv"])
        assert exc.value.code == 2

    def test_bad_model_dir_exits_1(self, tmp_path, capsys):
        rc = main(["eval", "--model", str(tmp_path / "nope"), "--data", BLOBS,
                   "--report", str(tmp_path / "r.csv")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_data_spec_exits_1(self, model_dir, tmp_path, capsys):
        rc = main(["eval", "--model", str(model_dir), "--data", "nonsense:1",
                   "--report", str(tmp_path / "r.csv")])
        assert rc == 1


class TestSweepCli:
    def test_sweep_with_confirmation(self, model_dir, tmp_path, capsys):
        report = tmp_path / "sweep.csv"
        confirm = tmp_path / "confirm.csv"
        rc = main(["sweep", "--model", str(model_dir), "--data", BLOBS,
                   "--kind", "statstest", "--k", "4", "--trials", "8", "--slices", "3",
                   "--seed", "0", "--report", str(report),
                   "--test-data", BLOBS, "--confirm-report", str(confirm),
                   "--svg", str(tmp_path / "sweep.svg")])
        assert rc == 0
        lines = report.read_text().splitlines()
        assert lines[0].startswith("trial,") and lines[0].endswith("val_fidelity,val_flops,slice")
        assert len(lines) == 9
        assert confirm.read_text().splitlines()[0].startswith("trial,val_fidelity")

    def test_sweep_deterministic(self, model_dir, tmp_path):
        a, b = tmp_path / "s1.csv", tmp_path / "s2.csv"
        for p in (a, b):
            main(["sweep", "--model", str(model_dir), "--data", BLOBS,
                  "--k", "4", "--trials", "5", "--seed", "7", "--report", str(p)])
        assert a.read_bytes() == b.read_bytes()


class TestXlabCli:
    def test_symmetry_mode(self, tmp_path, capsys):
        rc = main(["xlab", "symmetry", "--arch", "mlp:8-12-3", "--data", BLOBS,
                   "--n-perms", "5", "--seed", "2", "--report", str(tmp_path / "lab.csv")])
        assert rc == 0
        out = capsys.readouterr().out
        dev = float(out.strip().rsplit(" ", 1)[-1])
        assert dev <= 1e-10

    def test_equivariance_mode(self, tmp_path, capsys):
        rc = main(["xlab", "equivariance", "--arch", "mlp:8-12-3", "--data", BLOBS,
                   "--n-perms", "4", "--seed", "2", "--report", str(tmp_path / "lab.csv")])
        assert rc == 0
        dev = float(capsys.readouterr().out.strip().rsplit(" ", 1)[-1])
        assert dev <= 1e-10

    def test_ensemble_mode(self, tmp_path, capsys):
        rc = main(["xlab", "ensemble", "--arch", "mlp:8-12-3", "--data", BLOBS,
                   "--n-seeds", "12", "--epochs", "2", "--threads", "2",
                   "--seed", "0", "--report", str(tmp_path / "lab.csv")])
        assert rc == 0
        lines = (tmp_path / "lab.csv").read_text().splitlines()
        assert lines[0] == "index,ks_d,pvalue"
        assert lines[-1].startswith("rejection_rate,")


class TestExportCli:
    def test_per_sample_csv(self, model_dir, tmp_path):
        out = tmp_path / "preds.csv"
        rc = main(["export", "--model", str(model_dir), "--data", BLOBS,
                   "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "index,label,pred,flops"
        assert len(lines) == 121
        flops = {int(line.split(",")[3]) for line in lines[1:]}
        assert len(flops) == 1          # plain path: every sample costs the same


class TestPruneStaticCli:
    def test_prune_then_eval(self, model_dir, tmp_path, capsys):
        cnn_dir = tmp_path / "cnn"
        rc = main(["train", "--arch", "cnn:1x6x6:c8k3,bn,r,gap,h3",
                   "--data", "blobs:2,90,36,3,0.8", "--out", str(cnn_dir),
                   "--seed", "0", "--epochs", "3"])
        assert rc == 0
        out_dir = tmp_path / "pruned"
        rc = main(["prune-static", "--model", str(cnn_dir), "--data", "blobs:2,90,36,3,0.8",
                   "--out", str(out_dir), "--fraction", "0.1", "--iters", "3",
                   "--finetune-epochs", "1"])
        assert rc == 0
        assert "density" in capsys.readouterr().out
        rc = main(["eval", "--model", str(out_dir), "--data", "blobs:2,90,36,3,0.8",
                   "--report", str(tmp_path / "r.csv")])
        assert rc == 0
