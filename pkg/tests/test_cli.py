import csv
import json

import numpy as np
import pytest
from PIL import Image

from disco import cli
from disco.backend import generate_array, make_oracle_generator, sample_latent_array, true_factors_array
from disco.fixtures import identity_checkpoint
from disco.trainer import Checkpoint

from test_backend import _write_adapter

TINY = {
    "backend": {"kind": "oracle_linear", "num_factors": 3, "mixing_seed": 5},
    "sampler": {"B": 4, "N": 4, "M": 8},
    "trainer": {"steps": 6, "learning_rate": 1e-3, "seed": 11},
    "eval": {"samples": 600},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture
def trained(tmp_path, config_file):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(config_file), "--out", str(out)]) == 0
    return out


def test_train_twice_same_hash(tmp_path, config_file):
    a = cli.cmd_train(config_file, tmp_path / "a")
    b = cli.cmd_train(config_file, tmp_path / "b")
    assert a.parameter_hash() == b.parameter_hash()
    assert Checkpoint.load(tmp_path / "a").parameter_hash() == a.parameter_hash()
    assert (tmp_path / "a" / "train_log.jsonl").read_text() == (tmp_path / "b" / "train_log.jsonl").read_text()


def test_seed_flag_changes_run(tmp_path, config_file):
    a = cli.cmd_train(config_file, tmp_path / "a", seed=1)
    b = cli.cmd_train(config_file, tmp_path / "b", seed=2)
    assert a.parameter_hash() != b.parameter_hash()
    assert Checkpoint.load(tmp_path / "b").config["trainer"]["seed"] == 2


def test_checkpoint_config_snapshot_is_resolved(trained):
    cfg = Checkpoint.load(trained).config
    assert cfg["navigator"]["num_directions"] == 6
    assert cfg["loss"]["threshold"] == pytest.approx(9.0)


def test_eval_byte_identical(trained, tmp_path):
    assert cli.main(["eval", "--checkpoint", str(trained), "--out", str(tmp_path / "r1.json")]) == 0
    assert cli.main(["eval", "--checkpoint", str(trained), "--out", str(tmp_path / "r2.json")]) == 0
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    report = json.loads((tmp_path / "r1.json").read_text())
    assert {"mig", "dci", "per_factor_mig", "importance_matrix", "config"} <= set(report)
    assert report["samples"] == 600


def test_eval_metric_subset_and_default_location(trained):
    assert cli.main(["eval", "--checkpoint", str(trained), "--metrics", "mig"]) == 0
    report = json.loads((trained / "eval_report.json").read_text())
    assert "mig" in report and "dci" not in report


def test_eval_identity_fixture_scores_one(tmp_path):
    ckpt, _ = identity_checkpoint(4)
    ckpt.config["eval"]["samples"] = 5000
    ckpt.save(tmp_path / "ident")
    report = cli.cmd_eval(tmp_path / "ident")
    assert report["mig"] == pytest.approx(1.0, abs=0.02)
    assert report["dci"] > 0.95


def test_corrupt_manifest_fails_closed(trained, tmp_path, capsys):
    (trained / "manifest.json").write_text('{"format": "disco-checkpoint/1", "tensors": ')
    out = tmp_path / "report.json"
    code = cli.main(["eval", "--checkpoint", str(trained), "--out", str(out)])
    assert code != 0
    assert not out.exists()
    assert not list(tmp_path.glob("report.json*"))
    assert "error" in capsys.readouterr().err


def test_missing_tensor_file(trained):
    next(trained.glob("encoder__*.bin")).unlink()
    assert cli.main(["eval", "--checkpoint", str(trained)]) == 2


def test_config_errors_exit_two(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trainer": {"steps": 0}}))
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 2


def test_bad_metrics_flag(trained):
    assert cli.main(["eval", "--checkpoint", str(trained), "--metrics", "mig,sap"]) == 2


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["eval"])
    assert info.value.code == 2


def test_figure_commands(trained, tmp_path):
    assert cli.main(["traverse", "--checkpoint", str(trained), "--direction", "1",
                     "--steps=-2,0,2", "--rows", "2", "--out", str(tmp_path / "g.png")]) == 0
    with Image.open(tmp_path / "g.png") as im:
        assert im.size == (3 * 16 + 4, 2 * 16 + 2)
    assert cli.main(["traverse", "--checkpoint", str(trained), "--direction", "6", "--out", str(tmp_path / "x.png")]) == 2
    assert cli.main(["simmatrix", "--checkpoint", str(trained), "--samples", "16", "--out", str(tmp_path / "sim")]) == 0
    assert (tmp_path / "sim" / "similarity.png").exists() and (tmp_path / "sim" / "similarity.csv").exists()
    assert cli.main(["scatter", "--checkpoint", str(trained), "--resolution", "3", "--out", str(tmp_path / "s.csv")]) == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 28
    assert cli.main(["profile", "--checkpoint", str(trained), "--factor", "2", "--out", str(tmp_path / "p.csv")]) == 0
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 12


def test_sweep_summary(tmp_path, config_file):
    assert cli.main(["sweep", "--config", str(config_file), "--seeds", "0,1", "--metrics", "mig",
                     "--out", str(tmp_path / "sw")]) == 0
    rows = list(csv.reader(open(tmp_path / "sw" / "summary.csv")))
    assert rows[0] == ["seed", "mig"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "mean", "variance"]
    vals = [float(r[1]) for r in rows[1:3]]
    assert float(rows[3][1]) == pytest.approx(np.mean(vals))
    assert float(rows[4][1]) == pytest.approx(np.var(vals))


def _adapter_run(tmp_path, monkeypatch, with_csv):
    data = tmp_path / "data"
    (data / "gen").mkdir(parents=True)
    _write_adapter(data / "gen")
    monkeypatch.setenv("DISCO_DATA_DIR", str(data))
    doc = {
        "backend": {"kind": "external_adapter", "checkpoint": "gen"},
        "navigator": {"num_directions": 4},
        "encoder": {"preset": "mlp", "output_dim": 4},
        "sampler": {"B": 2, "N": 2, "M": 4},
        "trainer": {"steps": 2},
    }
    if with_csv:
        gen = make_oracle_generator(2, "oracle_linear", 0, False, (8, 8, 1))
        z = sample_latent_array(gen, 40, np.random.default_rng(0))
        images = generate_array(gen, z)
        lines = []
        for i, img in enumerate(images):
            Image.fromarray(np.rint(img[:, :, 0] * 255).astype(np.uint8)).save(data / f"img{i}.png")
            lines.append(f"img{i}.png")
        (data / "images.txt").write_text("\n".join(lines) + "\n")
        f = true_factors_array(gen, z)
        (data / "factors.csv").write_text("factor_0,factor_1\n" + "".join(f"{a},{b}\n" for a, b in f))
        doc["eval"] = {"factors_csv": "factors.csv", "image_list": "images.txt"}
    cfg = tmp_path / "adapter.json"
    cfg.write_text(json.dumps(doc))
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    return tmp_path / "run"


def test_adapter_without_factors_is_metric_error(tmp_path, monkeypatch):
    run = _adapter_run(tmp_path, monkeypatch, with_csv=False)
    assert cli.main(["eval", "--checkpoint", str(run)]) == 3
    assert not (run / "eval_report.json").exists()


def test_adapter_with_factor_csv(tmp_path, monkeypatch):
    run = _adapter_run(tmp_path, monkeypatch, with_csv=True)
    assert cli.main(["eval", "--checkpoint", str(run)]) == 0
    report = json.loads((run / "eval_report.json").read_text())
    assert report["samples"] == 40 and 0.0 <= report["mig"] <= 1.0


def test_factor_csv_header_checked(tmp_path):
    (tmp_path / "f.csv").write_text("a,b\n0,1\n")
    (tmp_path / "i.txt").write_text("x.png\n")
    with pytest.raises(cli.InputError):
        cli.read_factor_csv(tmp_path / "f.csv", tmp_path / "i.txt")
