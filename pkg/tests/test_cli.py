import json

import pytest

from sqbc.cli import main


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_run_hypercube_writes_outputs(tmp_path, capsys):
    rc = main(
        ["run", "hypercube", "--out", str(tmp_path), "--seeds", "0,1"]
    )
    assert rc == 0
    csv_text = (tmp_path / "hypercube.csv").read_text()
    assert csv_text.startswith("experiment,seed,step,metric,value")
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["experiment"] == "hypercube"
    assert meta["config"]["seeds"] == [0, 1]


def test_run_with_config_file_and_plots(tmp_path):
    cfg = tmp_path / "h.cfg"
    cfg.write_text("experiment = hypercube\np_dims = 1\nn_samples = 20000\n")
    rc = main(
        [
            "run", "hypercube", "--config", str(cfg),
            "--out", str(tmp_path / "out"), "--seeds", "3", "--plots",
        ]
    )
    assert rc == 0
    assert (tmp_path / "out" / "hypercube.svg").exists()


def test_run_consistency_small(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "experiment = consistency\nn_structures = 6\nn_atoms = 4\n"
        "margin = 1.0\nbeta = 3.0\nrounds = 40\ntau = 0.9\n"
        "consistency_query_size = 2\n"
    )
    rc = main(["run", "consistency", "--config", str(cfg),
               "--out", str(tmp_path / "out"), "--seeds", "0"])
    assert rc == 0
    text = (tmp_path / "out" / "consistency.csv").read_text()
    assert "target_mass" in text


def test_trace_fixture(tmp_path):
    out = tmp_path / "fixture.json"
    rc = main(
        ["trace-fixture", "--out", str(out), "--rounds", "2",
         "--sweeps-per-round", "10", "--seed", "1"]
    )
    assert rc == 0
    fixture = json.loads(out.read_text())
    assert len(fixture["feedback"]) == 2
    assert fixture["trace_jsonl"].count("\n") == 2
    assert fixture["config"]["seed"] == 1


def test_make_data(tmp_path):
    rc = main(["make-data", "--out", str(tmp_path), "--per-class", "3", "--seed", "7"])
    assert rc == 0
    from sqbc.datasets import read_idx

    images = read_idx(tmp_path / "train-images-idx3-ubyte")
    assert images.shape == (30, 28, 28)
