import csv
import json

import pytest

from pukgc.cli import main
from pukgc.synthetic import planted_graph

FAST = ["--dim", "8", "--epochs", "2", "--batch-size", "128", "--eval-every", "1"]


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    return str(planted_graph(n_entities=60, observed=0.3, seed=0).write(tmp_path_factory.mktemp("toy")))


def test_train_writes_run_directory(toy, tmp_path):
    out = tmp_path / "run1"
    assert main(["train", "--mode", "puda", "--data", toy, "--out", str(out), "--seed", "7", *FAST]) == 0
    assert {"checkpoint.bin", "metrics.jsonl", "manifest.json", "eval.json"} <= {p.name for p in out.iterdir()}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "completed" and manifest["seed"] == 7
    assert manifest["config"]["n_unlabeled"] == 16  # defaults are materialised
    assert set(manifest["data"]) == {"train.txt", "valid.txt", "test.txt"}
    assert len(manifest["data"]["train.txt"]["sha256"]) == 64
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["mode"] == "puda"


def test_refuses_to_overwrite_completed_run(toy, tmp_path, capsys):
    args = ["train", "--mode", "pn", "--data", toy, "--out", str(tmp_path / "r"), *FAST]
    assert main(args) == 0
    assert main(args) == 1
    assert "out" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_config_errors_name_the_key(toy, tmp_path, capsys):
    assert main(["train", "--mode", "puda", "--out", str(tmp_path / "a")]) == 1
    assert "data" in capsys.readouterr().err
    assert main(["train", "--mode", "pu-c", "--pi-p", "0", "--data", toy, "--out", str(tmp_path / "b")]) == 1
    assert "InvalidPrior" in capsys.readouterr().err
    assert main(["train", "--mode", "puda", "--m-synthetic", "0", "--data", toy,
                 "--out", str(tmp_path / "c")]) == 1
    assert "m-synthetic" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2


def test_non_finite_exit_code(toy, tmp_path):
    out = tmp_path / "nf"
    with pytest.warns(RuntimeWarning):
        code = main(["train", "--mode", "pn", "--data", toy, "--out", str(out), "--lr-d", "1e300", *FAST])
    assert code == 3
    assert (out / "nonfinite_dump.json").is_file()
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_config_file_precedence(toy, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# comment\ndim = 8\nepochs = 3\nmode = pn\ndata = {toy}\nbatch-size = 128\n")
    out = tmp_path / "r"
    assert main(["train", "--config", str(cfg), "--epochs", "1", "--out", str(out)]) == 0
    config = json.loads((out / "manifest.json").read_text())["config"]
    assert (config["dim"], config["epochs"], config["mode"], config["lr_d"]) == (8, 1, "pn", 1e-3)


def test_config_file_unknown_key(toy, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus-knob = 3\n")
    assert main(["train", "--config", str(cfg), "--data", toy, "--out", str(tmp_path / "r")]) == 1
    assert "bogus-knob" in capsys.readouterr().err


def test_evaluate_checkpoint(toy, tmp_path, capsys):
    out = tmp_path / "r"
    main(["train", "--mode", "pn", "--data", toy, "--out", str(out), *FAST])
    capsys.readouterr()
    report = tmp_path / "report.json"
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.bin"), "--data", toy,
                 "--out", str(report)]) == 0
    assert "MRR" in capsys.readouterr().out
    saved = json.loads((out / "eval.json").read_text())["test"]["mrr"]
    assert json.loads(report.read_text())["mrr"] == saved


def test_evaluate_vocabulary_mismatch(toy, tmp_path):
    other = str(planted_graph(n_entities=40, observed=0.3, seed=1).write(tmp_path / "other"))
    out = tmp_path / "r"
    main(["train", "--mode", "pn", "--data", toy, "--out", str(out), *FAST])
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.bin"), "--data", other]) == 2


def test_ablate_contract(toy, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--data", toy, "--out", str(out), "--seeds", "0,1", "--pi-p", "0.01", *FAST]) == 0
    runs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert runs == sorted(f"{m}-seed{s}" for m in ("pn", "pu-c", "pu-r", "da", "puda") for s in (0, 1))
    table = json.loads((out / "ablation.json").read_text())
    assert [r["mode"] for r in table["rows"]] == ["pn", "pu-c", "pu-r", "da", "puda"]
    assert all(len(r["per_seed_mrr"]) == 2 for r in table["rows"])
    assert (out / "ablation.png").stat().st_size > 0
    header = (out / "ablation.txt").read_text().splitlines()[0].split()
    assert header == ["mode", "MRR", "H@1", "H@3", "H@10", "IQR", "note"]


def test_ablate_annotates_failed_rows(toy, tmp_path):
    out = tmp_path / "abl"
    with pytest.warns(RuntimeWarning):
        assert main(["ablate", "--data", toy, "--out", str(out), "--lr-d", "1e300", *FAST]) == 0
    rows = json.loads((out / "ablation.json").read_text())["rows"]
    assert all(r["errors"] and r["mrr"] is None for r in rows)
    assert "NonFiniteLoss" in (out / "ablation.txt").read_text()


def test_sweep_prior_csv_is_reproducible(toy, tmp_path):
    out = tmp_path / "sw"
    args = ["sweep-prior", "--mode", "pu-r", "--data", toy, "--out", str(out), *FAST]
    assert main(args) == 0
    first = (out / "sweep.csv").read_bytes()
    rows = list(csv.reader(first.decode().splitlines()))
    assert rows[0] == ["pi_p", "mrr", "hits1", "hits3", "hits10"] and len(rows) == 8
    assert [float(r[0]) for r in rows[1:]] == [10.0 ** -k for k in range(1, 8)]
    assert (out / "sweep.png").is_file()
    assert main(args + ["--force", "--workers", "2"]) == 0
    assert (out / "sweep.csv").read_bytes() == first


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--trials", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3 and all(line.startswith("PASS") for line in lines)
    assert main(["gradcheck", "--trials", "3", "--inject-fault", "distmult-sign"]) == 4
    assert "FAIL scoring" in capsys.readouterr().out


def test_make_toy(tmp_path):
    assert main(["make-toy", "--out", str(tmp_path / "t"), "--entities", "50"]) == 0
    assert (tmp_path / "t" / "train.txt").read_text().count("\n") > 0
