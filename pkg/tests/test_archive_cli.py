import csv
import json

import numpy as np
import pytest

from strkm_ood.archive import ModelArchive, from_bytes, load_archive, save_archive, to_bytes
from strkm_ood.cli import main, read_score_column
from strkm_ood.energy import ALL_KINDS, energy
from strkm_ood.errors import FormatError
from strkm_ood.stiefel import orthonormality_defect

from conftest import random_model


def test_archive_round_trip_bitwise(rng, tmp_path):
    m = random_model(rng)
    arc = ModelArchive(m, seed=7, epochs=12, thresholds={"full": 1.5, "kpca": 0.25})
    path = tmp_path / "m.strkm"
    save_archive(arc, path)
    back = load_archive(path)
    assert (back.seed, back.epochs, back.thresholds) == (7, 12, {"full": 1.5, "kpca": 0.25})
    probe = rng.uniform(size=(100, 4))
    for k in ALL_KINDS:
        assert energy(m, probe, k).tobytes() == energy(back.model, probe, k).tobytes()
    assert to_bytes(back) == to_bytes(arc)


def test_archive_corruption(rng):
    raw = bytearray(to_bytes(ModelArchive(random_model(rng))))
    flipped = bytearray(raw)
    flipped[40] ^= 0xFF
    with pytest.raises(FormatError, match="checksum"):
        from_bytes(bytes(flipped))
    with pytest.raises(FormatError, match="magic"):
        from_bytes(b"XXXXXXXX" + bytes(raw[8:]))
    bad_version = bytearray(raw)
    bad_version[8] = 9
    with pytest.raises(FormatError, match="version"):
        from_bytes(bytes(bad_version))
    with pytest.raises(FormatError):
        from_bytes(bytes(raw[:20]))


def run(argv, capsys=None):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_cli_smoke_pipeline(tmp_path):
    d = tmp_path
    assert run(["gen", "--kind", "blobs", "--n", 200, "--out", d / "in.csv",
                "--params", '{"centers": [[-0.4, -0.4], [0.4, 0.4]], "spread": 0.1}', "--seed", 3]) == 0
    assert run(["gen", "--kind", "ring", "--n", 60, "--out", d / "ring.csv", "--seed", 3]) == 0
    args = ["train", "--data", d / "in.csv", "--model", d / "m.strkm", "--epochs", 5,
            "--batch-size", 64, "--subspace-dim", 2, "--seed", 1]
    assert run(args) == 0
    first = (d / "m.strkm").read_bytes()
    assert run(args) == 0
    assert (d / "m.strkm").read_bytes() == first
    arc = load_archive(d / "m.strkm")
    assert orthonormality_defect(arc.model.U) <= 1e-8
    assert arc.model.lam == 100.0 and arc.model.dims[2] == 2
    assert len(rows(d / "m.history.csv")) == 6
    assert set(arc.thresholds) == {k.value for k in ALL_KINDS}

    assert run(["score", "--model", d / "m.strkm", "--data", d / "in.csv", "--out", d / "s_in.csv"]) == 0
    assert run(["score", "--model", d / "m.strkm", "--data", d / "ring.csv", "--out", d / "s_ring.csv"]) == 0
    header = rows(d / "s_in.csv")[0]
    assert header == ["index", "full", "kpca", "aeloss", "negcorr",
                      "flag_full", "flag_kpca", "flag_aeloss", "flag_negcorr"]
    first_scores = (d / "s_in.csv").read_bytes()
    assert run(["score", "--model", d / "m.strkm", "--data", d / "in.csv", "--out", d / "s_in.csv"]) == 0
    assert (d / "s_in.csv").read_bytes() == first_scores

    assert run(["eval", "--in-scores", d / "s_in.csv", "--out-scores", d / "s_ring.csv",
                "--energy", "kpca", "--report", d / "rep.txt", "--histogram", d / "hist.csv"]) == 0
    keys = [ln.split(":")[0] for ln in (d / "rep.txt").read_text().splitlines()]
    for k in ("fpr95", "auroc", "aupr", "overlap", "mmd", "wasserstein1"):
        assert k in keys
    hist = rows(d / "hist.csv")
    assert hist[0] == ["bin_left", "bin_right", "count_in", "count_out", "density_in", "density_out"]
    assert sum(int(r[2]) for r in hist[1:]) == 200 and sum(int(r[3]) for r in hist[1:]) == 60

    assert run(["report", "--model", d / "m.strkm", "--in-data", d / "in.csv",
                "--out-data", f"ring={d / 'ring.csv'}", "--out", d / "report.txt"]) == 0
    text = (d / "report.txt").read_text()
    assert "ring.pca.auroc:" in text and "ring.full.fpr95:" in text


def test_eval_identical_scores(tmp_path):
    s = np.random.default_rng(0).standard_normal(300)
    with open(tmp_path / "s.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "full"])
        for i, v in enumerate(s):
            w.writerow([i, repr(float(v))])
    assert run(["eval", "--in-scores", tmp_path / "s.csv", "--out-scores", tmp_path / "s.csv",
                "--energy", "full", "--report", tmp_path / "r.txt"]) == 0
    rep = dict(ln.split(": ", 1) for ln in (tmp_path / "r.txt").read_text().splitlines())
    assert float(rep["auroc"]) == 0.5
    assert float(rep["overlap"]) >= 0.999
    assert float(rep["wasserstein1"]) == 0.0


def test_exit_codes(tmp_path, rng):
    # validation: unknown energy, unknown config key, bad flag
    assert run(["score", "--energy", "bogus"]) == 1
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 0, "mystery": 1}))
    assert run(["train", "--config", cfg]) == 1
    # IO: missing data file, missing config
    assert run(["train", "--data", tmp_path / "nope.csv", "--model", tmp_path / "m.strkm"]) == 2
    assert run(["train", "--config", tmp_path / "missing.json"]) == 2
    # format: corrupted archive
    (tmp_path / "bad.strkm").write_bytes(b"garbage" * 10)
    (tmp_path / "d.csv").write_text("0.1,0.2\n")
    assert run(["score", "--model", tmp_path / "bad.strkm", "--data", tmp_path / "d.csv",
                "--out", tmp_path / "o.csv"]) == 2
    # divergence: absurd learning rate drives the weights to overflow
    data = tmp_path / "t.csv"
    data.write_text("\n".join(f"{a},{b}" for a, b in rng.uniform(size=(40, 2))) + "\n")
    cfg.write_text(json.dumps({"train": {"data": str(data), "model": str(tmp_path / "x.strkm"),
                                         "epochs": 200, "batch_size": 40, "lr_adam": 1e200,
                                         "deterministic": True, "feature_dim": 4,
                                         "subspace_dim": 2, "hidden": [4]}}))
    assert run(["train", "--config", cfg]) == 3


def test_read_score_column_errors(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("index,full\n0,1.0\n1,x\n")
    with pytest.raises(FormatError, match="line 3"):
        read_score_column(p, "full")
    with pytest.raises(FormatError):
        read_score_column(p, "kpca")


def test_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("STRKM_THREADS", "0")
    assert run(["gen", "--kind", "ring", "--n", 10, "--out", tmp_path / "r.csv"]) == 1
    monkeypatch.setenv("STRKM_THREADS", "1")
    assert run(["gen", "--kind", "ring", "--n", 10, "--out", tmp_path / "r.csv"]) == 0
