import json

import pytest

from polaron_renewal.cli import main
from polaron_renewal.ensemble import load_ensemble


@pytest.fixture(scope="module")
def ens_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "ens.dat"
    assert main(["sample", "--alpha", "1", "--shards", "4", "--per-shard", "5000", "--seed", "42",
                 "--out", str(path)]) == 0
    return path


def read_table(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


def test_alpha_zero_is_a_usage_error(tmp_path, capsys):
    assert main(["sample", "--alpha", "0", "--out", str(tmp_path / "x.dat")]) == 2
    assert "alpha" in capsys.readouterr().err


def test_unknown_command_and_missing_flag(capsys):
    assert main(["frobnicate"]) == 2
    assert main(["energy"]) == 2


def test_sample_is_byte_identical(tmp_path, ens_file, capsys):
    again = tmp_path / "again.dat"
    assert main(["sample", "--alpha", "1", "--shards", "4", "--per-shard", "5000", "--seed", "42",
                 "--out", str(again), "--threads", "2"]) == 0
    assert again.read_bytes() == ens_file.read_bytes()
    assert "mean tau" in capsys.readouterr().out


def test_energy_curve_and_summary(tmp_path, ens_file, capsys):
    out, summ = tmp_path / "curve.csv", tmp_path / "summary.csv"
    assert main(["energy", "--ensemble", str(ens_file), "--P", "0,0.5,1", "--out", str(out),
                 "--summary", str(summ)]) == 0
    text = out.read_text()
    assert "# alpha = 1.0" in text and "# P_grid = 0.0, 0.5, 1.0" in text
    rows = read_table(text)
    energies = [float(r["energy"]) for r in rows]
    assert energies == sorted(energies)
    s = read_table(summ.read_text())[0]
    assert float(s["E0"]) == energies[0]
    assert rows[0]["energy"] == s["E0"]


def test_alpha_mismatch_and_corruption(tmp_path, ens_file, capsys):
    assert main(["energy", "--ensemble", str(ens_file), "--alpha", "0.5"]) == 1
    lines = ens_file.read_text().split("\n")
    lines[6] = "1,2"
    bad = tmp_path / "bad.dat"
    bad.write_text("\n".join(lines))
    assert main(["energy", "--ensemble", str(bad)]) == 1
    assert "line 7" in capsys.readouterr().err
    assert main(["energy", "--ensemble", str(tmp_path / "missing.dat")]) == 1


def test_thin_wrappers(tmp_path, ens_file, capsys):
    e = str(ens_file)
    assert main(["lambda", "--ensemble", e, "--P", "0", "--n-lam", "3"]) == 0
    assert len(read_table(capsys.readouterr().out)) == 3
    assert main(["resolvent", "--ensemble", e, "--P", "0"]) == 0
    row = read_table(capsys.readouterr().out)[0]
    assert float(row["rel_diff"]) < 0.03
    assert main(["overlap", "--ensemble", e, "--P", "0", "--format", "jsonl"]) == 0
    rec = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert 0 < rec["overlap"] <= 1
    assert main(["renewal", "--ensemble", e, "--P", "0", "--h", "0.5", "--T-max", "2"]) == 0
    rows = read_table(capsys.readouterr().out)
    assert [r["T"] for r in rows] == ["0", "0.5", "1", "1.5", "2"] and rows[0]["f"] == "1"
    assert main(["probe", "--ensemble", e, "--P", "0.5"]) == 0
    assert read_table(capsys.readouterr().out)[0]["verdict"]
    assert main(["oracle", "--alpha", "1", "--ensemble", e, "--P", "0", "--T", "1", "--steps", "20",
                 "--paths", "200"]) == 0
    row = read_table(capsys.readouterr().out)[0]
    assert float(row["fk_value"]) > 1 and row["renewal_value"]


def test_config_file_drives_run(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"alpha = 0.5\nshards = 2\nsamples_per_shard = 100\nbase_seed = 3\n"
                   f"output_dir = {tmp_path / 'out'}\n")
    out = tmp_path / "e.dat"
    assert main(["sample", "--config", str(cfg), "--out", str(out)]) == 0
    assert load_ensemble(out).meta.alpha == 0.5
    assert main(["energy", "--config", str(cfg), "--ensemble", str(out)]) == 0
    assert (tmp_path / "out" / "energy.csv").exists()
    cfg.write_text("alpha = -1\n")
    assert main(["sample", "--config", str(cfg), "--out", str(out)]) == 2


def test_validate_quick_and_mutation(capsys):
    assert main(["validate", "--scale", "quick", "--checks", "1,9", "--threads", "1"]) == 0
    assert "[PASS] 9." in capsys.readouterr().err
    assert main(["validate", "--scale", "quick", "--checks", "4,7", "--mutate-sigma2"]) == 1
    err = capsys.readouterr().err
    assert "[FAIL] 7." in err and "s of" in err
    assert main(["validate", "--checks", "12"]) == 2
