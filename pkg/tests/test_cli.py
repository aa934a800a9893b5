from fedrag.cli import main
from fedrag.harness import read_metrics

from conftest import tiny_ini


def test_verify_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["verify", "--seed", "7", "--n-mdps", "8", "--report", str(a)]) == 0
    assert main(["verify", "--seed", "7", "--n-mdps", "8", "--report", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "suite,instances,max_violation,status" and len(lines) == 6
    assert "variance_identity" in capsys.readouterr().out


def test_gradcheck_reports_six_losses(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    rows = [line for line in out.splitlines() if line.startswith("L_")]
    assert len(rows) == 6 and all(line.endswith("pass") for line in rows)


def test_run_and_eval(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(tiny_ini(episodes=4))
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--quiet", "--seed", "3"]) == 0
    rows = read_metrics(out / "metrics.csv")
    assert len(rows) == 4
    assert "seed = 3" in (out / "config.ini").read_text()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "checkpoints" / "client0.ckpt"), "--config", str(cfg)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "env_id,pole_length,same_env,mean_return,std_return"
    assert lines[1].split(",")[2] == "true" and lines[2].split(",")[2] == "false"


def test_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.file")]) != 0
    assert "not found" in capsys.readouterr().err
    assert main(["frobnicate"]) == 2
    assert main(["verify", "--bogus"]) == 2
    assert main([]) == 2
    cfg = tmp_path / "c.ini"
    cfg.write_text(tiny_ini())
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--config", str(cfg)]) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nflavour = mint\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "unknown key" in capsys.readouterr().err
