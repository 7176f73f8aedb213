import pytest

from vech.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_OK, main


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    assert "baseline" in capsys.readouterr().out


def test_validate_reference_set(capsys):
    assert main(["validate", "baseline"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[PASS] A4_3 chemotaxis margin" in out and "overall: OK" in out
    assert "[ADVISORY] CFL" in out


def test_validate_rejects_strong_chemotaxis(capsys):
    assert main(["validate", "baseline", "--set", "chi_phi=100", "--set", "chi_sigma=10"]) == EXIT_CONFIG
    assert "[FAIL] A4_3" in capsys.readouterr().out


def test_enforced_cfl_rejects(capsys):
    assert main(["validate", "baseline", "--enforce-cfl", "1"]) == EXIT_CONFIG
    assert "[FAIL] CFL" in capsys.readouterr().out


def test_unknown_experiment(capsys):
    assert main(["validate", "no-such-experiment"]) == EXIT_CONFIG


def test_run_and_resume(tmp_path, capsys):
    args = ["--threads", "1", "run", "baseline", "--profile", "desk", "--output-dir", str(tmp_path),
            "--set", "coarse_n=8", "--set", "fine_n=32", "--set", "t_end=0.002", "--set", "checkpoint_every=1"]
    assert main(args) == EXIT_OK
    assert "done t=0.002" in capsys.readouterr().out
    ckpt = tmp_path / "checkpoint_000001.vech"
    assert main(["resume", str(ckpt), "--set", "dt=5e-4"]) == EXIT_CONFIG
    assert main(["resume", str(ckpt), "--output-dir", str(tmp_path / "r")]) == EXIT_OK


def test_bad_checkpoint_version(tmp_path, capsys):
    path = tmp_path / "bad.vech"
    path.write_bytes(b"VECH" + (7).to_bytes(4, "little") + (2).to_bytes(4, "little") + b"{}")
    assert main(["resume", str(path)]) == EXIT_CHECKPOINT
    assert "found 7, expected 1" in capsys.readouterr().err
