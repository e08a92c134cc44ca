import re
import subprocess
import sys
import pytest

from dhl.cli import run

from blowup import CONFIGS, write_blowup_fields

STATUS_LINE = r"^dhl: status=\d kind=\w+ reason=.+$"


def cli(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_writes_field(tmp_path, capsys):
    code, out, _ = cli(capsys, "solve", "--config", str(CONFIGS / "ma_disk.ini"), "--out", str(tmp_path), "--resolution", "33")
    assert code == 0
    assert out.startswith("solve: eps=0.1 ")
    lines = (tmp_path / "solution.csv").read_text().splitlines()
    assert lines[0] == "x,y,value" and len(lines) > 33 * 33 // 2


def test_k_above_n_is_a_validation_error(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text((CONFIGS / "ma_disk.ini").read_text().replace("k = 2", "k = 3"))
    code, _, err = cli(capsys, "solve", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 2
    [line] = err.strip().splitlines()
    assert line.startswith("dhl: status=2 kind=validation reason=")
    assert re.match(STATUS_LINE, line)


def test_blowup_fixture_fails_verification(tmp_path, capsys):
    out = write_blowup_fields(tmp_path / "blow")
    code, stdout, err = cli(capsys, "verify", "--config", str(CONFIGS / "degenerate_sweep.ini"), "--out", str(out), "--resolution", "65")
    assert code == 4
    assert "verdict: not bounded" in stdout
    assert "reason=not bounded" in err


def test_verify_without_dumps(tmp_path, capsys):
    code, _, err = cli(capsys, "verify", "--config", str(CONFIGS / "degenerate_sweep.ini"), "--out", str(tmp_path))
    assert code == 2 and "run a sweep first" in err


def test_nonconvergence_exit_status(tmp_path, capsys):
    cfg = tmp_path / "short.ini"
    cfg.write_text((CONFIGS / "ma_disk.ini").read_text().replace("eps_schedule = 0.1", "eps_schedule = 0.1\nmax_newton_iters = 1"))
    code, _, err = cli(capsys, "solve", "--config", str(cfg), "--out", str(tmp_path), "--resolution", "33")
    assert code == 3 and "kind=nonconvergence" in err


def test_sweep_outputs_are_byte_identical(tmp_path, capsys):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        code, _, _ = cli(capsys, "sweep", "--config", str(CONFIGS / "degenerate_sweep.ini"), "--out", str(d), "--resolution", "33")
        assert code == 0
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    assert any(n.endswith(".csv") for n in names)
    for n in names:
        assert (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes(), n


@pytest.mark.parametrize("value", ["0", "-2", "many"])
def test_thread_variable_validated(tmp_path, capsys, monkeypatch, value):
    monkeypatch.setenv("DHL_THREADS", value)
    code, _, err = cli(capsys, "solve", "--config", str(CONFIGS / "ma_disk.ini"), "--out", str(tmp_path))
    assert code == 2 and "DHL_THREADS" in err


def test_bad_arguments(tmp_path, capsys):
    assert cli(capsys, "draw", "--config", "x.ini")[0] == 2
    assert cli(capsys, "solve", "--config", str(tmp_path / "missing.ini"))[0] == 2
    code, _, err = cli(capsys, "solve", "--config", str(CONFIGS / "ma_disk.ini"), "--eps-schedule", "0.1,zero")
    assert code == 2 and "--eps-schedule" in err


def test_geometry_reports_hemisphere_curvatures(tmp_path, capsys):
    code, out, _ = cli(capsys, "geometry", "--config", str(CONFIGS / "geometry.ini"), "--out", str(tmp_path))
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("point=0,0 u=2 kappa=-0.5,-0.5 cone=outside")
    assert "hyp_cone=boundary" in lines[0]
    csv = (tmp_path / "geometry.csv").read_text().splitlines()
    assert csv[0] == "x1,x2,u,kappa1,kappa2,cone,kappa_tilde1,kappa_tilde2,hyp_cone"
    assert len(csv) == 4


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "dhl.cli", "solve", "--config", str(CONFIGS / "ma_disk.ini"), "--resolution", "4"],
        capture_output=True,
        text=True,
        cwd=tmp_path,
    )
    assert proc.returncode == 2
    assert proc.stderr.startswith("dhl: status=2 kind=validation")
