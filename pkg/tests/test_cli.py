import subprocess
import sys

import pytest

import tnnmg.cli as cli
from tnnmg.core import NumericError


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_writes_csv(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code, stdout, _ = _run(["run", "--problem", "obstacle1d", "--level", "6", "--max-iter", "100",
                            "--tol", "1e-10", "--out", str(out)], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ("iter,energy,energy_after_smoothing,correction_norm,damping,"
                        "truncated_fraction,increment")
    assert len(lines) > 2
    summary = stdout.strip().splitlines()[-1]
    assert summary.startswith("iterations=")
    assert "converged=True" in summary and "final_energy=" in summary and "rate=" in summary


def test_unknown_problem_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--problem", "nosuch"])
    assert exc.value.code == 2


def test_bad_level_exits_2(capsys):
    code, _, err = _run(["run", "--problem", "obstacle1d", "--level", "0"], capsys)
    assert code == 2 and "level" in err


def test_not_converged_exits_3(capsys):
    code, stdout, _ = _run(["run", "--problem", "obstacle1d", "--level", "5", "--max-iter", "1"],
                           capsys)
    assert code == 3 and "converged=False" in stdout


def test_numeric_error_exits_4(capsys, monkeypatch):
    def boom(*args, **kwargs):
        raise NumericError("breakdown")

    monkeypatch.setattr(cli, "solve", boom)
    code, _, err = _run(["run", "--problem", "obstacle1d", "--level", "3"], capsys)
    assert code == 4 and "breakdown" in err


def test_nested_prints_levels(capsys):
    code, stdout, _ = _run(["run", "--problem", "obstacle1d", "--level", "6", "--nested"], capsys)
    assert code == 0
    lines = stdout.strip().splitlines()
    assert [l.split()[0] for l in lines[:-1]] == [f"level={j}" for j in range(1, 7)]
    assert lines[-1].startswith("iterations=")


@pytest.mark.parametrize("flags", [["--linear", "cg"], ["--linear", "dense"],
                                   ["--smoother", "pgs"], ["--cycles", "2", "--alpha", "1e-10"],
                                   ["--eps", "1e-8", "--curvature-cap", "1e6"]])
def test_solver_flags(flags, capsys):
    code, stdout, _ = _run(["run", "--problem", "phasefield1d", "--level", "4"] + flags, capsys)
    assert code == 0


def test_csv_bit_stable(tmp_path, capsys):
    texts = []
    for i in range(2):
        out = tmp_path / f"run{i}.csv"
        code, _, _ = _run(["run", "--problem", "phasefield1d", "--level", "4", "--seed", "7",
                           "--out", str(out)], capsys)
        assert code == 0
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]
    other = tmp_path / "other.csv"
    _run(["run", "--problem", "phasefield1d", "--level", "4", "--seed", "8", "--out", str(other)],
         capsys)
    assert other.read_bytes() != texts[0]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tnnmg.cli", "run", "--problem", "friction1d",
                           "--level", "4"], capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0
    assert proc.stdout.startswith("iterations=")
    proc = subprocess.run([sys.executable, "-m", "tnnmg.cli", "run", "--problem", "nosuch"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2
