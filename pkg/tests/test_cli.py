import subprocess
import sys

import pytest

from pdqn.cli import EXIT_BUDGET, EXIT_CONFIG, EXIT_OK, EXIT_ORACLE, main
from pdqn.runner import emit_config, preset, read_csv


def test_spectra_line_graph(capsys):
    assert main(["spectra", "--kind", "line", "--n", "10"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "n=10 edges=9 density=0.2000" in out and "kappa_g=39.86" in out


def test_spectra_from_edge_list(tmp_path, capsys):
    path = tmp_path / "g.txt"
    path.write_text("n 3\n0 1\n1 2\n")
    assert main(["spectra", "--edges", str(path)]) == EXIT_OK
    assert "n=3 edges=2" in capsys.readouterr().out


def test_spectra_needs_a_graph():
    assert main(["spectra"]) == EXIT_CONFIG


def test_run_reaches_target_and_writes_trace(tmp_path):
    out = tmp_path / "trace.csv"
    code = main(["run", "--preset", "linreg-k10", "--target", "1e-4", "--budget", "1000", "--out", str(out)])
    assert code == EXIT_OK
    trace = read_csv(str(out))
    assert trace[-1].rel_error <= 1e-4 and trace[0].iter == 0


def test_run_budget_exhausted_still_writes(tmp_path):
    out = tmp_path / "trace.csv"
    assert main(["run", "--preset", "linreg-k10", "--budget", "3", "--out", str(out)]) == EXIT_BUDGET
    assert len(read_csv(str(out))) == 4


def test_run_from_config_file_with_overrides(tmp_path):
    cfg = preset("linreg-k10")
    path = tmp_path / "exp.ini"
    path.write_text(emit_config(cfg))
    out = tmp_path / "t.csv"
    code = main(["run", str(path), "--set", "algorithm.beta=0.3", "--budget", "2", "--no-timing", "--out", str(out)])
    assert code == EXIT_BUDGET
    assert all(r.elapsed_ms == 0.0 for r in read_csv(str(out)))


@pytest.mark.parametrize(
    "args",
    [
        ["run", "--preset", "linreg-k10", "--set", "algorithm.bogus=1"],
        ["run", "--preset", "linreg-k10", "--set", "nodot=1"],
        ["run", "missing.ini"],
        ["run", "--set", "graph.n=3"],
        ["run", "--preset", "linreg-k10", "--algo", "extra"],
    ],
)
def test_config_errors_exit_two(args):
    assert main(args) == EXIT_CONFIG


def test_oracle_failure_exits_three(tmp_path, monkeypatch):
    import pdqn.runner as runner
    from pdqn.errors import OracleError

    def broken(objectives):
        raise OracleError("no convergence")

    monkeypatch.setattr(runner, "centralized_solve", broken)
    assert main(["run", "--preset", "mushroom", "--budget", "1"]) == EXIT_ORACLE


def test_sweep_command(tmp_path, capsys):
    code = main(["sweep", "--preset", "linreg-k10", "--axis", "kappa_f", "--values", "10,100", "--target", "1e-5",
                 "--budget", "2000", "--out-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / "summary.csv").exists()
    assert "kappa_f" in capsys.readouterr().out


def test_sweep_bad_values():
    assert main(["sweep", "--preset", "linreg-k10", "--axis", "S", "--values", "1,x"]) == EXIT_CONFIG


def test_verify_command(capsys):
    assert main(["verify", "--trials", "20"]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("ok")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pdqn", "spectra", "--kind", "complete", "--n", "4"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "kappa_g=1" in res.stdout
