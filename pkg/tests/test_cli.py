import json

import pytest

from mpct import cli
from mpct.errors import ConfigError


def _config(tmp_path, name, edit=None):
    cfg = cli.load_config(name)
    if edit:
        edit(cfg)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(*argv):
    return cli.main(list(argv) + ["-q"])


def test_shipped_configs_validate():
    names = cli.shipped_configs()
    assert len(names) >= 8
    for name in names:
        exp = cli.Experiment.from_config(cli.load_config(name))
        assert exp.tag in ("STAN", "LIN_MPCT", "EQU_MPCT", "ROBUST_MPCT", "PERIODIC_MPCT", "HMPC", "ECON_MPCT")


class TestConfigErrors:
    def test_missing_file(self, tmp_path):
        assert _run("design", str(tmp_path / "nope.json"), "-o", str(tmp_path)) == cli.EXIT_ERROR

    def test_unknown_key(self, tmp_path):
        path = _config(tmp_path, "example1_lin", lambda c: c.update(extra=1))
        with pytest.raises(ConfigError):
            cli.load_config(path)
        assert _run("design", path, "-o", str(tmp_path)) == cli.EXIT_ERROR

    def test_wrong_schema_version(self, tmp_path):
        path = _config(tmp_path, "example1_lin", lambda c: c.update(schema=2))
        assert _run("solve", path, "-o", str(tmp_path)) == cli.EXIT_ERROR

    def test_constraint_dimension(self, tmp_path):
        path = _config(tmp_path, "example1_lin", lambda c: c.update(constraints={"lower": [-1, -1], "upper": [1, 1]}))
        assert _run("solve", path, "-o", str(tmp_path)) == cli.EXIT_ERROR


class TestCommands:
    def test_design_certified(self, tmp_path):
        out = tmp_path / "o"
        assert _run("design", "example1_lin", "-o", str(out)) == cli.EXIT_OK
        rep = json.loads((out / "validation.json").read_text())
        assert rep["certified"] is True
        assert (out / "design.json").exists() and (out / "sets.json").exists()

    def test_design_robust(self, tmp_path):
        out = tmp_path / "o"
        assert _run("design", "example1_robust", "-o", str(out)) == cli.EXIT_OK
        assert "rpi" in json.loads((out / "sets.json").read_text())

    def test_design_uncertified(self, tmp_path):
        path = _config(tmp_path, "example1_lin", lambda c: c["design"].update(Q=[[0, 0], [0, 0]]))
        assert _run("design", path, "-o", str(tmp_path / "o")) == cli.EXIT_UNCERTIFIED
        assert json.loads((tmp_path / "o" / "validation.json").read_text())["certified"] is False

    def test_simulate_is_byte_deterministic(self, tmp_path):
        def short(c):
            c["run"]["T"] = 15

        path = _config(tmp_path, "example1_lin", short)
        a, b = tmp_path / "a", tmp_path / "b"
        assert _run("simulate", path, "-o", str(a)) == cli.EXIT_OK
        assert _run("simulate", path, "-o", str(b)) == cli.EXIT_OK
        assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
        rep = json.loads((a / "report.json").read_text())
        assert rep["runs"][0]["violations"] == 0 and rep["runs"][0]["steps"] == 15

    def test_simulate_unreachable_stan(self, tmp_path):
        path = _config(tmp_path, "example1_stan", lambda c: c["schedule"].update(values=[[12.0]]))
        assert _run("simulate", path, "-o", str(tmp_path / "o")) == cli.EXIT_UNCERTIFIED

    def test_doa_small_grid(self, tmp_path):
        def coarse(c):
            c["run"]["grid"] = {"ranges": [[-10, 10], [-2, 2]], "step": 1.0}

        out = tmp_path / "o"
        assert _run("doa", _config(tmp_path, "example1_lin", coarse), "-o", str(out)) == cli.EXIT_OK
        summary = json.loads((out / "doa_summary.json").read_text())
        assert summary["subset"] is True and summary["superset"] is True
        assert (out / "doa_STAN.csv").exists() and (out / "doa_LIN_MPCT.csv").exists()

    def test_doa_empty_grid(self, tmp_path):
        def empty(c):
            c["run"]["grid"] = {"ranges": [[1, 0], [0, 1]], "step": 0.5}

        out = tmp_path / "o"
        assert _run("doa", _config(tmp_path, "example1_lin", empty), "-o", str(out)) == cli.EXIT_OK
        summary = json.loads((out / "doa_summary.json").read_text())
        assert summary["counts"] == {"STAN": 0, "LIN_MPCT": 0}

    def test_doa_unreachable_stan_reference(self, tmp_path):
        def far(c):
            c["run"]["doa_reference"] = [12.0]
            c["run"]["grid"] = {"ranges": [[-1, 1], [-1, 1]], "step": 1.0}

        assert _run("doa", _config(tmp_path, "example1_lin", far), "-o", str(tmp_path / "o")) == cli.EXIT_UNCERTIFIED

    def test_solve_dump_qp(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["solve", "example1_equ", "-o", str(out), "--dump-qp", "-q"]) == cli.EXIT_OK
        sol = json.loads((out / "solution.json").read_text())
        prog = json.loads((out / "program.json").read_text())
        assert sol["status"] == "Solved" and len(sol["z"]) == prog["n"]
        assert prog["schema"] == 1 and prog["kind"] == "QP"

    def test_solve_socp(self, tmp_path):
        assert _run("solve", "example1_econ", "-o", str(tmp_path)) == cli.EXIT_OK
        assert json.loads((tmp_path / "solution.json").read_text())["status"] == "Solved"

    def test_bench(self, tmp_path):
        assert _run("bench", "example1_equ", "-o", str(tmp_path), "--horizons", "5", "--iterations", "20") == cli.EXIT_OK
        rows = json.loads((tmp_path / "bench.json").read_text())
        assert {r["backend"] for r in rows} <= {"native", "python"} and rows[0]["N"] == 5


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    for cmd in ("design", "simulate", "doa", "solve", "bench"):
        assert cmd in text
