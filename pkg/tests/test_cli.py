import json

import pytest

from conftest import CONFIG_DIR
from constrained_hj.domain.enums import ExitCode, RunStatus
from constrained_hj.entrypoints import cli
from constrained_hj.entrypoints.cli import cli_main

MODEL = {"a": 1.0, "B": [[1.0]], "theta": [0.0], "c": 1.0, "psi": {"kind": "const", "value": 1.0}}
INITIAL = {"kind": "quadratic", "m0": [0.5], "A0": [[1.0]], "r": 0.4231421876608172}
GRID = {"lo": [-4.0], "hi": [4.0], "n": [161]}


def write_config(directory, name, payload):
    path = directory / f"{name}.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def manifest(directory):
    return json.loads((directory / "manifest.json").read_text(encoding="utf-8"))


class TestCli:
    # --------- validate-model ----------
    def test_canonical_model_is_admissible(self, tmp_path):
        code = cli_main(["--output-dir", str(tmp_path), "validate-model", str(CONFIG_DIR / "canonical.json")])
        assert code == ExitCode.SUCCESS
        report = json.loads((tmp_path / "hypotheses.json").read_text(encoding="utf-8"))
        assert report["admissible"]
        assert manifest(tmp_path)["status"] == RunStatus.COMPLETE

    @pytest.mark.parametrize("name", ["c-zero.json", "indefinite-B.json", "shifted-u0.json"])
    def test_hypothesis_failures(self, tmp_path, name):
        code = cli_main(["--output-dir", str(tmp_path), "validate-model", "--config", str(CONFIG_DIR / name)])
        assert code == ExitCode.HYPOTHESIS_FAILURE
        assert (tmp_path / "hypotheses.json").exists()
        assert manifest(tmp_path)["status"] == RunStatus.PARTIAL

    # --------- configuration errors ----------
    def test_broken_documents(self, tmp_path):
        broken = tmp_path / "broken.json"
        broken.write_text("{not json", encoding="utf-8")
        assert cli_main(["--output-dir", str(tmp_path / "a"), "solve-oracle", str(broken)]) == ExitCode.CONFIG_ERROR
        invalid = write_config(tmp_path, "invalid", {"model": MODEL, "initial": INITIAL, "T": -1.0})
        assert cli_main(["--output-dir", str(tmp_path / "b"), "solve-oracle", invalid]) == ExitCode.CONFIG_ERROR
        assert cli_main(["--output-dir", str(tmp_path / "c"), "solve-oracle"]) == ExitCode.CONFIG_ERROR
        missing = str(tmp_path / "missing.json")
        assert cli_main(["--output-dir", str(tmp_path / "d"), "solve-oracle", missing]) == ExitCode.CONFIG_ERROR

    @pytest.mark.parametrize("document", ["[1.0, 2.0]", "3.5", "null"])
    def test_document_must_be_an_object(self, tmp_path, document):
        config = tmp_path / "model.json"
        config.write_text(document, encoding="utf-8")
        assert cli_main(["--output-dir", str(tmp_path / "out"), "validate-model", str(config)]) == ExitCode.CONFIG_ERROR
        assert manifest(tmp_path / "out")["errors"][0].startswith("ConfigurationError")

    def test_truncated_snapshot_is_a_config_error(self, tmp_path):
        snapshot = tmp_path / "u0.bin"
        snapshot.write_bytes(b"\x01\x00\x00")
        initial = {"kind": "field", "snapshot": str(snapshot), "r": 0.4}
        config = write_config(tmp_path, "run", {"model": MODEL, "initial": initial, "grid": GRID, "T": 0.1, "dt": 0.01})
        assert cli_main(["--output-dir", str(tmp_path / "out"), "solve-oracle", config]) == ExitCode.CONFIG_ERROR

    def test_malformed_document_errors_are_config_errors(self, tmp_path, monkeypatch, capsys):
        def missing_key(args, uow):
            return {"I_T": {}["I_T"]}

        monkeypatch.setitem(cli.COMMANDS, "solve-oracle", missing_key)
        config = write_config(tmp_path, "oracle", {"model": MODEL, "initial": INITIAL, "T": 1.0})
        output = tmp_path / "out"
        assert cli_main(["--output-dir", str(output), "solve-oracle", config]) == ExitCode.CONFIG_ERROR
        assert "configuration error" in capsys.readouterr().err
        written = manifest(output)
        assert written["status"] == RunStatus.PARTIAL
        assert written["errors"][0].startswith("ConfigurationError")

    def test_parabolic_needs_eps(self, tmp_path):
        config = write_config(tmp_path, "run", {"model": MODEL, "initial": INITIAL, "grid": GRID, "T": 0.1})
        assert cli_main(["--output-dir", str(tmp_path / "out"), "solve-parabolic", config]) == ExitCode.CONFIG_ERROR

    # --------- runs ----------
    def test_solve_oracle_writes_artifacts(self, tmp_path):
        config = write_config(tmp_path, "oracle", {"model": MODEL, "initial": INITIAL, "grid": GRID, "T": 1.0, "dt": 0.01})
        output = tmp_path / "out"
        assert cli_main(["--output-dir", str(output), "--emit-plot-data", "solve-oracle", config]) == ExitCode.SUCCESS
        written = manifest(output)
        assert written["status"] == RunStatus.COMPLETE
        assert {"oracle.csv", "oracle_meta.json", "oracle_I.dat", "oracle_x1.dat"} <= set(written["artifacts"])
        assert written["summary"]["I_T"] == pytest.approx(0.99196, abs=1e-5)
        assert written["summary"]["hj_residual"] <= 1e-4
        header = (output / "oracle.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == "t,m_1,A_11,I,rho,constraint_residual,R_residual"

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        config = write_config(
            tmp_path, "run", {"model": MODEL, "initial": INITIAL, "grid": GRID, "T": 1.0, "eps": 0.1, "dt": 0.5}
        )
        output = tmp_path / "out"
        assert cli_main(["--output-dir", str(output), "solve-parabolic", config]) == ExitCode.NUMERICAL_FAILURE
        assert "invariant cfl" in capsys.readouterr().err
        written = manifest(output)
        assert written["status"] == RunStatus.PARTIAL
        assert written["errors"][0].startswith("StepRejectedError")
