import json

import pytest

from ifslab import reference
from ifslab.cli import SCHEMA, main
from ifslab.system import dump_system


def _read(path):
    return json.loads(path.read_text())


def test_verify_half(tmp_path):
    assert main(["verify", "--system", "half", "--seed", "1", "--out", str(tmp_path)]) == 0
    doc = _read(tmp_path / "verify.json")
    assert doc["schema"] == SCHEMA
    assert doc["payload"]["contraction"]["rho_hat"] == pytest.approx(0.5, abs=1e-9)
    assert doc["config"]["seed"] == 1 and doc["passed"]


def test_verify_expanding_fails(tmp_path):
    assert main(["verify", "--system", "expanding", "--seed", "1", "--out", str(tmp_path)]) == 3
    doc = _read(tmp_path / "verify.json")
    assert doc["payload"]["contraction"]["rho_hat"] == pytest.approx(1.25, abs=1e-6)


def test_malformed_system_leaves_no_outputs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    out = tmp_path / "out"
    assert main(["verify", "--system", str(bad), "--seed", "1", "--out", str(out)]) == 2
    assert not out.exists()


def test_seed_is_mandatory(tmp_path):
    assert main(["verify", "--system", "half", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("flags", [["--alpha", "0.3", "--beta", "0.2"], ["--r", "2.5"], ["--gamma", "0.5"]])
def test_inadmissible_parameters(tmp_path, flags):
    assert main(["norms", "--system", "half", "--seed", "1", "--out", str(tmp_path), *flags]) == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 1, "bogus": 3}))
    assert main(["verify", "--system", "half", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 1, "n": 50, "system": "tilt"}))
    assert main(["simulate", "--config", str(cfg), "--n", "20", "--out", str(tmp_path)]) == 0
    doc = _read(tmp_path / "simulate.json")
    assert doc["config"]["n"] == 20 and doc["config"]["seed"] == 1
    assert len((tmp_path / "trajectory.csv").read_text().splitlines()) == 21


def test_norms_command(tmp_path):
    assert main(["norms", "--system", "tilt", "--seed", "2", "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "norms.json")["payload"]["norms"]
    assert rows["constant"]["weighted_norm"] == 1.0


def test_report_marks_missing_commands(tmp_path):
    main(["verify", "--system", "half", "--seed", "1", "--out", str(tmp_path)])
    assert main(["report", "--seed", "1", "--out", str(tmp_path)]) == 0
    claims = _read(tmp_path / "report.json")["payload"]["claims"]
    assert claims["contraction_and_regularity_conditions"]["status"] == "pass"
    assert claims["geometric_decay_of_iterates"]["status"] == "not run"


def test_report_rejects_schema_mismatch(tmp_path):
    main(["verify", "--system", "half", "--seed", "1", "--out", str(tmp_path)])
    doc = _read(tmp_path / "verify.json")
    doc["schema"] = "ifslab-report/0"
    (tmp_path / "verify.json").write_text(json.dumps(doc))
    assert main(["report", "--seed", "1", "--out", str(tmp_path)]) == 2


def test_report_without_artifacts(tmp_path):
    assert main(["report", "--seed", "1", "--out", str(tmp_path)]) == 2


def test_numeric_error_exit_code(tmp_path):
    path = tmp_path / "single.json"
    dump_system(reference.single_halving(), path)
    # the invariant measure is a point mass, so no ramp width meets the mass constraint
    code = main(["brackets", "--system", str(path), "--seed", "1", "--n", "5000", "--out", str(tmp_path / "o")])
    assert code == 5


def test_identical_runs_are_byte_identical(tmp_path):
    for d in ("a", "b"):
        args = ["--system", "tilt", "--seed", "3", "--out", str(tmp_path / d)]
        main(["simulate", *args, "--n", "500"])
        main(["decay", *args, "--n", "20000"])
    for name in ("simulate.json", "trajectory.csv", "decay.json", "decay.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
