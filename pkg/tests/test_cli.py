import json
import subprocess
import sys

import pytest

from occuflux import acceptance, cli

REF = {"V": 1.0, "q": 0.25, "H": 0.5, "L": 1.0, "motion": {"kind": "brownian", "sigma": 1.0}}
BUMP = {"amplitude": 1.0, "center": [0.0], "width": 1.0}


def write(tmp_path, name="cfg.json", **fields):
    cfg = {**REF, "seed": 1, "output_dir": str(tmp_path / "out"), **fields}
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_schema_is_json(capsys):
    assert cli.main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["properties"]["kind"]["enum"] == list(cli.KINDS)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "occuflux", "schema"], capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["title"] == "occuflux experiment config"


def test_malformed_config_exits_nonzero(tmp_path, capsys):
    path = write(tmp_path, kind="assumptions", tests=[BUMP], q=0.7)
    assert cli.main(["run", str(path)]) != 0
    assert "q must be < 1/2" in capsys.readouterr().err


@pytest.mark.parametrize("fields, message", [
    ({"kind": "fluctuations", "tests": [BUMP], "grid": [1.0]}, "replicas"),
    ({"kind": "nonsense"}, "kind"),
    ({"kind": "assumptions", "tests": [BUMP], "colour": 1}, "unknown config field"),
    ({"kind": "assumptions", "tests": [{"width": -1.0}]}, "tests[0]"),
])
def test_field_level_messages(tmp_path, capsys, fields, message):
    path = write(tmp_path, **fields)
    assert cli.main(["run", str(path)]) == 2
    assert message in capsys.readouterr().err


def test_seed_is_mandatory(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**REF, "kind": "assumptions", "tests": [BUMP]}))
    assert cli.main(["run", str(path)]) == 2
    assert "seed" in capsys.readouterr().err


def test_assumptions_report(tmp_path):
    path = write(tmp_path, kind="assumptions", tests=[BUMP])
    assert cli.main(["run", str(path)]) == 0
    cfg = cli.load_config(path)
    report = json.loads(cfg.artifact("json").read_text())
    assert [r["name"] for r in report] == ["A4", "A5", "A6", "A7"]
    assert all(r["verdict"] == "pass" for r in report)
    manifest = json.loads((cfg.output_dir / f"manifest-{cfg.digest}.json").read_text())
    assert manifest["config_hash"] == cfg.digest and manifest["seed"] == 1
    assert {"occuflux", "numpy", "scipy", "numba", "python"} <= set(manifest["versions"])


def test_fluctuation_artifacts_are_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv("OCCUFLUX_THREADS", raising=False)
    fields = dict(kind="fluctuations", tests=[BUMP], grid=[0.25, 0.5, 0.75, 1.0], replicas=40, T=5.0)
    a = write(tmp_path, "a.json", threads=1, **fields)
    b = write(tmp_path, "b.json", threads=3, **{**fields, "output_dir": str(tmp_path / "other")})
    assert cli.main(["run", str(a)]) == 0
    assert cli.main(["run", str(b)]) == 0
    ca, cb = cli.load_config(a), cli.load_config(b)
    assert ca.digest == cb.digest
    assert ca.artifact("csv").read_bytes() == cb.artifact("csv").read_bytes()
    report = json.loads(ca.artifact("json").read_text())
    assert report["n_replicas"] == 40 and len(report["tests"]) == 2


def test_thread_override_from_environment(tmp_path, monkeypatch):
    fields = dict(kind="family", x=0.0, horizon=2.0, replicas=30, record_times=[1.0, 2.0])
    path = write(tmp_path, threads=1, **fields)
    assert cli.main(["run", str(path)]) == 0
    first = cli.load_config(path).artifact("csv").read_bytes()
    monkeypatch.setenv("OCCUFLUX_THREADS", "2")
    assert cli.main(["run", str(path)]) == 0
    assert cli.load_config(path).artifact("csv").read_bytes() == first
    assert first.splitlines()[0] == b"replica,seed,extinction_time,occupation,mass_t1.0,mass_t2.0"


def test_veqn_and_covariance_kinds(tmp_path):
    psi = {"spatial": BUMP, "chi": {"knots": [0.0, 1.0], "values": [1.0, 0.0]}, "time_scale": 4.0}
    v = write(tmp_path, "v.json", kind="veqn", psi=psi, t=0.5)
    c = write(tmp_path, "c.json", kind="covariance", tests=[BUMP], grid=[0.5, 1.0])
    assert cli.main(["run", str(v)]) == 0
    assert cli.main(["run", str(c)]) == 0
    summary = json.loads(cli.load_config(v).artifact("json").read_text())
    assert summary["u_discrepancy"] <= 1e-6 and summary["v_min"] >= 0
    rows = cli.load_config(c).artifact("csv").read_text().splitlines()
    assert rows[0] == "s,t,phi_i,phi_j,covariance" and len(rows) == 5


def _fake_results(passed):
    def run(**kw):
        return [acceptance.CriterionResult(i, f"c{i}", passed or i != 3, "ok") for i in range(1, 11)]
    return run


@pytest.mark.parametrize("passed, code", [(True, 0), (False, 1)])
def test_verify_exit_status_and_sandbox(tmp_path, monkeypatch, passed, code):
    monkeypatch.setattr(acceptance, "run_acceptance", _fake_results(passed))
    path = tmp_path / "verify.json"
    path.write_text(json.dumps({"kind": "verify", "seed": 0, "output_dir": str(tmp_path / "out")}))
    before = {p for p in tmp_path.iterdir()}
    assert cli.main(["verify", str(path)]) == code
    assert {p for p in tmp_path.iterdir()} == before | {tmp_path / "out"}
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert len(names) == 3 and names[0].startswith("manifest-")
