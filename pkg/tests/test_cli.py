import json

import pytest

from poincare_annulus.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, build_parser, config_from_args, main
from poincare_annulus.config import ConfigError, RunConfig
from tests.conftest import SPIRAL_1

SWEEP = ["--nu-min", "2", "--nu-max", "3", "--steps", "2", "--burn-in", "20", "--samples", "10"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == EXIT_OK else None), err


def write_config(path, **kw):
    path.write_text(json.dumps(kw))
    return path


# ---------------------------------------------------------------------------
# audit and exit codes


def test_audit_reports_tau(tmp_path, capsys):
    code, out, _ = run(capsys, "audit", "--out", tmp_path)
    assert code == EXIT_OK
    assert out["result"]["tau"] == pytest.approx(0.00136986, abs=1e-8)
    data = json.loads((tmp_path / "audit.json").read_text())
    assert data["derived"]["kappa"] == pytest.approx(2.027778, abs=1e-6)
    assert data["metadata"]["command"] == "audit"


def test_missing_parameter_key_is_usage_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", params={"a1": 0.1, "a2": 0.0075, "lambda1": 0.1})
    code, _, err = run(capsys, "audit", "--config", cfg, "--out", tmp_path / "o")
    assert code == EXIT_USAGE
    assert "lambda2" in err


def test_equal_lambdas_is_computation_failure(tmp_path, capsys):
    code, _, err = run(capsys, "audit", "--out", tmp_path, "--lambda2", "0.1")
    assert code == EXIT_FAIL
    assert "kappa" in err


def test_output_path_is_a_file(tmp_path, capsys):
    blocker = tmp_path / "taken"
    blocker.write_text("")
    code, _, _ = run(capsys, "audit", "--out", blocker)
    assert code == EXIT_FAIL


def test_zero_steps_is_usage_error(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--out", tmp_path, "--steps", "0")
    assert code == EXIT_USAGE


def test_unknown_command_is_usage_error(capsys):
    assert main(["fly"]) == EXIT_USAGE


def test_bad_config_json(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    code, _, err = run(capsys, "audit", "--config", cfg, "--out", tmp_path / "o")
    assert code == EXIT_USAGE and "JSON" in err


@pytest.mark.parametrize("argv", [
    ["--u", "1", "--k1", "0", "--k2", "1"],
    ["--beta", "2", "--u", "1", "--k1", "0"],
    ["--beta-min", "2", "--beta-max", "3", "--k1", "0", "--k2", "1"],
])
def test_model_map_requires_constants(tmp_path, capsys, argv):
    code, _, err = run(capsys, "model-map", "--out", tmp_path, *argv)
    assert code == EXIT_USAGE
    assert "explicit constant" in err


# ---------------------------------------------------------------------------
# annulus


def test_annulus_svg_content(tmp_path, capsys):
    code, out, _ = run(capsys, "annulus", "--out", tmp_path)
    assert code == EXIT_OK and out["result"]["verdict"] == "CorrectlyDefined"
    svg = (tmp_path / "annulus.svg").read_text()
    for label in ("isocline S1", "isocline S2", "O1", "O2", "L1", "L2"):
        assert label in svg
    markers = (tmp_path / "markers.csv").read_text()
    assert markers.startswith("# tool=poincare-annulus\n")
    cls = json.loads((tmp_path / "classification.json").read_text())
    assert len(cls["section"]["intervals"]) == 2


def test_annulus_spiral_not_correct(tmp_path, capsys):
    flags = [x for k, v in SPIRAL_1.to_dict().items() for x in (f"--{k}", v)]
    code, out, _ = run(capsys, "annulus", "--out", tmp_path, *flags)
    assert code == EXIT_OK
    assert out["result"]["verdict"] == "NotCorrect"
    cls = json.loads((tmp_path / "classification.json").read_text())
    assert cls["verdict"] == "NotCorrect"
    assert cls["evidence"]["tag"] == "segment"


def test_poincare_on_spiral_fails(tmp_path, capsys):
    flags = [x for k, v in SPIRAL_1.to_dict().items() for x in (f"--{k}", v)]
    code, _, err = run(capsys, "poincare", "--out", tmp_path, *flags)
    assert code == EXIT_FAIL and "not correctly defined" in err


def test_format_selection(tmp_path, capsys):
    code, out, _ = run(capsys, "annulus", "--out", tmp_path, "--format", "json")
    assert code == EXIT_OK
    assert [p.name for p in tmp_path.iterdir()] == ["classification.json"]


# ---------------------------------------------------------------------------
# planar, poincare, model map


def test_planar_reports_each_system(tmp_path, capsys):
    code, out, _ = run(capsys, "planar", "--out", tmp_path, "--format", "json")
    assert code == EXIT_OK
    data = json.loads((tmp_path / "planar.json").read_text())
    assert data["comparison1"]["cycle"]["period"] > 0
    # the base comparison-2 cycle hugs the axes beyond double precision
    assert data["comparison2"]["cycle"] is None
    assert data["comparison2"]["detail"].startswith("NonConvergence")


def test_poincare_seed_echoed(tmp_path, capsys):
    code, out, _ = run(capsys, "poincare", "--out", tmp_path, "--burn-in", "20", "--samples", "10",
                       "--seed", "7")
    assert code == EXIT_OK
    data = json.loads((tmp_path / "poincare.json").read_text())
    assert data["metadata"]["seed"] == 7 and data["n"] == 10


def test_model_map_cascade(tmp_path, capsys):
    code, out, _ = run(capsys, "model-map", "--out", tmp_path, "--beta-min", "2", "--beta-max", "3.6",
                       "--steps", "5", "--u", "1", "--k1", "0", "--k2", "1")
    assert code == EXIT_OK
    assert {1, 2, 4} <= set(out["result"]["periods_found"])


# ---------------------------------------------------------------------------
# sweep


def test_sweep_resume_reuses_records(tmp_path, capsys):
    code, first, _ = run(capsys, "sweep", "--out", tmp_path, *SWEEP)
    assert code == EXIT_OK and first["result"] == {"records": 2, "reused": 0}
    before = (tmp_path / "sweep.csv").read_bytes()
    code, again, _ = run(capsys, "sweep", "--out", tmp_path, *SWEEP, "--resume")
    assert code == EXIT_OK and again["result"] == {"records": 2, "reused": 2}
    rows = [ln for ln in (tmp_path / "sweep.csv").read_text().splitlines() if not ln.startswith("#")]
    assert rows == [ln for ln in before.decode().splitlines() if not ln.startswith("#")]


def test_reruns_byte_identical(tmp_path, capsys):
    outputs = []
    for _ in range(2):
        assert run(capsys, "sweep", "--out", tmp_path, *SWEEP)[0] == EXIT_OK
        outputs.append({p.name: p.read_bytes() for p in sorted(tmp_path.iterdir())})
    assert outputs[0] == outputs[1]


# ---------------------------------------------------------------------------
# configuration


def test_flags_override_config(tmp_path):
    cfg = write_config(tmp_path / "c.json", epsilon=0.2, steps=7, seed=3)
    ns = build_parser().parse_args(["sweep", "--config", str(cfg), "--steps", "9"])
    rc = config_from_args(ns)
    assert (rc.epsilon, rc.steps, rc.seed) == (0.2, 9, 3)


def test_config_round_trip():
    rc = RunConfig("model-map", model_map={"beta": 2.0, "u": 1.0, "k1": 0.0, "k2": 1.0}, seed=5)
    back = RunConfig.from_json(rc.to_json())
    assert back == rc and back.to_json() == rc.to_json()


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"command": "audit", "colour": "red"})


def test_digest_ignores_output_location():
    a = RunConfig("audit", out="a", jobs=1)
    b = RunConfig("audit", out="b", jobs=4)
    assert a.digest() == b.digest()
    assert a.digest() != RunConfig("audit", seed=1).digest()


def test_metadata_header_on_every_csv(tmp_path, capsys):
    assert run(capsys, "annulus", "--out", tmp_path, "--format", "csv")[0] == EXIT_OK
    csvs = list(tmp_path.glob("*.csv"))
    assert len(csvs) == 3
    for p in csvs:
        head = p.read_text().splitlines()[:5]
        assert head[0] == "# tool=poincare-annulus"
        assert any(ln.startswith("# config_hash=") for ln in head)
