import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from solitonlab import cli
from solitonlab.config import ConfigError, Expectation, bundled_configs, load_config, parse_config

CONFIGS = {p.stem: p for p in bundled_configs()}

ENTROPY = """[experiment]
name = small-entropy
job = entropy

[geometry]
n = 2
M = 100

[expect]
nu = approx -0.3068528194400547 1e-6
tau = approx 0.5 1e-6
"""


def test_bundled_configs_cover_every_job():
    jobs = {load_config(p).job for p in CONFIGS.values()}
    assert jobs == set(cli.JOBS)


def test_sphere_entropy_record(tmp_path):
    rec = cli.run(load_config(CONFIGS["sphere-entropy"]), tmp_path)
    assert rec.passed
    assert rec.outputs["nu"] == pytest.approx(-0.3068528194400547, abs=1e-6)
    data = json.loads((tmp_path / "sphere-entropy" / "record.json").read_text())
    assert data["config_hash"] == load_config(CONFIGS["sphere-entropy"]).digest()
    assert set(data["files"]) <= {p.name for p in (tmp_path / "sphere-entropy").iterdir()}


def test_product_instability_record(tmp_path):
    rec = cli.run(load_config(CONFIGS["product-instability"]), tmp_path)
    assert rec.passed
    assert rec.outputs["monotone_growth"] is True
    assert rec.outputs["nu_increase"] > 0


def test_negative_step_ceiling_is_a_parse_error(tmp_path):
    text = ENTROPY.replace("[expect]", "[solver]\ndt_max = -0.5\n\n[expect]")
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.line == 10 and err.value.field == "solver.dt_max"
    assert cli.main(["entropy", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("bad,field,line", [
    ("[geometry]\nflavour = 3\n", "geometry.flavour", 6),
    ("[geometry]\nM = many\n", "geometry.M", 6),
    ("seed = -1\n", "experiment.seed", 5),
    ("[expect]\nnu = roughly 1\n", "expect.nu", 6),
    ("[expect]\nnu = approx 1 -1\n", "expect.nu", 6),
])
def test_field_diagnostics(bad, field, line):
    text = "[experiment]\nname = t\njob = entropy\n\n" + bad
    with pytest.raises(ConfigError) as err:
        parse_config(text, "t.ini")
    assert err.value.field == field
    assert err.value.line == line


@settings(max_examples=50, deadline=None)
@given(text=st.text(max_size=200))
def test_arbitrary_text_parses_or_fails_cleanly(text):
    try:
        parse_config(text)
    except ConfigError:
        pass


def test_verdict_signed_deviation_and_missing_keys():
    out = {"nu": -0.30685, "classification": "linearly stable", "converged": True}
    v = cli.verdict(out, [Expectation("nu", "approx", (-0.2, 1e-6))])
    assert not v[0].passed and v[0].deviation == pytest.approx(-0.10685)
    v = cli.verdict(out, [Expectation("classification", "eq", ("linearly stable",)),
                          Expectation("converged", "true", ())])
    assert all(x.passed for x in v)
    with pytest.raises(cli.VerdictError):
        cli.verdict(out, [Expectation("sigma", "between", (0.4, 0.7))])


def test_tolerance_scale_widens_bounds():
    out = {"r": 2e-7}
    e = [Expectation("r", "le", (1e-7,))]
    assert not cli.verdict(out, e)[0].passed
    assert cli.verdict(out, e, scale=10.0)[0].passed


def test_deliberately_wrong_expectation_fails(tmp_path):
    path = tmp_path / "wrong.ini"
    path.write_text(ENTROPY.replace("tau = approx 0.5 1e-6", "tau = approx 0.6 1e-6"))
    assert cli.main(["entropy", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    rows = list(csv.reader(open(tmp_path / "o" / "small-entropy" / "verdicts.csv")))
    assert rows[0] == list(cli.VERDICT_COLUMNS)
    tau = [r for r in rows if r[1] == "tau"][0]
    assert tau[-1] == "fail" and float(tau[4]) == pytest.approx(-0.1, abs=1e-6)


def test_records_are_deterministic_and_never_overwritten(tmp_path):
    path = tmp_path / "v.ini"
    path.write_text(ENTROPY.replace("job = entropy", "job = variations").replace(
        "[expect]", "[solver]\nsamples = 2\n\n[expect]").replace("nu = approx", "samples = ge 2\n#").replace(
        "tau = approx 0.5 1e-6", ""))
    cfg = load_config(path).with_seed(3)
    a = cli.run(cfg, tmp_path / "a")
    b = cli.run(cfg, tmp_path / "b")
    assert a.outputs == b.outputs and a.config_hash == b.config_hash
    with pytest.raises(ConfigError, match="never overwritten"):
        cli.run(cfg, tmp_path / "a")
    c = cli.run(cfg.with_seed(4), tmp_path / "c")
    assert c.outputs != a.outputs and c.config_hash != a.config_hash


def test_job_mismatch_and_seed_override(tmp_path):
    path = tmp_path / "e.ini"
    path.write_text(ENTROPY)
    assert cli.main(["flow", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["entropy", "--config", str(path), "--out", str(tmp_path / "y"), "--seed", "9"]) == 0
    assert json.loads((tmp_path / "y" / "small-entropy" / "record.json").read_text())["seed"] == 9


def test_suite_runs_in_parallel(tmp_path):
    paths = [str(CONFIGS[k]) for k in ("product-entropy", "product-spectrum", "s3-isd")]
    code = cli.main(["suite", "--config", *paths, "--out", str(tmp_path), "--workers", "2"])
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "suite.csv")))
    assert rows[0] == list(cli.SUITE_COLUMNS)
    assert {r[0] for r in rows[1:]} == {"product-entropy", "product-spectrum", "s3-isd"}
    assert all(r[-1] == "pass" for r in rows[1:])


def test_solver_failure_leaves_no_output(tmp_path):
    path = tmp_path / "f.ini"
    # an off-soliton spectrum request fails inside the job
    path.write_text(ENTROPY.replace("job = entropy", "job = spectrum").replace(
        "M = 100", "M = 100\nshape = bump\namplitude = 0.1"))
    assert cli.main(["spectrum", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert list((tmp_path / "o").iterdir()) == []
