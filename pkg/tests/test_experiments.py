import csv
import io
import json

import pytest

from skwave import cli
from skwave.experiments import (
    EXPERIMENTS,
    SCHEMA,
    SEED_ENV,
    ConfigError,
    compare_results,
    parse_config,
    print_schema,
    relative_slack,
    rerun_manifest,
    run,
)


def write_cfg(tmp_path, body, name="run.cfg"):
    out = tmp_path / "out"
    path = tmp_path / name
    path.write_text(body + f"\noutput = {out}\n")
    return path, out


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


SMALL_VERIFY = """
experiment = verify-bounds
verify.k_max = 16
verify.n_times = 20
verify.mu_grid = 1e-3, 1e-1
verify.lambda_grid = 0, 10
"""

SMALL_SK = """
experiment = sk-sweep
samples = 6
block_size = 3
operator.N = 8
sim.dt = 1e-3
sim.T = 0.05
sim.record_every = 10
"""


def test_parse_defaults_and_comments():
    cfg = parse_config("experiment = coupling  # trailing\n\n# comment\nsweep.n_grid = 4, 8\n", env={})
    assert cfg["sweep.n_grid"] == [4, 8]
    assert cfg["samples"] == SCHEMA["samples"][1]
    assert cfg["coupling.enlargement"] == "cell"


@pytest.mark.parametrize(
    "text",
    [
        "experiment = nope",
        "experiment = coupling\nbogus.key = 1",
        "experiment = coupling\nsamples = 1\nsamples = 2",
        "experiment = coupling\nsamples",
        "experiment = coupling\nsim.dt = -1",
        "experiment = coupling\nsim.zeta = 3",
        "experiment = coupling\nsamples = many",
        "experiment = coupling\ncoupling.enlargement = wide",
        "experiment = coupling\noperator.family = power_law",
    ],
)
def test_parse_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text, env={})


def test_seed_env_override():
    assert parse_config("experiment = coupling\nseed = 3", env={SEED_ENV: "17"})["seed"] == 17
    with pytest.raises(ConfigError):
        parse_config("experiment = coupling", env={SEED_ENV: "x"})


def test_schema_output_parses_back():
    buf = io.StringIO()
    print_schema(buf)
    text = buf.getvalue().replace("experiment = (required)", "experiment = coupling")
    cfg = parse_config(text, env={})
    for key, (_, default, _) in SCHEMA.items():
        if key != "experiment":
            assert cfg[key] == default


def test_relative_slack():
    assert relative_slack(2.0, 1.0) == 0.5
    assert relative_slack(1.0, -2.0) == -0.5
    assert relative_slack(0.0, 0.0) == 0.0


def test_invalid_config_writes_nothing(tmp_path, capsys):
    path, out = write_cfg(tmp_path, "experiment = coupling\nsim.dt = -1")
    assert run(path, env={}) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().out


def test_unknown_key_via_cli(tmp_path):
    path, out = write_cfg(tmp_path, "experiment = coupling\nfoo = 1")
    assert cli.main(["run", str(path)]) == 2
    assert not out.exists()


def test_missing_file_is_config_error(tmp_path):
    assert run(tmp_path / "absent.cfg", env={}) == 2


def test_list_and_schema(capsys):
    assert cli.main(["list-experiments"]) == 0
    assert capsys.readouterr().out.split() == list(EXPERIMENTS)
    assert cli.main(["print-schema"]) == 0
    assert "sim.dt = 0.001" in capsys.readouterr().out


def test_verify_bounds_outputs_and_seed_independence(tmp_path, monkeypatch):
    path, out = write_cfg(tmp_path, SMALL_VERIFY)
    monkeypatch.setenv(SEED_ENV, "1")
    assert run(path) == 0
    first = (out / "results.csv").read_text()
    summary = rows(out / "summary.csv")
    assert summary and all(r["status"] == "pass" for r in summary)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] and manifest["seed"] == 1
    monkeypatch.setenv(SEED_ENV, "99")
    assert run(path) == 0
    assert (out / "results.csv").read_text() == first


def test_rerun_is_identical_across_workers(tmp_path, capsys):
    path, out = write_cfg(tmp_path, SMALL_SK + "sweep.mu_grid = 1e-1, 1e-2")
    code = run(path, env={})
    assert code in (0, 1)
    for workers in (1, 2):
        assert rerun_manifest(out / "manifest.json", tmp_path / f"re{workers}", workers) == code
        assert (tmp_path / f"re{workers}" / "results.csv").read_bytes() == (out / "results.csv").read_bytes()
    assert "identical" in capsys.readouterr().out


def test_rerun_detects_edited_results(tmp_path, capsys):
    path, out = write_cfg(tmp_path, SMALL_SK + "sweep.mu_grid = 1e-1, 1e-2")
    run(path, env={})
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["results_sha256"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(manifest))
    assert rerun_manifest(out / "manifest.json", tmp_path / "re") == 1
    assert "DIFFER" in capsys.readouterr().out


def test_seed_changes_results(tmp_path):
    path, out = write_cfg(tmp_path, SMALL_SK + "sweep.mu_grid = 1e-1, 1e-2")
    run(path, env={SEED_ENV: "1"})
    a = rows(out / "results.csv")
    run(path, env={SEED_ENV: "2"})
    b = rows(out / "results.csv")
    assert [r["statistic"] for r in a] == [r["statistic"] for r in b]
    assert any(x["value"] != y["value"] for x, y in zip(a, b))
    assert {r["seed"] for r in b} == {"2"}


def test_single_mass_skips_trend_checks(tmp_path):
    path, out = write_cfg(tmp_path, SMALL_SK + "sweep.mu_grid = 1e-2")
    run(path, env={})
    status = {r["check"]: r["status"] for r in rows(out / "summary.csv")}
    assert status["holder sup-distance decreasing as mu decreases"] == "skipped"
    assert status["holder squared-norm gap decreasing as mu decreases"] == "skipped"


def test_compare_results_tolerance():
    head = "experiment,params,statistic,value,stderr,n,seed\n"
    a = head + "e,p,s,1.0,nan,1,0\n"
    assert compare_results(a, head + "e,p,s,1.0000000001,nan,1,0\n", 1e-9)
    assert not compare_results(a, head + "e,p,s,1.001,nan,1,0\n", 1e-9)
    assert not compare_results(a, head, 1e-9)


@pytest.mark.parametrize("exp", ["coupling", "convolution-scaling", "self-convergence", "verify-semigroup"])
def test_each_experiment_runs_small(tmp_path, exp):
    body = {
        "coupling": "samples = 6\noperator.N = 8\nsim.T = 0.1\nsweep.n_grid = 4, 16",
        "convolution-scaling": "samples = 6\noperator.N = 8\nsim.T = 0.1\nsweep.lambda_grid = 1, 100",
        "self-convergence": "samples = 6\noperator.N = 8\nsim.T = 0.04\nsweep.substeps = 2, 4",
        "verify-semigroup": "verify.k_max = 8\nverify.n_times = 10\nverify.mu_grid = 0.01, 1",
    }[exp]
    path, out = write_cfg(tmp_path, f"experiment = {exp}\n{body}")
    assert run(path, env={}) in (0, 1)
    assert rows(out / "results.csv")
    assert rows(out / "summary.csv")
