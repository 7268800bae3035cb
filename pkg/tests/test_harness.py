import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from foliated_marcus.harness import cli
from foliated_marcus.harness.config import ConfigError, load_config, parse_config
from foliated_marcus.harness.parallel import WORKERS_ENV, chunk_indices, resolve_workers
from foliated_marcus.harness.runner import CSV_COLUMNS, run
from foliated_marcus.rng import RNG_ALGORITHM, rng_stream

SMALL = """
schema_version = 1
seed = 42
replicas = 12

[circle]
perturbation = "linear"
A = [[0.0, 0.0], [0.0, 2.0]]
slow_noise = "radial"

[eta]
t_grid = [5.0, 10.0, 20.0]

[gap]
epsilons = [0.1, 0.05]
mesh_dt = 0.05

[calibration]
T_values = [1.0, 2.0, 4.0]
mesh_dt = 0.05

[averaging]
epsilons = [0.1, 0.05, 0.02]
lambda = 0.8
c = {c}
T = 0.5
mesh_points = 128

[checks]
enabled = ["triangle"]
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def small(tmp_path, c="0.5"):
    return write(tmp_path, SMALL.replace("{c}", c))


# config


def test_defaults_parse():
    cfg = parse_config({"schema_version": 1})
    assert cfg.seed == 42 and cfg.averaging.lam == 0.8 and cfg.averaging.T == 0.5


@pytest.mark.parametrize(
    "body, field",
    [
        ("schema_version = 2", "schema_version"),
        ("schema_version = 1\n[averaging]\nepsilons = [0.05, 0.1]", "averaging.epsilons"),
        ("schema_version = 1\n[averaging]\nepsilons = [0.1, 1.0]", "averaging.epsilons"),
        ("schema_version = 1\n[averaging]\nT = 1.5", "averaging.T"),
        ("schema_version = 1\n[averaging]\np = 1.5", "averaging.p"),
        ("schema_version = 1\n[gap]\np = 1.0", "gap.p"),
        ("schema_version = 1\n[averaging]\nc = 'auto'", "averaging.c"),
        ("schema_version = 1\n[averaging]\ncolour = 1", "averaging.colour"),
        ("schema_version = 1\n[circle]\nslow_noise = 'additive'", "averaging.coupling"),
        ("schema_version = 1\n[circle]\nA = [[1.0, 2.0]]", "circle.A"),
        ("schema_version = 1\n[checks]\nenabled = ['nope']", "checks.enabled"),
    ],
)
def test_config_errors_name_the_field(tmp_path, body, field):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, body))
    assert field in str(err.value)


def test_eta_allows_p_one(tmp_path):
    cfg = load_config(write(tmp_path, "schema_version = 1\n[eta]\np = 1.0"))
    assert cfg.eta.p == 1.0


def test_syntax_error_reports_line(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(write(tmp_path, "schema_version = 1\nseed = = 3\n"))
    assert "line 2" in str(err.value)


def test_hash_ignores_runtime_fields(tmp_path):
    a = load_config(write(tmp_path, "schema_version = 1\nworkers = 1", "a.toml"))
    b = load_config(write(tmp_path, "schema_version = 1\nworkers = 4\noutput_dir = 'x'", "b.toml"))
    c = load_config(write(tmp_path, "schema_version = 1\nseed = 1", "c.toml"))
    assert a.config_hash() == b.config_hash() != c.config_hash()


# parallel


def test_chunks_cover_range():
    for n in (0, 1, 7, 100):
        for k in (1, 3, 32):
            flat = [i for r in chunk_indices(n, k) for i in r]
            assert flat == list(range(n))


def test_worker_resolution(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert resolve_workers(None, 1) == 3
    assert resolve_workers(2, 1) == 2
    monkeypatch.delenv(WORKERS_ENV)
    assert resolve_workers(None, 5) == 5
    with pytest.raises(ValueError):
        resolve_workers(0, 1)


# runs


def test_run_is_deterministic(tmp_path):
    cfg = load_config(small(tmp_path))
    assert run(cfg, tmp_path / "a") == 0
    assert run(cfg, tmp_path / "b") == 0
    for name in ("report.csv", "report.json", "diagnostics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_worker_count_does_not_change_output(tmp_path):
    cfg = load_config(small(tmp_path))
    run(cfg, tmp_path / "w1", workers=1, experiment="averaging")
    run(cfg, tmp_path / "w2", workers=2, experiment="averaging")
    for name in ("report.csv", "report.json", "diagnostics.json"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()


def test_csv_has_one_row_per_eps(tmp_path):
    cfg = load_config(small(tmp_path))
    run(cfg, tmp_path / "out", experiment="averaging")
    rows = list(csv.reader((tmp_path / "out" / "report.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 4
    assert [float(r[0]) for r in rows[1:]] == [0.1, 0.05, 0.02]


def test_diagnostics_metadata(tmp_path):
    cfg = load_config(small(tmp_path))
    run(cfg, tmp_path / "out", experiment="gap")
    d = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
    assert d["config_hash"] == replace(cfg, experiment="gap").config_hash()
    assert d["rng_algorithm"] == RNG_ALGORITHM
    assert d["build_id"].startswith("0.1.0+")
    assert d["tolerances"]["flow_tol"] == 1e-10
    assert set(d["truncation_bias"]) == {"fast", "slow"}


def test_calibrate_mode(tmp_path):
    cfg = load_config(small(tmp_path, c='"calibrate"'))
    run(cfg, tmp_path / "out", experiment="averaging")
    cal = json.loads((tmp_path / "out" / "diagnostics.json").read_text())["calibration"]
    assert cal["k2"] > 0
    assert cal["c"] == pytest.approx((1 - cal["lambda_prime"]) / cal["k2"], rel=1e-15)
    assert cal["lambda_prime"] == pytest.approx(0.9)


def test_failed_check_gives_nonzero_exit_with_record(tmp_path, capsys):
    text = SMALL.replace("{c}", "0.5").replace('enabled = ["triangle"]', 'enabled = ["averaging_envelope"]')
    text = text.replace('slow_noise = "radial"', 'slow_noise = "additive"')
    text = text.replace("A = [[0.0, 0.0], [0.0, 2.0]]", "A = [[1.0, 0.0], [0.0, 1.0]]")
    text = text.replace("mesh_points = 128", 'mesh_points = 128\ncoupling = "physical"')
    code = cli.main(["run", str(write(tmp_path, text)), "--out", str(tmp_path / "out"), "--experiment", "averaging"])
    failure = json.loads(capsys.readouterr().err)
    assert code == 1
    (rec,) = failure["failures"]
    assert rec["name"] == "averaging_envelope"
    assert {"observed", "bound", "stderr"} <= set(rec)


def test_cli_seed_override(tmp_path):
    p = small(tmp_path)
    assert cli.main(["run", str(p), "--out", str(tmp_path / "s"), "--seed", "7", "--experiment", "gap"]) == 0
    rep = json.loads((tmp_path / "s" / "report.json").read_text())
    assert rep["config"]["seed"] == 7


def test_cli_config_error_exit(tmp_path, capsys):
    assert cli.main(["run", str(write(tmp_path, "schema_version = 3"))]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "config"


# rng


def test_same_triple_same_sequence():
    assert np.array_equal(rng_stream(5, 3, "fast").random(100), rng_stream(5, 3, "fast").random(100))
    assert not np.array_equal(rng_stream(5, 3, "fast").random(100), rng_stream(5, 3, "restart_0").random(100))


def _xcorr(a, b):
    a = (a - a.mean()) / a.std()
    b = (b - b.mean()) / b.std()
    return abs(np.mean(a * b))


@pytest.mark.slow
def test_independence_battery():
    n = 10**6
    bound = 4 / math.sqrt(n)
    for idx in range(3):
        x = rng_stream(42, idx, "fast").random(n)
        y = rng_stream(42, idx + 1, "fast").random(n)
        s = rng_stream(42, idx, "slow").random(n)
        for a, b in ((x, y), (x, s)):
            assert _xcorr(a, b) < bound
            for lag in (1, 2, 7):
                assert _xcorr(a[lag:], b[:-lag]) < bound
        # serial correlation within a stream
        assert _xcorr(x[1:], x[:-1]) < bound
