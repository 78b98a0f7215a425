import json
import os

import pandas as pd
import pytest

from config import settings
from pipelines import cli
from pipelines.errors import KernelPositivityError, ParameterError
from pipelines.valleys import Taxonomy


def read_json(path):
    with open(path) as f:
        return json.load(f)


def test_torus_too_small_exits_2(tmp_path):
    assert cli.run(["rates", "--n", "4", "--L", "8", "--workers", "1", "--out", str(tmp_path / "r.json")]) == 2


def test_unknown_command_exits_2():
    assert cli.run(["forecast"]) == 2


def test_elementary_payload_is_reproducible(tmp_path):
    out = tmp_path / "elementary.json"
    argv = ["elementary", "--n", "4", "--L", "9", "--out", str(out)]
    assert cli.run(argv) == 0
    first = out.read_bytes()
    payload = json.loads(first)
    meta = payload["metadata"]
    assert meta["tool_version"] == settings.TOOL_VERSION
    assert meta["generator"] == settings.GENERATOR_NAME
    assert meta["command"] == "elementary"
    assert meta["params"]["n"] == 4 and meta["params"]["L"] == 9
    assert payload["elementary"]["r_plus"] == pytest.approx(1 / 3)
    assert cli.run(argv) == 0
    assert out.read_bytes() == first


def test_config_file_and_flag_override(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"n": 4, "L": 9, "seed": 11}))
    parsed = cli.parse_config(["simulate", "--config", str(config), "--beta", "2.5", "--workers", "1"])
    assert (parsed.n, parsed.L, parsed.seed, parsed.betas) == (4, 9, 11, [2.5])
    parsed = cli.parse_config(["simulate", "--config", str(config), "--seed", "3", "--workers", "1"])
    assert parsed.seed == 3
    assert cli.run(["elementary", "--config", str(config), "--L", "8"]) == 2


def test_valley_runs_flag():
    base = ["validate", "--n", "4", "--L", "9", "--workers", "1"]
    assert cli.parse_config(base).valley_runs == 0
    assert cli.parse_config(base + ["--valley-runs"]).valley_runs == settings.DEFAULT_VALLEY_RUNS
    assert cli.parse_config(base + ["--valley-runs", "50"]).valley_runs == 50
    assert cli.run(base + ["--valley-runs", "-1"]) == 2


def test_unknown_config_key(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"colour": "blue"}))
    with pytest.raises(ParameterError):
        cli.parse_config(["elementary", "--config", str(config)])


def test_workers_from_environment(monkeypatch):
    monkeypatch.setenv(settings.WORKERS_ENV_VAR, "3")
    assert cli.resolve_workers(None) == 3
    assert cli.resolve_workers(2) == 2
    monkeypatch.setenv(settings.WORKERS_ENV_VAR, "many")
    with pytest.raises(ParameterError):
        cli.resolve_workers(None)
    monkeypatch.delenv(settings.WORKERS_ENV_VAR)
    assert cli.resolve_workers(None) == (os.cpu_count() or 1)


def test_contract_violation_exits_3(monkeypatch, tmp_path):
    def broken(config):
        raise KernelPositivityError("Q(0, y) = 0")

    monkeypatch.setitem(cli.HANDLERS, "elementary", broken)
    assert cli.run(["elementary", "--n", "4", "--L", "9", "--out", str(tmp_path / "e.json")]) == 3


def test_simulate_writes_events(tmp_path):
    out = tmp_path / "traj.csv"
    argv = ["simulate", "--n", "4", "--L", "9", "--beta", "2", "--seed", "1",
            "--max-events", "500", "--excursions", "1000", "--out", str(out)]
    assert cli.run(argv) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == settings.TRAJECTORY_COLUMNS
    assert len(frame) == 500
    assert frame["time"].is_monotonic_increasing
    meta = read_json(str(out) + ".meta.json")
    assert meta["seed"] == 1
    assert meta["params"]["max_events"] == 500


def test_rates_emits_kernel(tmp_path, kernel):
    out = tmp_path / "rates.json"
    assert cli.run(["rates", "--n", "4", "--L", "9", "--workers", "1", "--out", str(out)]) == 0
    payload = read_json(out)["rates"]
    assert payload["Z"] == pytest.approx(kernel.Z, rel=1e-12)
    assert sum(e["Q"] for e in payload["kernel_row"]) == pytest.approx(1.0, abs=1e-10)
    assert len(payload["Q"]) == 81
    assert (payload["n"], payload["L"], payload["kappa"]) == (4, 9, Taxonomy.get(4, 9).kappa)
    assert len(payload["r"]) == 81 and all(len(row) == 81 for row in payload["r"])
    assert payload["r"][0][10] == pytest.approx(kernel.Z * payload["Q"][0][10], rel=1e-12)
    assert payload["r"][0][0] == 0.0
    assert sum(payload["r"][3]) == pytest.approx(kernel.Z, rel=1e-10)


def test_bad_beta_exits_2(tmp_path):
    assert cli.run(["validate", "--n", "4", "--L", "9", "--beta-list", "5,-1",
                    "--out", str(tmp_path / "v.json")]) == 2


@pytest.mark.slow
def test_validate_end_to_end(tmp_path):
    out = tmp_path / "validate.json"
    argv = ["validate", "--n", "4", "--L", "12", "--beta-list", "5,6,7",
            "--excursions", "500", "--seed", "1", "--out", str(out)]
    assert cli.run(argv) == 0
    report = read_json(out)["validation"]
    tv = [row["tv_distance"] for row in report["betas"]]
    assert tv[0] > tv[1] > tv[2]
