import json

import numpy as np
import pytest

from fvspine.acceptance import shipped_config
from fvspine.cli import main
from fvspine.config import parse_config
from fvspine.errors import ConfigError
from fvspine.experiments import run_experiment, simulate
from fvspine.genealogy import GenealogyLog
from fvspine.io import RunManifest, fmt, read_csv, read_events, write_csv, write_events
from fvspine.report import report

MINIMAL = """
experiment: spine_marginal
query_time: 6
engine:
  n: 100
  T: 12
  domain: {kind: interval, bounds: [0, 1]}
  initial: {kind: uniform_on_box, box: [0.25, 0.75]}
"""

TINY_SPINE = """
experiment: spine_marginal
seed: 5
replicas: 3
query_time: 1.0
engine:
  n: 8
  T: 2.0
  dt: 1.0e-3
  domain: {kind: interval, bounds: [0, 1]}
  initial: {kind: uniform_on_box, box: [0.25, 0.75]}
"""

TINY_BOUNDARY = """
experiment: boundary
seed: 3
engine:
  n: 2
  T: 1.0
  domain: {kind: interval, bounds: [0, 1]}
  initial: {kind: uniform_on_box, box: [0.25, 0.75]}
params: {trials: 2000, step_dt: 0.01}
"""


def tiny(text, out, **kw):
    return parse_config(text).with_overrides(output_dir=out, **kw)


# -- configuration ---------------------------------------------------------------

def test_minimal_config_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.engine.dt == 1e-4
    assert cfg.engine.storage_dt == pytest.approx(1e-3)
    assert cfg.level == 0.01 and cfg.replicas == 1
    assert cfg.params["write_events"] is True


def test_touching_box_rejected_with_margin_error():
    with pytest.raises(ConfigError, match="margin"):
        parse_config(MINIMAL.replace("[0.25, 0.75]", "[0.0, 0.75]"))


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="foo"):
        parse_config(MINIMAL + "foo: 1\n")
    with pytest.raises(ConfigError, match="bar"):
        parse_config(MINIMAL.replace("  n: 100", "  n: 100\n  bar: 2"))


@pytest.mark.parametrize("bad", [
    MINIMAL.replace("query_time: 6", "query_time: 7"),
    MINIMAL.replace("T: 12", "T: -1"),
    MINIMAL.replace("spine_marginal", "nonsense"),
    "just text",
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_json_and_files(tmp_path):
    cfg = parse_config(MINIMAL)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    again = parse_config(path)
    assert again.config_hash() == cfg.config_hash()
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.yaml")


def test_hash_ignores_parallelism_and_location():
    cfg = parse_config(MINIMAL)
    assert cfg.with_overrides(parallelism=4).config_hash() == cfg.config_hash()
    assert cfg.with_overrides(output_dir="/elsewhere").config_hash() == cfg.config_hash()
    assert cfg.with_overrides(seed=9).config_hash() != cfg.config_hash()
    faster = cfg.with_overrides(dt=2e-4)
    assert faster.engine.dt == 2e-4 and faster.engine.storage_dt == pytest.approx(2e-3)


@pytest.mark.parametrize("name", ["kernels", "villemonais", "spine_marginal", "boundary",
                                  "transform_coupling"])
def test_shipped_configs_parse(name):
    assert shipped_config(name).experiment == name


# -- serialization ---------------------------------------------------------------

def test_float_format_round_trips():
    rng = np.random.default_rng(1)
    for v in rng.normal(size=1000) * 10.0 ** rng.integers(-300, 300, 1000):
        assert float(fmt(v)) == v
    assert fmt(True) == "true"


def test_csv_round_trip(tmp_path):
    rows = [(1, 0.1, "a"), (2, 1 / 3, "b")]
    write_csv(tmp_path / "t.csv", ["id", "x", "tag"], rows)
    back = read_csv(tmp_path / "t.csv")
    assert list(back[0]) == ["id", "x", "tag"]
    assert float(back[1]["x"]) == 1 / 3


def test_events_round_trip(tmp_path):
    log = GenealogyLog.from_events(3, 1.0, [(0.2, 0, 1), (0.7, 2, 0)])
    write_events(tmp_path / "e.jsonl", log)
    lines = (tmp_path / "e.jsonl").read_text().splitlines()
    assert set(json.loads(lines[0])) >= {"time", "dying", "target", "landing"}
    back = read_events(tmp_path / "e.jsonl", 3, 1.0)
    assert np.array_equal(back.times, log.times) and np.array_equal(back.target, log.target)


# -- runs --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def spine_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("spine")
    return run_experiment(tiny(TINY_SPINE, out))


def test_manifest_lists_outputs(spine_run):
    m = RunManifest.load(spine_run.root)
    assert m.outputs == spine_run.outputs
    assert "spine_samples.csv" in m.outputs and "gates.csv" in m.outputs
    assert len(m.stream_ids) == 3 and m.stream_ids[1] == [1, 1 << 20]
    header = list(read_csv(f"{m.root}/spine_samples.csv")[0])
    assert header[:3] == ["replica_id", "time", "x"]
    assert {"carrier", "coalescence_time"} <= set(header)


def test_single_replica_manifest(tmp_path):
    m = run_experiment(tiny(TINY_SPINE.replace("replicas: 3", "replicas: 1"), tmp_path))
    assert len(m.stream_ids) == 1


def test_rerun_is_byte_identical(spine_run, tmp_path):
    again = run_experiment(tiny(TINY_SPINE, tmp_path))
    assert again.outputs == spine_run.outputs


def test_parallelism_does_not_change_outputs(spine_run, tmp_path):
    par = run_experiment(tiny(TINY_SPINE, tmp_path, parallelism=2))
    assert par.outputs == spine_run.outputs


def test_reuse_skips_identical_run(tmp_path):
    cfg = tiny(TINY_BOUNDARY, tmp_path)
    first = run_experiment(cfg)
    stamp = (tmp_path / "survival.csv").stat().st_mtime_ns
    again = run_experiment(cfg, reuse=True)
    assert again.outputs == first.outputs
    assert (tmp_path / "survival.csv").stat().st_mtime_ns == stamp
    # a tampered output is detected and the run is redone
    (tmp_path / "survival.csv").write_text("junk\n")
    redone = run_experiment(cfg, reuse=True)
    assert redone.outputs == first.outputs


def test_simulate_writes_events(tmp_path):
    m = simulate(tiny(TINY_SPINE, tmp_path))
    assert m.passed
    assert any(name.endswith(".jsonl") for name in m.outputs)


# -- reports -----------------------------------------------------------------------

def test_report_pass_and_fail(spine_run):
    m = RunManifest.load(spine_run.root)
    m.gates = [{"name": "ok", "statistic": 0.01, "threshold": 0.05, "relation": "<",
                "passed": True}]
    assert report(m).endswith("PASS")
    m.gates.append({"name": "too_far", "statistic": 0.2, "threshold": 0.05, "relation": "<",
                    "passed": False})
    text = report(m)
    assert text.splitlines()[-1] == "FAIL: too_far"
    assert any("too_far" in line and "0.2" in line and "0.05" in line
               for line in text.splitlines()[:-1])


def test_report_shows_retention(spine_run):
    assert "retention" in report(spine_run)


def test_report_errors(spine_run, tmp_path):
    m = RunManifest.load(spine_run.root)
    m.gates = []
    with pytest.raises(ValueError):
        report(m)
    with pytest.raises(FileNotFoundError):
        report(tmp_path)
    m = RunManifest.load(spine_run.root)
    m.outputs = {**m.outputs, "gone.csv": "0"}
    with pytest.raises(FileNotFoundError):
        report(m)


# -- command line ------------------------------------------------------------------

def test_cli_runs_and_reports(tmp_path, capsys):
    cfg = tmp_path / "b.yaml"
    cfg.write_text(TINY_BOUNDARY)
    code = main(["boundary", "--config", str(cfg), "--out", str(tmp_path / "run")])
    text = capsys.readouterr().out
    assert code == (0 if text.rstrip().endswith("PASS") else 1)
    assert main(["report", "--out", str(tmp_path / "run")]) == code


def test_cli_environment_defaults(tmp_path, monkeypatch):
    cfg = tmp_path / "b.yaml"
    cfg.write_text(TINY_BOUNDARY)
    monkeypatch.setenv("FVSPINE_SEED", "77")
    monkeypatch.setenv("FVSPINE_OUT", str(tmp_path / "env"))
    main(["boundary", "--config", str(cfg)])
    assert RunManifest.load(tmp_path / "env").seed == 77


def test_cli_errors_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(TINY_BOUNDARY + "foo: 1\n")
    assert main(["boundary", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "foo" in capsys.readouterr().err
    assert main(["report", "--out", str(tmp_path / "nothing")]) == 2
