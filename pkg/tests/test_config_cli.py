import copy
import csv
import json
import math
from pathlib import Path

import pytest

from mcn_codesign.cli import EXIT_BUDGET, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main
from mcn_codesign.config import SCHEMA, ConfigError, config_hash, read_config, resolve

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def load(name):
    return json.loads((CONFIGS / name).read_text())


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(tmp_path, command, cfg, *extra, out="out"):
    path = cfg if isinstance(cfg, str) else write(tmp_path, cfg)
    return main([command, "--config", path, "--out", str(tmp_path / out), *extra])


def test_schema_file_matches():
    assert json.loads((CONFIGS / "problem.schema.json").read_text()) == SCHEMA


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json") if p.name != "problem.schema.json"))
def test_shipped_configs_resolve(name):
    resolve(load(name))


def pointer_of(cfg):
    with pytest.raises(ConfigError) as info:
        resolve(cfg)
    return info.value.pointer


def test_error_pointers():
    base = load("example3_case1.json")
    cfg = copy.deepcopy(base)
    cfg["quantization"]["delta_u"] = -1
    assert pointer_of(cfg) == "/quantization/delta_u"
    cfg = copy.deepcopy(base)
    cfg["networks"]["controllability"]["edges"][3][1] = "ghost"
    assert pointer_of(cfg).startswith("/networks/controllability/edges/3")
    cfg = copy.deepcopy(base)
    del cfg["plant"]["sample_time"]
    assert pointer_of(cfg).startswith("/plant")
    cfg = copy.deepcopy(base)
    cfg["networks"]["controllability"]["weights"] = {"v1->v2": 1.0}
    assert pointer_of(cfg) == "/networks/controllability/weights"


def test_hash_ignores_presentation_fields():
    a = load("example3_case1.json")
    b = copy.deepcopy(a)
    b["horizon"] = 40
    b["name"] = "renamed"
    assert config_hash(resolve(a)) == config_hash(resolve(b))
    b["amplitude"] = 2.0
    assert config_hash(resolve(a)) != config_hash(resolve(b))


# --- commands ---------------------------------------------------------------


def test_analyze_example1(tmp_path):
    assert run(tmp_path, "analyze", load("example1_eta_b.json")) == EXIT_OK
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    net = rep["networks"]["controllability"]
    assert net["tf_num"] == pytest.approx([0.6, 0.4], abs=1e-12)
    assert net["total_delay_s"] == pytest.approx(0.02)


def test_codesign_and_replay(tmp_path):
    cfg = load("example3_case1.json")
    assert run(tmp_path, "codesign", cfg) == EXIT_OK
    out = tmp_path / "out"
    for f in ("report.json", "solution.json", "trace.csv", "plot.svg"):
        assert (out / f).exists()
    first = (out / "trace.csv").read_bytes()
    sol = str(out / "solution.json")
    assert run(tmp_path, "simulate", cfg, "--solution", sol, "--horizon", "12", out="replay") == EXIT_OK
    assert (tmp_path / "replay" / "trace.csv").read_bytes() == first
    # the emitted report carries the config
    rep_cfg = str(out / "report.json")
    assert run(tmp_path, "simulate", rep_cfg, "--solution", sol, "--horizon", "12", out="replay2") == EXIT_OK
    assert (tmp_path / "replay2" / "trace.csv").read_bytes() == first


def test_trace_format(tmp_path):
    cfg = load("example3_case1.json")
    run(tmp_path, "codesign", cfg)
    raw = (tmp_path / "out" / "trace.csv").read_bytes()
    assert b"\r\n" in raw
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0] == ["k", "r", "u", "y", "e"]
    y = [float(r[3]) for r in rows[1:]]
    assert max(abs(v) for v in y) == pytest.approx(7.0, rel=1e-2)
    assert all(float(r[4]) == pytest.approx(float(r[3]) - float(r[1])) for r in rows[1:])


def test_zero_amplitude_trace(tmp_path):
    cfg = load("example3_case1.json")
    cfg["amplitude"] = 0.0
    assert run(tmp_path, "codesign", cfg) == EXIT_OK
    rows = list(csv.reader((tmp_path / "out" / "trace.csv").read_text().splitlines()))[1:]
    assert all(float(v) == 0.0 for r in rows for v in r[1:])


def test_replay_guards(tmp_path):
    cfg = load("example3_case1.json")
    run(tmp_path, "codesign", cfg)
    sol = str(tmp_path / "out" / "solution.json")
    assert run(tmp_path, "simulate", cfg, "--solution", sol, "--horizon", "2", out="r") == EXIT_CONFIG
    other = copy.deepcopy(cfg)
    other["amplitude"] = 3.0
    assert run(tmp_path, "simulate", other, "--solution", sol, out="r") == EXIT_CONFIG
    assert run(tmp_path, "simulate", cfg, out="r") == EXIT_CONFIG


def test_exit_codes(tmp_path):
    cfg = load("example4_codesign.json")
    cfg["bounds"]["overshoot_y"] = 0.0
    assert run(tmp_path, "codesign", cfg) == EXIT_INFEASIBLE
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["status"] == "stage1_infeasible"
    bad = load("example3_case1.json")
    bad["quantization"]["delta_u"] = 0
    assert run(tmp_path, "codesign", bad, out="o2") == EXIT_CONFIG
    search = load("example1_search.json")
    search["networks"]["controllability"]["scheduling"]["search"]["budget"] = 100
    assert run(tmp_path, "schedule-search", search, out="o3") == EXIT_BUDGET
    assert run(tmp_path, "codesign", load("example3_case1.json"), "--rate-sweep", "1:0:1", out="o4") == EXIT_CONFIG


def test_schedule_search_outputs(tmp_path):
    assert run(tmp_path, "schedule-search", load("example4.json")) == EXIT_OK
    out = tmp_path / "out"
    rows = list(csv.DictReader((out / "ranking.csv").read_text().splitlines()))
    assert [r["schedule_id"] for r in rows] == ["a", "c", "b"]
    assert rows[0]["optimal"] == "*"
    assert float(rows[0]["l2"]) == pytest.approx(math.sqrt(3), rel=1e-9)
    rep = json.loads((out / "report.json").read_text())
    assert all(s["non_increasing"] for s in rep["sweep"].values())
    assert (out / "sweep.csv").exists()


def test_read_config_missing(tmp_path):
    with pytest.raises((ConfigError, OSError)):
        read_config(tmp_path / "nope.json")
