import json
import os
from pathlib import Path

import pytest

from pathway_miner import cli
from pathway_miner.config import ConfigError, load_config

STAGES = ["gen", "stability", "cluster", "detect", "mine", "assert", "report"]
RULES = Path(__file__).resolve().parents[1] / "configs" / "a1_a3.rules"

TINY = {
    "scenario": {"ntime": 50, "nlat": 18, "nlon": 36, "members": 2, "t_event": 10},
    "k": {"AEROD_v": 3, "FLNT": 3, "T050": 3},
    "sweep": {"k_range": [2, 4], "sample": 2000},
    "rules": str(RULES),
}


def write_config(tmp_path, cfg=None, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(TINY if cfg is None else cfg))
    return path


def run_all(config, out, *extra):
    for stage in STAGES:
        code = cli.main([stage, "--config", str(config), "--out", str(out), *extra])
        assert code == 0, stage


def snapshot(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "run.log"
    }


@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    config = write_config(tmp)
    run_all(config, tmp / "out")
    return config, tmp / "out"


def test_layout(pipeline_out):
    _, out = pipeline_out
    for rel in [
        "data/forced_00/manifest.json",
        "data/baseline_01/T050.bin",
        "stability/stability.csv",
        "stability/recommended.json",
        "clusters/T050.json",
        "clusters/grid.json",
        "detect/significance_T050.csv",
        "detect/timeline_T050.svg",
        "mine/index.jsonl",
        "mine/summary.csv",
        "assert/prevalence.csv",
        "assert/bitmaps/forced_00.bin",
        "assert/prevalence.svg",
        "assert/durations.csv",
        "report/report.json",
        "report/report.md",
        "run.log",
    ]:
        assert (out / rel).is_file(), rel
    assert len([p for p in (out / "data").iterdir() if p.is_dir()]) == 4


def test_timestamps_only_in_run_log(pipeline_out):
    _, out = pipeline_out
    assert "exit=0" in (out / "run.log").read_text()
    for name, data in snapshot(out).items():
        if name.endswith((".json", ".csv", ".md", ".svg")):
            assert b"2026-" not in data and b"T00:" not in data, name


def test_rerun_is_byte_identical_at_any_thread_count(pipeline_out, tmp_path):
    config, out = pipeline_out
    run_all(config, tmp_path / "again", "--threads", "3")
    assert snapshot(tmp_path / "again") == snapshot(out)


def test_zero_forcing_gen_arms_are_byte_equal(tmp_path):
    cfg = json.loads(json.dumps(TINY))
    cfg["scenario"].update(gain_a=0, gain_b=0, gain_c=0)
    assert cli.main(["gen", "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 0
    for i in range(2):
        for name in ("AEROD_v.bin", "FLNT.bin", "T050.bin"):
            f = (tmp_path / "o" / "data" / f"forced_{i:02d}" / name).read_bytes()
            b = (tmp_path / "o" / "data" / f"baseline_{i:02d}" / name).read_bytes()
            assert f == b


def test_datasets_config_reads_generated_data(pipeline_out, tmp_path):
    _, out = pipeline_out
    data = out / "data"
    cfg = {k: v for k, v in TINY.items() if k != "scenario"}
    cfg["datasets"] = {
        "forced": [str(data / f"forced_{i:02d}") for i in range(2)],
        "baseline": [str(data / f"baseline_{i:02d}") for i in range(2)],
    }
    config = write_config(tmp_path, cfg)
    assert cli.main(["cluster", "--config", str(config), "--out", str(tmp_path / "o")]) == 0
    for v in ("AEROD_v", "FLNT", "T050"):
        a = (tmp_path / "o" / "clusters" / f"{v}_labels.bin").read_bytes()
        assert a == (out / "clusters" / f"{v}_labels.bin").read_bytes()


def test_n_max_one_mines_unigrams(pipeline_out, tmp_path):
    config, out = pipeline_out
    o = tmp_path / "o"
    (o / "clusters").mkdir(parents=True)
    for p in (out / "clusters").iterdir():
        (o / "clusters" / p.name).write_bytes(p.read_bytes())
    assert cli.main(["mine", "--config", str(config), "--out", str(o), "--set", "n_max=1"]) == 0
    for line in (o / "mine" / "index.jsonl").read_text().splitlines():
        assert len(json.loads(line)["symbols"]) == 1


def test_config_error_exit_code(tmp_path, capsys):
    bad = write_config(tmp_path, {**TINY, "colour": "red"})
    assert cli.main(["cluster", "--config", str(bad)]) == 2
    assert "colour" in capsys.readouterr().err
    assert cli.main(["cluster", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.main(["stability", "--config", str(write_config(tmp_path)), "--set", "sweep.k_range=[]"]) == 2


def test_malformed_rules_exit_code(pipeline_out, tmp_path, capsys):
    config, out = pipeline_out
    rules = tmp_path / "bad.rules"
    rules.write_text("AEROD_v: nonzero;\nFLNT noninc\n")
    code = cli.main(["assert", "--config", str(config), "--out", str(out), "--set", f"rules={rules}"])
    assert code == 2
    assert "bad.rules:2:6" in capsys.readouterr().err


def test_missing_artifacts_is_data_error(tmp_path, capsys):
    code = cli.main(["detect", "--config", str(write_config(tmp_path)), "--out", str(tmp_path / "empty")])
    assert code == 3
    assert "pathway-miner cluster" in capsys.readouterr().err


def test_k_larger_than_points_is_data_error(tmp_path):
    cfg = json.loads(json.dumps(TINY))
    cfg["scenario"].update(ntime=2, t_event=0, members=1, nlat=6, nlon=6)
    cfg["k"]["T050"] = 50
    assert cli.main(["cluster", "--config", str(write_config(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 3


def test_seed_env_override(tmp_path):
    config = write_config(tmp_path)
    assert load_config(config, env={"PATHWAY_MINER_SEED": "17"}).seed == 17
    assert load_config(config, ["seed=4"], env={}).seed == 4
    with pytest.raises(ConfigError):
        load_config(config, env={"PATHWAY_MINER_SEED": "x"})


def test_set_override_nested(tmp_path):
    cfg = load_config(write_config(tmp_path), ["scenario.members=3", "k.T050=6", "alpha=0.01"], env={})
    assert cfg.scenario["members"] == 3 and cfg.k["T050"] == 6 and cfg.alpha == 0.01
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path), ["alpha"], env={})


@pytest.mark.parametrize(
    "patch",
    [
        {"datasets": {"forced": ["a"], "baseline": ["b"]}},  # both sources
        {"variables": ["AEROD_v", "PRECT"]},
        {"scenario": {"seed": 3}},
        {"n_min": 3, "n_max": 2},
        {"signature": "median"},
        {"missing_policy": "drop"},
    ],
)
def test_invalid_configs(tmp_path, patch):
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, {**TINY, **patch}), env={})


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    env = {**os.environ, "PATHWAY_MINER_SEED": "1"}
    res = subprocess.run([sys.executable, "-m", "pathway_miner", "--version"], capture_output=True, text=True, env=env)
    assert res.returncode == 0 and res.stdout.strip()
