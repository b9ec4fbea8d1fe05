from __future__ import annotations

import json
import pytest

from agentserve.errors import ConfigError
from agentserve.harness import (
    ExperimentConfig,
    resummarize,
    run_experiment,
    summarize_request_rows,
)
from agentserve.model import ModelConfig


def small_tot_config(**kw) -> ExperimentConfig:
    defaults = dict(
        model=ModelConfig(seed=7, vocab_size=256, concentration=2.5),
        workload="tot_resample",
        temperatures=(0.6,),
        policies=("none", "step"),
        seeds=(1,),
        n_instances=3,
        output_tokens=40,
        branching=3,
        beam=1,
        max_depth=2,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def small_r3a_config(**kw) -> ExperimentConfig:
    defaults = dict(
        model=ModelConfig(seed=7, vocab_size=256, concentration=2.5),
        workload="r3a_workflow",
        temperatures=(0.6,),
        evictions=("lru", "agent"),
        seeds=(1,),
        rounds=4,
        capacity_tokens=6000,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


# -- config validation -------------------------------------------------------


def test_empty_temperature_grid_rejected():
    with pytest.raises(ConfigError, match="temperature"):
        small_tot_config(temperatures=())


def test_unknown_policy_rejected():
    with pytest.raises(ConfigError):
        small_tot_config(policies=("wishful",))


def test_unknown_workload_rejected():
    with pytest.raises(ConfigError):
        small_tot_config(workload="imaginary")


def test_capacity_must_exceed_longest_request():
    with pytest.raises(ConfigError, match="capacity"):
        small_tot_config(tot_capacity_tokens=100)


def test_config_roundtrip_from_json(tmp_path):
    doc = {
        "model": {"seed": 3, "vocab_size": 128},
        "workload": "tot_resample",
        "temperatures": [0.5, 0.9],
        "policies": ["step"],
        "seeds": [4, 5],
        "n_instances": 2,
        "output_tokens": 30,
        "hotspot": {"decay": 0.002, "threshold": 0.5},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    config = ExperimentConfig.from_json(path)
    assert config.model.vocab_size == 128
    assert config.temperatures == (0.5, 0.9)
    assert config.hotspot.decay == 0.002


def test_config_requires_model_seed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {}}))
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig.from_json(path)


# -- experiment runs -----------------------------------------------------------


def test_tot_experiment_rows_and_summary(tmp_path):
    report = run_experiment(small_tot_config())
    assert not report.summary["errors"]
    cells = report.summary["cells"]
    assert len(cells) == 2  # none + step
    per_cell = 3 * 6  # 3 instances x 6 expansion calls
    for cell in cells:
        assert cell["n_requests"] == per_cell
    none_cell = next(c for c in cells if c["policy"] == "none")
    step_cell = next(c for c in cells if c["policy"] == "step")
    assert none_cell["n_revisits"] == 0
    assert step_cell["n_revisits"] == 3 * 4
    report.write(tmp_path)
    for name in ("requests.csv", "rounds.csv", "scores.csv", "timings.csv", "summary.json"):
        assert (tmp_path / name).exists()


def test_r3a_experiment_round_rows(tmp_path):
    report = run_experiment(small_r3a_config())
    assert not report.summary["errors"]
    assert len(report.round_rows) == 2 * 4  # two evictions x four rounds
    assert len(report.score_rows) == 2 * 4 * 5  # five agents per round
    cells = report.summary["cells"]
    assert {c["eviction"] for c in cells} == {"lru", "agent"}
    for cell in cells:
        assert cell["hotspot_hit_rate"] is not None
        assert cell["evicted_tokens"] >= 0


def test_report_rows_byte_identical_across_runs(tmp_path):
    config = small_tot_config()
    run_experiment(config).write(tmp_path / "a")
    run_experiment(config).write(tmp_path / "b")
    for name in ("requests.csv", "rounds.csv", "scores.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_summary_matches_recomputation_from_rows(tmp_path):
    report = run_experiment(small_tot_config())
    report.write(tmp_path)
    recomputed = resummarize(tmp_path)
    original = {
        (c["policy"], str(c["temperature"]), str(c["seed"])): c for c in report.summary["cells"]
    }
    for cell in recomputed["cells"]:
        key = (cell["policy"], str(cell["temperature"]), str(cell["seed"]))
        ref = original[key]
        for field in ("n_requests", "n_revisits", "n_excluded_full_hits"):
            assert cell[field] == ref[field]
        for field in ("mean_hit_ratio", "mean_speedup", "p50_hit_ratio"):
            if ref[field] is None:
                assert cell[field] is None
            else:
                assert abs(cell[field] - ref[field]) < 1e-9


def test_partial_failure_recorded_and_run_continues(monkeypatch, tmp_path):
    import agentserve.harness as H

    config = small_tot_config(policies=("none", "step"))
    real = H.run_tot_cell

    def flaky(cfg, policy, temperature, seed):
        if policy == "none":
            raise RuntimeError("synthetic cell failure")
        return real(cfg, policy, temperature, seed)

    monkeypatch.setattr(H, "run_tot_cell", flaky)
    report = H.run_experiment(config)
    assert len(report.summary["errors"]) == 1
    assert "synthetic cell failure" in report.summary["errors"][0]["error"]
    assert len(report.summary["cells"]) == 1  # the surviving cell


def test_speedup_definition_in_rows():
    report = run_experiment(small_tot_config(policies=("none",)))
    for row in report.request_rows:
        total = int(row["total_len"])
        passes = int(row["prefill_passes"]) + int(row["decode_passes"])
        assert passes == total  # baseline: one prefill + (L-1) decodes
        assert abs(float(row["speedup"]) - 1.0) < 1e-9


def test_summarize_empty_rows():
    s = summarize_request_rows([])
    assert s["n_requests"] == 0
    assert s["mean_hit_ratio"] is None
