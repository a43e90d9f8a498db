import json

import numpy as np
import pytest

from cadsim.errors import ConfigurationError, DomainError
from cadsim.experiments import (
    ExperimentConfig,
    apply_axis,
    compute_aer,
    config_from_dict,
    config_to_dict,
    desk_sourced,
    desk_unsourced,
    fingerprint,
    load_record,
    resolve_config,
    run_sweep,
    run_trial_sourced,
    save_record,
)
from cadsim.network import ActivityPattern, TopologyConfig
from cadsim.seeding import spawn_seed
from cadsim.solver import SolverConfig


def tiny_sourced(**overrides):
    base = ExperimentConfig(
        mode="sourced",
        topology=TopologyConfig(
            num_aps=3, num_devices=30, ap_spacing_km=0.5, coverage_radius_km=0.8,
            cooperation_radius_km=1.1,
        ),
        solver=SolverConfig(max_iters=15, epsilon=10.0, rho=0.05),
        signature_length=16,
        antennas=8,
        snr_db=10.0,
        active_count=4,
        axis="L",
        grid=(16,),
        trials=2,
        master_seed=11,
    )
    return ExperimentConfig(**{**base.__dict__, **overrides})


def pattern(bits):
    return ActivityPattern(indicators=np.array(bits, dtype=np.int8))


def test_compute_aer_cases():
    truth = pattern([1, 1, 0, 0, 0])
    assert compute_aer(truth, pattern([1, 1, 0, 0, 0])) == 0.0
    assert compute_aer(truth, pattern([0, 0, 1, 1, 1])) == pytest.approx(2.0)
    # one miss of two actives, one false alarm of three inactives
    assert compute_aer(truth, pattern([1, 0, 1, 0, 0])) == pytest.approx(0.5 + 1 / 3)
    with pytest.raises(DomainError):
        compute_aer(truth, pattern([1, 0]))


def test_compute_aer_matches_counting_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        t = rng.integers(0, 2, 12).astype(np.int8)
        e = rng.integers(0, 2, 12).astype(np.int8)
        miss = sum(1 for a, b in zip(t, e) if a == 1 and b == 0)
        false = sum(1 for a, b in zip(t, e) if a == 0 and b == 1)
        expected = (miss / t.sum() if t.sum() else 0.0) + (
            false / (12 - t.sum()) if t.sum() < 12 else 0.0
        )
        assert compute_aer(pattern(t), pattern(e)) == pytest.approx(expected)


def test_compute_aer_degenerate_denominators():
    all_active = pattern([1, 1, 1])
    assert compute_aer(all_active, pattern([0, 0, 0])) == pytest.approx(1.0)
    all_idle = pattern([0, 0, 0])
    assert compute_aer(all_idle, pattern([1, 0, 0])) == pytest.approx(1 / 3)


def test_apply_axis_variants():
    cfg = tiny_sourced()
    assert apply_axis(cfg, 32).signature_length == 32
    cfg_m = ExperimentConfig(**{**cfg.__dict__, "axis": "M"})
    assert apply_axis(cfg_m, 24).antennas == 24
    cfg_snr = ExperimentConfig(**{**cfg.__dict__, "axis": "SNR"})
    assert apply_axis(cfg_snr, 6.0).snr_db == 6.0
    cfg_deg = ExperimentConfig(**{**cfg.__dict__, "axis": "cooperation-degree"})
    assert apply_axis(cfg_deg, 2).topology.neighbor_degree == 2
    cfg_act = ExperimentConfig(**{**cfg.__dict__, "axis": "activity-prob"})
    point = apply_axis(cfg_act, 0.2)
    assert point.activity_prob == 0.2 and point.active_count is None


def test_config_roundtrip_and_fingerprint():
    for cfg in (tiny_sourced(), desk_sourced(), desk_unsourced()):
        data = config_to_dict(cfg)
        back = config_from_dict(json.loads(json.dumps(data)))
        assert back == cfg
        assert fingerprint(back) == fingerprint(cfg)
    a = tiny_sourced()
    b = ExperimentConfig(**{**a.__dict__, "master_seed": 12})
    assert fingerprint(a) != fingerprint(b)
    # reordered dict keys hash identically
    data = config_to_dict(a)
    shuffled = dict(reversed(list(data.items())))
    assert fingerprint(config_from_dict(shuffled)) == fingerprint(a)


def test_config_validation_errors():
    with pytest.raises(ConfigurationError):
        tiny_sourced(mode="bogus").validate()
    with pytest.raises(ConfigurationError):
        tiny_sourced(grid=()).validate()
    with pytest.raises(ConfigurationError):
        tiny_sourced(trials=0).validate()
    with pytest.raises(ConfigurationError):
        tiny_sourced(axis="Q").validate()
    with pytest.raises(ConfigurationError):
        config_from_dict({"mode": "sourced"})
    with pytest.raises(ConfigurationError):
        cfg = config_to_dict(tiny_sourced())
        cfg["unknown_knob"] = 1
        config_from_dict(cfg)


def test_run_trial_sourced_outputs():
    result = run_trial_sourced(tiny_sourced(), spawn_seed(3, "trial", 0))
    assert 0.0 <= result.metric <= 2.0
    assert result.grad_evals == 15 * 3  # p_bar = 1: every AP every iteration
    assert result.messages == 15 * 6  # complete triangle, both directions
    assert not result.aborted


def test_run_sweep_deterministic_and_aggregated():
    cfg = tiny_sourced(trials=3, grid=(12, 16))
    rec1 = run_sweep(cfg)
    rec2 = run_sweep(cfg)
    assert rec1.to_json_bytes() == rec2.to_json_bytes()
    for point in rec1.points:
        per_trial = [row["metric"] for row in point["per_trial"]]
        assert point["metric_mean"] == pytest.approx(np.mean(per_trial))
        stderr = np.std(per_trial, ddof=1) / np.sqrt(len(per_trial))
        assert point["metric_stderr"] == pytest.approx(stderr)
        assert point["aborts"] == 0


def test_run_sweep_pairs_seeds_across_points():
    cfg = tiny_sourced(trials=2, grid=(12, 20))
    rec = run_sweep(cfg)
    seeds_by_point = [[row["seed"] for row in p["per_trial"]] for p in rec.points]
    assert seeds_by_point[0] == seeds_by_point[1]


def test_record_save_load_csv_roundtrip(tmp_path):
    cfg = tiny_sourced(trials=2)
    rec = run_sweep(cfg)
    path = tmp_path / "record.json"
    save_record(rec, str(path))
    loaded = load_record(str(path))
    assert loaded.to_json_bytes() == rec.to_json_bytes()
    csv_text = rec.to_csv()
    lines = csv_text.strip().splitlines()
    assert lines[0] == "axis,mean,stderr,trials,aborts"
    value, mean, stderr, trials, aborts = lines[1].split(",")
    assert float(mean) == rec.points[0]["metric_mean"]  # repr roundtrips exactly
    assert float(stderr) == rec.points[0]["metric_stderr"]
    assert int(trials) == 2 and int(aborts) == 0


def test_resolve_config_presets_and_files(tmp_path):
    assert resolve_config("desk_sourced") == desk_sourced()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config_to_dict(tiny_sourced())))
    assert resolve_config(str(path)) == tiny_sourced()
    with pytest.raises(ConfigurationError):
        resolve_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  broken\n}")
    with pytest.raises(ConfigurationError) as err:
        resolve_config(str(bad))
    assert ":2:" in str(err.value)  # line-anchored message


def test_unsourced_sweep_smoke():
    cfg = desk_unsourced()
    small = ExperimentConfig(**{
        **cfg.__dict__,
        "solver": SolverConfig(max_iters=25, epsilon=10.0, rho=0.05),
        "antennas": 16,
        "trials": 1,
        "grid": (16,),
    })
    rec = run_sweep(small)
    assert rec.mode == "unsourced"
    assert 0.0 <= rec.points[0]["metric_mean"] <= 2.0
