import csv
import json

import numpy as np
import pytest

from hflsim.cost import CostParams
from hflsim.errors import ConfigurationError
from hflsim.harness.cli import main
from hflsim.harness.config import ExperimentConfig
from hflsim.harness.experiment import (
    ROUND_COLUMNS,
    SWEEP_COLUMNS,
    compare_assignment,
    h_sweep,
    run_experiment,
    sweep,
    uplink_bytes,
)

SMALL = {
    "topology": {"n_devices": 12, "n_edges": 2},
    "scheduler": {"policy": "ikc", "H": 6, "h": 2, "K": 3},
    "data": {"classes": 3, "dim": 6, "test_size": 300, "separation": 1.0},
    "max_rounds": 4,
    "target_accuracy": 0.99,
}


def small(**over):
    return ExperimentConfig.from_dict(SMALL).with_(**over)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"scheduler": {"policy": "vkc", "H": 7, "h": 1, "K": 10}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"target_accuracy": 1.5})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"scheduler": {"policy": "roundrobin"}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"topology": {"n_devices": 5}, "scheduler": {"policy": "random", "H": 6}})


def test_config_load_and_digest(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(SMALL))
    a = ExperimentConfig.load(path)
    assert a.digest() == small().digest()
    assert a.with_(seed=1).digest() != a.digest()


def test_zero_target_stops_after_one_round():
    rec = run_experiment(small(target_accuracy=0.0))
    assert rec.rounds == 1 and rec.converged


def test_nonconvergence_flagged():
    rec = run_experiment(small(max_rounds=2))
    assert rec.rounds == 2 and not rec.converged
    assert np.isfinite(rec.total_objective)


def test_totals_are_row_sums():
    rec = run_experiment(small())
    P = CostParams()
    assert rec.total_time == pytest.approx(sum(r.time for r in rec.rows))
    assert rec.total_energy == pytest.approx(sum(r.energy for r in rec.rows))
    assert rec.total_objective == pytest.approx(rec.total_energy + P.lam * rec.total_time)
    for r in rec.rows:
        assert r.uplink_bytes == (P.edge_iters * 6 + 2) * P.model_size / 8
        assert r.objective == pytest.approx(r.energy + P.lam * r.time)


def test_uplink_bytes_linear_in_H():
    P = CostParams()
    vals = [uplink_bytes(P, H, 3) for H in range(1, 8)]
    assert np.allclose(np.diff(vals), P.edge_iters * P.model_size / 8)


def test_run_outputs_byte_identical(tmp_path):
    for d in ("a", "b"):
        run_experiment(small(output_dir=str(tmp_path / d)))
    for name in ("rounds.csv", "schedule.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.reader(open(tmp_path / "a" / "rounds.csv")))
    assert rows[0] == ROUND_COLUMNS
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config_hash"] == small().digest()
    assert set(man["versions"]) >= {"numpy", "numba", "python"}
    assert man["clustering"]["learner"] == "mini"


def test_policies_share_workload():
    # identical initial model and first-round accuracy input for every policy
    recs = {p: run_experiment(small(**{"scheduler.policy": p, "max_rounds": 1})) for p in ("random", "vkc", "ikc")}
    assert len({r.config_hash for r in recs.values()}) == 3
    from hflsim.harness.experiment import build_workload

    a = build_workload(small(**{"scheduler.policy": "random"}))
    b = build_workload(small(**{"scheduler.policy": "vkc"}))
    assert np.array_equal(a.init, b.init)
    assert all(np.array_equal(x.X, y.X) for x, y in zip(a.partition.datasets, b.partition.datasets))


def test_full_participation():
    rec = run_experiment(small(**{"scheduler.policy": "random", "scheduler.H": 12}, max_rounds=2))
    assert rec.H == 12
    assert all(r.uplink_bytes == uplink_bytes(CostParams(), 12, 2) for r in rec.rows)


def test_sweep_single_run_zero_std(tmp_path):
    cfg = small(max_rounds=2)
    rows, recs = sweep([cfg], 1, output=tmp_path / "s.csv")
    (row,) = rows
    assert row.mean["total_objective"] == recs[0].total_objective
    assert all(v == 0.0 for v in row.std.values())
    lines = list(csv.reader(open(tmp_path / "s.csv")))
    assert lines[0] == SWEEP_COLUMNS and len(lines) == 2


def test_sweep_seed_derivation():
    cfg = small(max_rounds=1)
    _, recs = sweep([cfg], 2)
    assert [r.seed for r in recs] == [0, 1]


def test_h_sweep_configs():
    cfgs = h_sweep(small(), [3, 6, 12])
    assert [c["scheduler"]["h"] for c in cfgs] == [1, 2, 4]
    with pytest.raises(ConfigurationError):
        h_sweep(small(), [4])


def test_compare_assignment_exhaustive_is_minimum():
    summary, outs = compare_assignment(4, ["geographic", "hfel-50", "exhaustive"], seed=3, n_devices=6, n_edges=2)
    by = {}
    for name, i, o in outs:
        by.setdefault(i, {})[name] = o.objective
    for vals in by.values():
        assert vals["exhaustive"] <= min(vals.values()) * (1 + 1e-12)
    again, _ = compare_assignment(4, ["geographic", "hfel-50", "exhaustive"], seed=3, n_devices=6, n_edges=2)
    assert [(s.strategy, s.objective) for s in summary] == [(s.strategy, s.objective) for s in again]


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps(SMALL | {"max_rounds": 1}))
    assert main(["run", "--config", str(cfgp), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "rounds.csv").exists()
    assert main(["topo", "gen", "--devices", "5", "--edges", "2", "--out", str(tmp_path / "t.json")]) == 0
    # drl without an agent is a contract violation
    assert main(["compare-assign", "--instances", "1", "--strategies", "drl"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scheduler": {"policy": "vkc", "H": 7}}))
    assert main(["run", "--config", str(bad)]) == 1


def test_cli_compare_and_cluster_eval(tmp_path):
    out = tmp_path / "cmp.csv"
    assert main(["compare-assign", "--instances", "2", "--devices", "5", "--edges", "2", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["strategy", "time", "energy", "objective", "wall_time"]
    cfgp = tmp_path / "c.json"
    cfgp.write_text(json.dumps(SMALL))
    assert main(["cluster-eval", "--config", str(cfgp), "--out", str(tmp_path / "ce.json")]) == 0
    res = json.loads((tmp_path / "ce.json").read_text())
    assert res["full"]["bytes"] > res["mini"]["bytes"]
