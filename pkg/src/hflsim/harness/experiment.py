"""End-to-end runs: schedule, assign, allocate, train, evaluate; plus the
sweep, assignment-comparison and clustering-evaluation protocols."""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import __version__
from ..assigner import AssignmentStrategy, assign_with
from ..cost import CostParams, kb_to_bits
from ..errors import ConfigurationError, HFLError
from ..fl import (
    DataPartition,
    Dataset,
    MLPClassifier,
    evaluate,
    load_idx_dataset,
    make_gaussian_mixture,
    partition_non_iid,
    run_global_iteration,
)
from ..scheduler import (
    ClusterSet,
    ClusteringCost,
    SchedulerState,
    adjusted_rand_index,
    cluster_devices,
    clustering_cost,
    schedule_round,
    weight_trainer,
    write_schedule_csv,
)
from ..topology import ParamRanges, Topology, generate_topology, resample_devices
from .config import ExperimentConfig

ROUND_COLUMNS = ["round", "accuracy", "time", "energy", "objective", "uplink_bytes", "policy", "H"]
SUMMARY_METRICS = ["rounds", "final_accuracy", "total_time", "total_energy", "total_objective", "total_bytes"]


def _fmt(x) -> str:
    # repr of a Python float is locale-independent and round-trips exactly
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv_atomic(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    write_text_atomic(path, buf.getvalue())


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# -- workload -----------------------------------------------------------------


@dataclass
class Workload:
    topology: Topology
    params: CostParams
    partition: DataPartition
    test_set: Dataset
    learner: MLPClassifier
    mini_learner: MLPClassifier
    init: np.ndarray
    seeds: dict


def derive_seeds(seed: int) -> dict:
    """Independent integer seeds for each random stage; none depends on the
    scheduling policy, so policies compare on identical workloads."""
    names = ("data", "partition", "init", "clustering", "scheduler", "test")
    kids = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(k.generate_state(1)[0]) for n, k in zip(names, kids)}


def build_topology(cfg: ExperimentConfig) -> Topology:
    t = cfg["topology"]
    if "path" in t:
        return Topology.load(t["path"])
    ranges = ParamRanges.from_dict(t.get("ranges") or {})
    seed = cfg.seed if t.get("seed") is None else int(t["seed"])
    return generate_topology(int(t["n_devices"]), int(t["n_edges"]), float(t.get("side", 1000.0)), seed=seed, ranges=ranges)


def build_workload(cfg: ExperimentConfig) -> Workload:
    topo = build_topology(cfg)
    params = cfg.cost_params()
    seeds = derive_seeds(cfg.seed)
    d = cfg["data"]
    K = int(d["classes"])
    sizes = np.array([dev.num_samples for dev in topo.devices])
    if d["source"] == "synthetic":
        data_seed = seeds["data"] if d.get("seed") is None else int(d["seed"])
        rho = float(d["rho"])
        per_major = int(np.ceil(topo.n_devices / K)) * sizes.max()
        n_per_class = int(np.ceil(rho * per_major + 1.5 * (1 - rho) * sizes.sum() / max(K - 1, 1))) + 50
        train, means = make_gaussian_mixture(n_per_class, K, int(d["dim"]), data_seed, d["separation"], d["noise"])
        test, _ = make_gaussian_mixture(int(d["test_size"]) // K, K, int(d["dim"]), seeds["test"], noise=d["noise"], means=means)
    else:
        train = load_idx_dataset(d["images"], d["labels"])
        test = load_idx_dataset(d["test_images"], d["test_labels"])
    dim = train.X.shape[1]
    partition = partition_non_iid(train, topo.n_devices, K, float(d["rho"]), sizes, seeds["partition"])
    learner = MLPClassifier(dim, int(cfg["learner"]["hidden"]), K)
    n_mini = min(int(cfg["scheduler"]["mini_features"]), dim)
    mini = MLPClassifier(dim, 0, K, features=np.linspace(0, dim - 1, n_mini).round().astype(int))
    init = learner.init(np.random.default_rng(seeds["init"]))
    return Workload(topo, params, partition, test, learner, mini, init, seeds)


@dataclass
class ClusteringResult:
    clusters: ClusterSet
    ari: float
    cost: ClusteringCost
    learner: str


def cluster_workload(cfg: ExperimentConfig, wl: Workload, mini: bool) -> ClusteringResult:
    """Cluster devices with the mini model (``mini=True``) or the full model."""
    s = cfg["scheduler"]
    learner = wl.mini_learner if mini else wl.learner
    rng = np.random.default_rng(wl.seeds["clustering"])
    start = learner.init(rng) if mini else wl.init
    trainer = weight_trainer(learner, wl.partition, start, int(s["aux_iters"]), float(cfg["learner"]["beta"]))
    clusters = cluster_devices(wl.topology, trainer, int(s["K"]), seed=wl.seeds["clustering"])
    truth = {n: int(c) for n, c in enumerate(wl.partition.majority)}
    size = kb_to_bits(s["mini_model_kb"]) if mini else wl.params.model_size
    cost = clustering_cost(wl.topology, wl.params, size, wl.params.model_size)
    return ClusteringResult(clusters, adjusted_rand_index(clusters, truth), cost, "mini" if mini else "full")


# -- single run ---------------------------------------------------------------


@dataclass
class RoundRow:
    round: int
    accuracy: float
    time: float
    energy: float
    objective: float
    uplink_bytes: float


@dataclass
class RunRecord:
    name: str
    policy: str
    H: int
    strategy: str
    seed: int
    target: float
    rows: list[RoundRow] = field(default_factory=list)
    converged: bool = False
    clustering: dict | None = None
    config_hash: str = ""

    @property
    def rounds(self) -> int:
        return len(self.rows)

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy if self.rows else float("nan")

    @property
    def total_time(self) -> float:
        return float(sum(r.time for r in self.rows))

    @property
    def total_energy(self) -> float:
        return float(sum(r.energy for r in self.rows))

    @property
    def total_objective(self) -> float:
        return float(sum(r.objective for r in self.rows))

    @property
    def total_bytes(self) -> float:
        return float(sum(r.uplink_bytes for r in self.rows))

    def totals(self) -> dict:
        return {k: getattr(self, k) for k in SUMMARY_METRICS} | {"converged": self.converged}

    def csv_rows(self):
        for r in self.rows:
            yield [r.round, r.accuracy, r.time, r.energy, r.objective, r.uplink_bytes, self.policy, self.H]


def uplink_bytes(params: CostParams, H: int, n_edges: int) -> float:
    """Uplink traffic of one global round: each scheduled device uploads Q
    times, each edge server uploads once to the cloud."""
    return (params.edge_iters * H + n_edges) * params.model_size / 8.0


def _load_agent(cfg: ExperimentConfig):
    path = cfg["assignment"].get("agent")
    if path is None:
        raise ConfigurationError("drl assignment needs 'assignment.agent' (a saved agent)")
    from ..d3qn.agent import Agent

    return Agent.load(path)


def run_experiment(cfg: ExperimentConfig, workload: Workload | None = None, clustering: ClusteringResult | None = None) -> RunRecord:
    """Train until the global model reaches the target accuracy or the round
    limit; every stage is seeded from ``cfg.seed``."""
    wl = workload or build_workload(cfg)
    s = cfg["scheduler"]
    policy, H = s["policy"], int(s["H"])
    N = wl.topology.n_devices
    if H > N:
        raise ConfigurationError(f"H={H} exceeds the {N} devices")
    strategy = AssignmentStrategy.parse(cfg["assignment"]["strategy"])
    agent = _load_agent(cfg) if strategy.kind == "drl" else None

    clusters = None
    rec = RunRecord(cfg["name"], policy, H, strategy.label, cfg.seed, float(cfg["target_accuracy"]), config_hash=cfg.digest())
    if policy in ("vkc", "ikc"):
        clustering = clustering or cluster_workload(cfg, wl, mini=(policy == "ikc"))
        clusters = clustering.clusters
        rec.clustering = {"learner": clustering.learner, "ari": clustering.ari} | asdict(clustering.cost)
    state = SchedulerState.create(policy, clusters, H, int(s["h"]), seed=wl.seeds["scheduler"])

    P = wl.params
    beta = float(cfg["learner"]["beta"])
    w = wl.init
    schedules = []
    for i in range(1, int(cfg["max_rounds"]) + 1):
        sched = schedule_round(state, clusters, range(N), i)
        schedules.append(sched)
        out = assign_with(strategy, sched.members, wl.topology, P, agent=agent)
        w = run_global_iteration(w, out.pattern, wl.partition, P.local_iters, P.edge_iters, beta, wl.learner)
        acc = evaluate(w, wl.test_set, wl.learner)
        rep = out.report
        rec.rows.append(RoundRow(i, acc, rep.round_time, rep.round_energy, rep.objective, uplink_bytes(P, len(sched.members), wl.topology.n_edges)))
        if acc >= rec.target:
            rec.converged = True
            break

    out_dir = cfg["output_dir"]
    if out_dir:
        save_run(rec, cfg, Path(out_dir), schedules)
    return rec


def versions() -> dict:
    import numba

    return {"hflsim": __version__, "numpy": np.__version__, "numba": numba.__version__, "python": platform.python_version()}


def manifest(rec: RunRecord, cfg: ExperimentConfig) -> dict:
    return {
        "name": rec.name,
        "config_hash": cfg.digest(),
        "config": cfg.experiment(),
        "seed": cfg.seed,
        "derived_seeds": derive_seeds(cfg.seed),
        "versions": versions(),
        "totals": rec.totals(),
        "clustering": rec.clustering,
    }


def save_run(rec: RunRecord, cfg: ExperimentConfig, out_dir: Path, schedules=()) -> None:
    write_csv_atomic(out_dir / "rounds.csv", ROUND_COLUMNS, rec.csv_rows())
    if schedules:
        tmp = out_dir / ".schedule.csv.tmp"
        out_dir.mkdir(parents=True, exist_ok=True)
        write_schedule_csv(tmp, schedules)
        os.replace(tmp, out_dir / "schedule.csv")
    write_text_atomic(out_dir / "manifest.json", json.dumps(manifest(rec, cfg), indent=2, sort_keys=True) + "\n")


# -- sweep --------------------------------------------------------------------


@dataclass
class SweepRow:
    name: str
    policy: str
    H: int
    strategy: str
    repetitions: int
    failures: int
    converged: int
    mean: dict
    std: dict

    def flat(self) -> list:
        vals = [self.name, self.policy, self.H, self.strategy, self.repetitions, self.failures, self.converged]
        for m in SUMMARY_METRICS:
            vals += [self.mean[m], self.std[m]]
        return vals


SWEEP_COLUMNS = ["name", "policy", "H", "strategy", "repetitions", "failures", "converged"] + [
    f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "std")
]


def sweep(configs: Sequence[ExperimentConfig], repetitions: int = 1, output: str | Path | None = None) -> tuple[list[SweepRow], list[RunRecord]]:
    """Run every config ``repetitions`` times with seed ``base_seed + r``;
    a failed run is counted and the sweep carries on."""
    if repetitions < 1:
        raise ConfigurationError("repetitions must be >= 1")
    table, records = [], []
    for cfg in configs:
        runs, failures = [], 0
        for r in range(repetitions):
            c = cfg.with_(seed=cfg.seed + r, output_dir=None)
            try:
                runs.append(run_experiment(c))
            except HFLError:
                failures += 1
        records.extend(runs)
        s = cfg["scheduler"]
        mean = {m: float(np.mean([getattr(x, m) for x in runs])) if runs else float("nan") for m in SUMMARY_METRICS}
        std = {m: float(np.std([getattr(x, m) for x in runs])) if runs else float("nan") for m in SUMMARY_METRICS}
        table.append(
            SweepRow(cfg["name"], s["policy"], int(s["H"]), AssignmentStrategy.parse(cfg["assignment"]["strategy"]).label,
                     repetitions, failures, sum(x.converged for x in runs), mean, std)
        )
    if output is not None:
        write_csv_atomic(output, SWEEP_COLUMNS, (row.flat() for row in table))
    return table, records


def h_sweep(base: ExperimentConfig, values: Sequence[int]) -> list[ExperimentConfig]:
    """One config per H; K-center policies keep K and set h = H / K."""
    out = []
    for H in values:
        over = {"scheduler.H": int(H), "name": f"{base['name']}-H{H}"}
        if base["scheduler"]["policy"] != "random":
            K = base["scheduler"]["K"]
            if H % K:
                raise ConfigurationError(f"H={H} is not a multiple of K={K}")
            over["scheduler.h"] = H // K
        out.append(base.with_(**over))
    return out


# -- assignment comparison ----------------------------------------------------


@dataclass
class StrategySummary:
    strategy: str
    time: float
    energy: float
    objective: float
    wall_time: float


COMPARE_COLUMNS = ["strategy", "time", "energy", "objective", "wall_time"]


def compare_assignment(
    instances: int,
    strategies: Sequence[str],
    seed: int = 0,
    n_devices: int = 20,
    n_edges: int = 3,
    params: CostParams | None = None,
    agent=None,
    base: Topology | None = None,
) -> tuple[list[StrategySummary], list[tuple[str, int, object]]]:
    """Every strategy assigns the same random instances (fresh device draws
    over fixed edge servers); returns per-strategy means and per-instance
    outcomes."""
    params = params or CostParams()
    base = base or generate_topology(n_devices, n_edges, seed=seed)
    rng = np.random.default_rng(seed)
    topos = [resample_devices(base, base.n_devices, rng) for _ in range(instances)]
    parsed = [(name, AssignmentStrategy.parse(name)) for name in strategies]
    outcomes, summary = [], []
    for name, strat in parsed:
        rows = []
        for i, topo in enumerate(topos):
            out = assign_with(strat, range(topo.n_devices), topo, params, agent=agent)
            rows.append(out)
            outcomes.append((name, i, out))
        summary.append(
            StrategySummary(
                name,
                float(np.mean([o.report.round_time for o in rows])),
                float(np.mean([o.report.round_energy for o in rows])),
                float(np.mean([o.objective for o in rows])),
                float(np.mean([o.wall_time for o in rows])),
            )
        )
    return summary, outcomes


def cluster_eval(cfg: ExperimentConfig) -> dict:
    """ARI and clustering-phase cost for the mini model and the full model."""
    wl = build_workload(cfg)
    out = {}
    for mini in (True, False):
        res = cluster_workload(cfg, wl, mini)
        out[res.learner] = {"ari": res.ari} | asdict(res.cost)
    return out


def timed(fn, *args, **kw):
    started = time.perf_counter()
    res = fn(*args, **kw)
    return res, time.perf_counter() - started
