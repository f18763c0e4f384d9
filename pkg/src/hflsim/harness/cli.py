"""Command-line entry point: ``hflsim <command> ...``.

Exit codes: 0 success, 1 any other simulator error, 2 contract violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import ContractViolation, HFLError
from .config import ExperimentConfig
from .experiment import (
    COMPARE_COLUMNS,
    ROUND_COLUMNS,
    cluster_eval,
    compare_assignment,
    h_sweep,
    run_experiment,
    sweep,
    write_csv_atomic,
    write_text_atomic,
)

log = logging.getLogger("hflsim")


def _csv_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict({})
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def cmd_topo_gen(args) -> int:
    from ..topology import ParamRanges, generate_topology

    ranges = ParamRanges.from_dict(json.loads(Path(args.ranges).read_text())) if args.ranges else None
    topo = generate_topology(args.devices, args.edges, args.side, seed=args.seed, ranges=ranges)
    topo.save(args.out)
    print(f"wrote {args.out}: {topo.n_devices} devices, {topo.n_edges} edge servers")
    return 0


def cmd_train_agent(args) -> int:
    from ..d3qn.train import TrainConfig, evaluate_agent, train_agent, write_curve_csv
    from ..topology import Topology

    opts = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("episodes", "seed", "n_edges", "horizon"):
        if getattr(args, key) is not None:
            opts[key] = getattr(args, key)
    cfg = TrainConfig.from_dict(opts)
    base = Topology.load(args.topology) if args.topology else None
    res = train_agent(cfg, base=base, progress_every=args.progress)
    res.agent.save(args.out)
    print(f"trained {cfg.episodes} episodes in {res.wall_time:.1f} s; agent saved to {args.out}")
    if args.curve:
        write_curve_csv(args.curve, res.curve)
    if args.eval_instances:
        rep = evaluate_agent(res.agent, res.base, instances=args.eval_instances)
        print(json.dumps(rep.as_dict(), indent=2))
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.out:
        cfg = cfg.with_(output_dir=str(args.out))
    rec = run_experiment(cfg)
    status = "reached" if rec.converged else "did not reach"
    print(f"{rec.name}: {status} accuracy {rec.target} after {rec.rounds} rounds")
    print(json.dumps(rec.totals(), indent=2))
    if not args.out:
        w = sys.stdout
        w.write(",".join(ROUND_COLUMNS) + "\n")
        for row in rec.csv_rows():
            w.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in row) + "\n")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    configs = h_sweep(cfg, [int(h) for h in _csv_list(args.H)]) if args.H else [cfg]
    rows, _ = sweep(configs, args.repetitions, output=args.out)
    for r in rows:
        print(f"H={r.H:4d} converged {r.converged}/{r.repetitions} rounds {r.mean['rounds']:.1f} "
              f"E+lamT {r.mean['total_objective']:.4g} (std {r.std['total_objective']:.3g})")
    if args.out:
        print(f"wrote {args.out}")
    return 0


def cmd_compare_assign(args) -> int:
    from ..cost import CostParams
    from ..assigner import write_outcomes_csv

    agent = None
    strategies = _csv_list(args.strategies)
    if "drl" in strategies:
        if not args.agent:
            raise ContractViolation("strategy 'drl' needs --agent")
        from ..d3qn.agent import Agent

        agent = Agent.load(args.agent)
    params = CostParams.from_dict(json.loads(Path(args.cost).read_text())) if args.cost else CostParams()
    summary, outcomes = compare_assignment(args.instances, strategies, args.seed, args.devices, args.edges, params, agent)
    for s in summary:
        print(f"{s.strategy:>12s}  T {s.time:10.4g}  E {s.energy:10.4g}  obj {s.objective:10.4g}  wall {s.wall_time * 1e3:9.3f} ms")
    if args.out:
        write_csv_atomic(args.out, COMPARE_COLUMNS, ([s.strategy, s.time, s.energy, s.objective, s.wall_time] for s in summary))
    if args.outcomes:
        write_outcomes_csv(args.outcomes, outcomes)
    return 0


def cmd_cluster_eval(args) -> int:
    cfg = _load_config(args)
    res = cluster_eval(cfg)
    text = json.dumps(res, indent=2)
    print(text)
    if args.out:
        write_text_atomic(args.out, text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hflsim", description="Hierarchical federated learning simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    topo = sub.add_parser("topo", help="topology tools")
    tsub = topo.add_subparsers(dest="topo_command", required=True)
    gen = tsub.add_parser("gen", help="generate a random topology")
    gen.add_argument("--devices", type=int, required=True)
    gen.add_argument("--edges", type=int, required=True)
    gen.add_argument("--side", type=float, default=1000.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--ranges", help="JSON file with parameter ranges")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_topo_gen)

    tr = sub.add_parser("train-agent", help="train the D3QN assignment agent")
    tr.add_argument("--config", help="JSON file with training options")
    tr.add_argument("--topology", help="base topology (edge servers are kept, devices resampled)")
    tr.add_argument("--episodes", type=int)
    tr.add_argument("--horizon", type=int)
    tr.add_argument("--n-edges", dest="n_edges", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out", required=True)
    tr.add_argument("--curve", help="write the training curve CSV here")
    tr.add_argument("--eval-instances", type=int, default=0)
    tr.add_argument("--progress", type=int, default=50, help="log every N episodes (with -v)")
    tr.set_defaults(func=cmd_train_agent)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="repeat an experiment over H values")
    sw.add_argument("--config")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--H", help="comma-separated H values")
    sw.add_argument("--repetitions", type=int, default=5)
    sw.add_argument("--out", help="summary CSV")
    sw.set_defaults(func=cmd_sweep)

    ca = sub.add_parser("compare-assign", help="compare assignment strategies on random instances")
    ca.add_argument("--instances", type=int, default=100)
    ca.add_argument("--strategies", default="geographic,hfel-100,hfel-300")
    ca.add_argument("--devices", type=int, default=20)
    ca.add_argument("--edges", type=int, default=3)
    ca.add_argument("--seed", type=int, default=0)
    ca.add_argument("--agent")
    ca.add_argument("--cost", help="JSON file with cost parameters")
    ca.add_argument("--out", help="summary CSV")
    ca.add_argument("--outcomes", help="per-instance CSV")
    ca.set_defaults(func=cmd_compare_assign)

    ce = sub.add_parser("cluster-eval", help="clustering accuracy and cost, mini vs full model")
    ce.add_argument("--config")
    ce.add_argument("--seed", type=int)
    ce.add_argument("--out")
    ce.set_defaults(func=cmd_cluster_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 2
    except HFLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
