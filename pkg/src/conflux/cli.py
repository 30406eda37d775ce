"""Command-line front end.

Exit codes: 0 on success, 1 for usage or parse errors, 2 when inputs parse
but fail domain validation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .adversary import AttackPlan, double_spend_experiment
from .config import ConfigParseError, load_attack_plan, load_sim_config
from .confirm import RiskParams, confirm_decision, sibling_kickout_bound
from .dagfile import DagFileError, load_dag, write_dag
from .errors import ConfluxError
from .ledger import derive_tx_order
from .phantom import AttackSchedule, attack_success_probability, build_attack_dag, run_liveness_attack
from .report import (
    attack_outcomes_csv,
    attack_summary,
    config_from_header,
    dumps,
    header,
    sim_block_csv,
    sim_summary,
)
from .simnet import Simulation

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# -- order ------------------------------------------------------------------


def cmd_order(args: argparse.Namespace) -> int:
    dag = load_dag(args.dag_file)
    state = dag.state
    order = state.total_order()
    verdicts, ledger = derive_tx_order(order, state)
    partition = state.epochs()
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["position", "block", "label", "epoch"])
        for pos, b in enumerate(order):
            w.writerow([pos, b, dag.name(b), partition.epoch_of.get(b, "")])
        buf.write("\n")
        w.writerow(["position", "txid", "block", "status"])
        for v in verdicts:
            w.writerow([v.position, v.txid, dag.name(v.block), v.status])
        _emit(buf.getvalue(), args.out)
        return EXIT_OK
    doc = {
        "header": header("order", {}, None),
        "order": [dag.name(b) for b in order],
        "order_ids": order,
        "pivot_chain": [dag.name(b) for b in partition.pivot],
        "epochs": {str(i): sorted(dag.name(b) for b in members) for i, members in partition.members.items()},
        "unordered_tips": sorted(dag.name(b) for b in partition.unordered),
        "transactions": [
            {"position": v.position, "txid": v.txid, "block": dag.name(v.block), "status": v.status} for v in verdicts
        ],
        "balances": dict(sorted(ledger.balances.items())),
    }
    _emit(dumps(doc), args.out)
    return EXIT_OK


# -- risk -------------------------------------------------------------------


def cmd_risk(args: argparse.Namespace) -> int:
    params = RiskParams(args.q, args.lambda_h, args.t, args.d)
    bound = sibling_kickout_bound(args.n, args.m, params)
    doc = {
        "header": header("risk", {"q": args.q, "lambda_h": args.lambda_h, "t": args.t, "d": args.d, "n": args.n, "m": args.m}, None),
        "bound": bound,
        "tolerance": args.tolerance,
        "decision": confirm_decision(bound, args.tolerance),
    }
    _emit(dumps(doc), args.out)
    return EXIT_OK


# -- simulate ---------------------------------------------------------------


def _write_sim(trace, out_dir: str | None, stem: str) -> None:
    summary = dumps(sim_summary(trace))
    if out_dir is None:
        sys.stdout.write(summary)
        return
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{stem}.json").write_text(summary, encoding="utf-8")
    (d / f"{stem}.csv").write_text(sim_block_csv(trace), encoding="utf-8")


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.replay:
        if args.config or args.seed is not None or args.seeds != 1:
            raise UsageError("--replay cannot be combined with --config, --seed or --seeds")
        try:
            doc = json.loads(Path(args.replay).read_text(encoding="utf-8"))
            config = config_from_header(doc)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot read header from {args.replay}: {exc}") from None
        configs = [config.validate()]
    else:
        if not args.config:
            raise UsageError("simulate needs --config or --replay")
        base = load_sim_config(args.config)
        first = base.seed if args.seed is None else args.seed
        configs = [replace(base, seed=first + i) for i in range(args.seeds)]
    if args.seeds > 1 and args.out_dir is None:
        raise UsageError("--seeds > 1 needs --out-dir")
    for cfg in configs:
        trace = Simulation(cfg).run()
        _write_sim(trace, args.out_dir, f"sim-{cfg.seed}")
    return EXIT_OK


# -- attack -----------------------------------------------------------------


def cmd_attack(args: argparse.Namespace) -> int:
    config = load_sim_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    plan = load_attack_plan(args.plan) if args.plan else AttackPlan()
    tolerance = config.confirm_tolerance if args.tolerance is None else args.tolerance
    report = double_spend_experiment(
        config, plan, tolerance, args.seeds, abandon_gap=args.abandon_gap, workers=args.workers
    )
    summary = dumps(attack_summary(report, config, asdict(plan), tolerance))
    if args.out_dir is None:
        sys.stdout.write(summary)
    else:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "attack.json").write_text(summary, encoding="utf-8")
        (d / "attack-outcomes.csv").write_text(attack_outcomes_csv(report), encoding="utf-8")
    return EXIT_OK


# -- phantom-attack ---------------------------------------------------------


def cmd_phantom_attack(args: argparse.Namespace) -> int:
    schedule = AttackSchedule(args.k_delta, args.k_prime, args.i_max)
    dag = build_attack_dag(schedule)
    result = run_liveness_attack(schedule, dag=dag)
    lem = result.lemmas
    doc = {
        "header": header("phantom", {"k_delta": args.k_delta, "k_prime": args.k_prime, "i_max": args.i_max, "q": args.q}, None),
        "k": result.k,
        "blocks": {"honest": schedule.num_honest, "malicious": schedule.i_max},
        "lemmas": {
            "anti_count_formula": lem.anti_counts_ok,
            "honest_anti_malicious_below_k_delta": lem.honest_anti_ok,
            "honest_anti_honest_within_k_prime": lem.honest_sync_ok,
            "coloring": lem.coloring_ok,
        },
        "checkpoints": [
            {
                "kind": c.kind,
                "index": c.index,
                "v": c.v,
                "tip": dag.labels[c.tip],
                "through_b2": c.through_b2,
                "through_a1": c.through_a1,
                "ok": c.ok,
            }
            for c in result.checkpoints
        ],
        "violations": len(result.violations),
    }
    if args.q is not None:
        doc["success_bound"] = attack_success_probability(args.q, args.k_delta)
    if args.export_dag:
        with open(args.export_dag, "w", encoding="utf-8") as fh:
            write_dag(dag.state, fh, dag.labels)
    _emit(dumps(doc), args.out)
    return EXIT_OK


# -- wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="conflux", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("order", help="total order and transaction verdicts of a DAG file")
    o.add_argument("dag_file")
    o.add_argument("--format", choices=("json", "csv"), default="json")
    o.add_argument("--out")
    o.set_defaults(func=cmd_order)

    r = sub.add_parser("risk", help="kick-out bound for one pivot block and sibling")
    r.add_argument("--q", type=float, required=True, help="attacker to honest rate ratio")
    r.add_argument("--lambda-h", type=float, required=True, help="honest blocks per second")
    r.add_argument("--t", type=float, required=True, help="seconds since the parent was generated")
    r.add_argument("--n", type=int, required=True, help="blocks in the pivot block's subtree older than d")
    r.add_argument("--m", type=int, required=True, help="honest blocks in the sibling's subtree")
    r.add_argument("--d", type=float, default=0.0)
    r.add_argument("--tolerance", type=float, default=1e-4)
    r.add_argument("--out")
    r.set_defaults(func=cmd_risk)

    s = sub.add_parser("simulate", help="run the network simulator")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--seeds", type=int, default=1, help="run this many consecutive seeds")
    s.add_argument("--out-dir", help="write sim-<seed>.json and sim-<seed>.csv here")
    s.add_argument("--replay", help="rerun from the header of a summary JSON")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("attack", help="double-spend experiment")
    a.add_argument("--config", required=True)
    a.add_argument("--plan")
    a.add_argument("--seeds", type=int, default=100)
    a.add_argument("--seed", type=int, help="first seed (default: the config's)")
    a.add_argument("--tolerance", type=float)
    a.add_argument("--abandon-gap", type=int, default=25)
    a.add_argument("--workers", type=int)
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_attack)

    ph = sub.add_parser("phantom-attack", help="liveness attack on PHANTOM's main chain")
    ph.add_argument("--k-delta", type=int, required=True)
    ph.add_argument("--k-prime", type=int, default=0)
    ph.add_argument("--i-max", type=int, required=True)
    ph.add_argument("--q", type=float, help="attacker share of mining power for the success bound")
    ph.add_argument("--export-dag")
    ph.add_argument("--out")
    ph.set_defaults(func=cmd_phantom_attack)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "seeds", 1) < 1:
            raise UsageError("--seeds must be >= 1")
        return args.func(args)
    except (UsageError, DagFileError, ConfigParseError, json.JSONDecodeError) as exc:
        print(f"conflux {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"conflux {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfluxError as exc:
        print(f"conflux {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
