"""Machine-readable outputs: JSON summaries and per-block CSV."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict
from typing import Any

from . import __version__
from .adversary import ExperimentReport
from .simnet import SimConfig, SimTrace

SIG_DIGITS = 12


def rounded(obj: Any) -> Any:
    """Copy of ``obj`` with every float cut to 12 significant digits."""
    if isinstance(obj, float):
        return float(f"{obj:.{SIG_DIGITS}g}")
    if isinstance(obj, dict):
        return {str(k): rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(rounded(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def header(kind: str, config: dict[str, Any], seed: int | None) -> dict[str, Any]:
    return {"format": f"conflux-{kind}", "version": __version__, "config": config, "seed": seed}


def sim_summary(trace: SimTrace) -> dict[str, Any]:
    m = dict(trace.metrics)
    chain = m.pop("chain_ratio")
    return {
        "header": header("sim", trace.config.to_dict(), trace.config.seed),
        "utilization": {"rule": trace.config.rule, "value": m.pop("utilization"), "by_rule": {
            "conflux": m["in_order"], "ghost": chain["ghost"], "longest": chain["longest"]}},
        "metrics": m,
    }


def config_from_header(doc: dict[str, Any]) -> SimConfig:
    head = doc.get("header", doc)
    if not str(head.get("format", "")).startswith("conflux-"):
        raise ValueError("not a conflux output header")
    return SimConfig.from_dict(head["config"])


def sim_block_csv(trace: SimTrace) -> str:
    observer = trace.nodes[trace.config.observer].dag if trace.nodes else None
    order = trace.final_orders[trace.config.observer]
    position = {b: i for i, b in enumerate(order)}
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["id", "miner", "timestamp", "epoch", "position", "stale", "confirm_latency"])
    for blk in trace.blocks:
        latency = trace.confirm_latency.get(blk.id)
        writer.writerow([
            blk.id,
            blk.miner,
            rounded(blk.timestamp),
            trace.epoch_of.get(blk.id, ""),
            position.get(blk.id, ""),
            int(observer is not None and blk.id in observer.stale),
            "" if latency is None else rounded(latency),
        ])
    return out.getvalue()


def attack_summary(report: ExperimentReport, config: SimConfig, plan: dict[str, Any], tolerance: float) -> dict[str, Any]:
    body = asdict(report)
    body.pop("outcomes")
    return {
        "header": header("attack", config.to_dict(), config.seed) | {"plan": plan, "tolerance": tolerance},
        "report": body,
    }


def attack_outcomes_csv(report: ExperimentReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    cols = ["seed", "confirmed", "confirm_time", "bound", "reverted", "revert_time", "attacker_blocks", "end"]
    writer.writerow(cols)
    for o in report.outcomes:
        row = asdict(o)
        writer.writerow(["" if row[c] is None else rounded(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return out.getvalue()
