"""Scenario execution: config -> plan -> kernel -> metric files and manifest."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .cluster import make_partition_map
from .config import ScenarioConfig, build_topology, parse
from .engine import RandomStream, StreamId
from .kernel import get_simulate
from .metrics import export_csv, export_svg, mdl_wait_oracle, summarize
from .plan import KernelPlan, KernelResult
from .routing import Policy
from .topology import Topology, path
from .workload import (
    PageModel,
    ProfileConfig,
    TransactionModel,
    calibrate_duty_cycle,
    partition_cdf,
    spawn_sessions,
)

OUTPUT_ROOT_ENV = "OLAPSIM_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"


def workload_models(cfg: ScenarioConfig) -> tuple[ProfileConfig, PageModel, TransactionModel]:
    w = cfg.workload
    profile = ProfileConfig(
        start_time=w.start_time,
        start_offset=w.start_offset,
        inter_repetition=w.inter_repetition,
        on_duration=w.on_duration,
        repetitions_unlimited=w.repetitions_unlimited,
        mode=w.mode,
    )
    page = PageModel(w.objects_per_page, w.object_size, w.object_refresh, w.page_refresh)
    txn = TransactionModel(w.query_mix, w.interarrival, w.query_size)
    return profile, page, txn


def duty_cycle_for(cfg: ScenarioConfig, topology: Topology | None = None) -> float:
    if cfg.workload.duty_cycle != "auto":
        return float(cfg.workload.duty_cycle)
    users = topology.total_users if topology else cfg.topology.lans * cfg.topology.users_per_lan
    return calibrate_duty_cycle(cfg.workload.target_aggregate, users, workload_models(cfg)[2])


def build_plan(cfg: ScenarioConfig) -> KernelPlan:
    topology = build_topology(cfg)
    profile, page, txn = workload_models(cfg)
    seed = cfg.run.seed
    duty = duty_cycle_for(cfg, topology)
    sessions = spawn_sessions(profile, topology, RandomStream(seed, StreamId.SESSION_START), duty)

    w, s = cfg.workload, cfg.servers
    pmap = make_partition_map(s.placement, cfg.topology.rdbms_servers, w.partitions, s.placement_map)
    olaps, rdbms = topology.olap_ids, topology.rdbms_ids
    lans = [n.id for n in topology.lans]
    route = [[path(topology, o, r) for r in rdbms] for o in olaps]
    download = [[path(topology, o, lan) for lan in lans] for o in olaps]
    return KernelPlan(
        seed=seed,
        sessions=sessions,
        n_lans=len(lans),
        profile=profile,
        page=page,
        txn=txn,
        partition_map=pmap,
        partition_cdf=partition_cdf(w.partitions, w.partition_skew) if w.partition_skew > 0 else None,
        flow=[list(row) for row in cfg.flow_matrix],
        route_links=route,
        download_links=download,
        speed_factors=list(cfg.speed_factors),
        policy=Policy(cfg.routing.policy, cfg.routing.ewma_alpha),
        base_service_time=s.base_service_time,
        reference_size=s.reference_size,
        service_noise=s.service_noise,
        max_events=cfg.run.max_events,
        end_time=cfg.run.end_time,
        warmup=cfg.run.warmup,
        bucket_width=cfg.run.bucket_width,
        reservoir_size=cfg.run.reservoir_size,
    )


def simulate_config(cfg: ScenarioConfig, *, backend: str | None = None, trace: bool = False) -> KernelResult:
    return get_simulate(backend)(build_plan(cfg), trace=trace)


# ---------------------------------------------------------------------------
# manifests


def _json_safe(obj: Any) -> Any:
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_json_atomic(path: Path, data: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(_json_safe(data), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


def scenario_dir(cfg: ScenarioConfig, name: str) -> Path:
    if cfg.run.output_dir:
        return Path(cfg.run.output_dir)
    return output_root() / name


@dataclass
class RunOutcome:
    manifest: dict
    result: KernelResult
    out_dir: Path | None


def run_scenario(
    cfg: ScenarioConfig,
    *,
    name: str = "reference",
    out_dir: Path | str | None = None,
    backend: str | None = None,
    svg: bool = True,
    write: bool = True,
) -> RunOutcome:
    """Run one scenario and (optionally) write CSVs, SVGs and ``manifest.json``."""
    plan = build_plan(cfg)
    simulate = get_simulate(backend)
    t0 = time.perf_counter()
    result = simulate(plan)
    wall = time.perf_counter() - t0
    summary = summarize(result, [f"rdbms_{i + 1}" for i in range(plan.n_rdbms)])

    manifest = {
        "scenario": name,
        "config_hash": cfg.config_hash(),
        "seed": cfg.run.seed,
        "tool_version": __version__,
        "event_counts": result.event_counts(),
        "total_events": result.total_events,
        "stopped_by": result.stopped_by,
        "wall_clock_s": wall,
        "final_time": result.final_clock,
        "t_end": result.t_end,
        "sessions": len(plan.sessions),
        "duty_cycle": duty_cycle_for(cfg),
        "conservation": {
            "dispatched": result.dispatched,
            "arrived": result.arrived,
            "completed": result.completed,
            "queued": result.queued,
            "in_service": result.in_service,
            "in_flight": result.in_flight,
        },
        "summary": summary.as_dict(),
    }
    if not write:
        return RunOutcome(manifest, result, None)

    out = Path(out_dir) if out_dir is not None else scenario_dir(cfg, name)
    out.mkdir(parents=True, exist_ok=True)
    files = [p.name for p in export_csv(result, out)]
    if svg:
        files += [p.name for p in export_svg(result, out)]
    (out / "config.resolved.json").write_text(cfg.dump())
    manifest["files"] = sorted(files + ["config.resolved.json"])
    write_json_atomic(out / "manifest.json", manifest)
    return RunOutcome(manifest, result, out)


# ---------------------------------------------------------------------------
# sweeps


def parse_axis(spec: str) -> tuple[str, list[str]]:
    """``section.key=v1;v2;...`` -> (dotted key, raw value texts)."""
    key, sep, values = spec.partition("=")
    if not sep or "." not in key:
        raise ValueError(f"axis must look like section.key=v1;v2, got {spec!r}")
    vals = [v.strip() for v in values.split(";") if v.strip()]
    if not vals:
        raise ValueError(f"axis {key} has no values")
    return key.strip(), vals


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", text).strip("_")


def sweep_points(base_name: str, axes: Sequence[tuple[str, list[str]]]) -> list[tuple[str, dict[str, str]]]:
    points = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        overrides = {key: val for (key, _), val in zip(axes, combo)}
        run_id = "__".join([base_name] + [_slug(f"{k.split('.')[-1]}={v}") for k, v in overrides.items()])
        points.append((run_id, overrides))
    return points


COMPARISON_FIELDS = [
    "scenario_id",
    "status",
    "cv",
    "mean_wait",
    "mean_processing",
    "p95_processing",
    "utilization_min",
    "utilization_max",
    "utilization_spread",
    "mean_rate",
    "total_events",
]


def _sweep_one(args: tuple) -> dict:
    cfg_text, run_id, overrides, base, out_root, backend, svg = args
    row: dict[str, Any] = {"scenario_id": run_id, **{f"axis:{k}": v for k, v in overrides.items()}}
    try:
        cfg = parse(cfg_text).with_overrides({**base, **overrides})
        outcome = run_scenario(cfg, name=run_id, out_dir=Path(out_root) / run_id, backend=backend, svg=svg)
        s = outcome.manifest["summary"]
        utils = [x["utilization"] for x in s["servers"]]
        row.update(
            status="ok",
            cv=s["cv"],
            mean_wait=s["mean_wait"],
            mean_processing=s["mean_processing"],
            p95_processing=s["p95_processing"],
            utilization_min=min(utils) if utils else math.nan,
            utilization_max=max(utils) if utils else math.nan,
            utilization_spread=s["utilization_spread"],
            mean_rate=s["mean_rate"],
            total_events=outcome.manifest["total_events"],
        )
    except Exception as exc:  # recorded per run; the sweep carries on
        row["status"] = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def sweep(
    cfg_text: str,
    axes: Sequence[tuple[str, list[str]]],
    out_root: Path | str,
    *,
    base_name: str = "sweep",
    parallelism: int = 1,
    backend: str | None = None,
    svg: bool = False,
    base_overrides: dict[str, Any] | None = None,
) -> tuple[list[dict], Path]:
    """Run every combination of ``axes`` over the base scenario text.

    Returns the comparison rows (in combination order) and the path of
    ``comparison.csv``.
    """
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    base = dict(base_overrides or {})
    jobs = [(cfg_text, rid, ov, base, str(out_root), backend, svg) for rid, ov in sweep_points(base_name, axes)]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]

    axis_cols = [f"axis:{k}" for k, _ in axes]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COMPARISON_FIELDS[:2] + axis_cols + COMPARISON_FIELDS[2:], lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()})
    table = out_root / "comparison.csv"
    table.write_text(buf.getvalue())
    return rows, table


# ---------------------------------------------------------------------------
# validation oracles


DD1_SCENARIO = """
[topology]
lans = 1
users_per_lan = 1
gateways = 1
olap_servers = 1
rdbms_servers = 1

[workload]
duty_cycle = 1
partitions = 1

[run]
end_time = 2000
warmup = 0
"""

MD1_SCENARIO = """
[topology]
lans = 1
users_per_lan = 200
gateways = 1
olap_servers = 1
rdbms_servers = 1

[workload]
duty_cycle = 1
partitions = 1
interarrival = exponential(8)

[run]
end_time = 4100
warmup = 100
"""


@dataclass
class OracleCheck:
    name: str
    passed: bool
    measured: float
    expected: float
    tolerance: float
    wall_clock_s: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return (
            f"[{mark}] {self.name}: measured={self.measured:.6g} expected={self.expected:.6g} "
            f"tol={self.tolerance:g} wall={self.wall_clock_s:.2f}s {self.detail}".rstrip()
        )


def run_oracles(*, backend: str | None = None, seed: int | None = None) -> list[OracleCheck]:
    """D/D/1 (exact zero wait) and M/D/1 (mean wait within 10%) validation runs."""
    checks = []
    overrides = {"run.seed": seed} if seed is not None else {}

    cfg = parse(DD1_SCENARIO).with_overrides(overrides)
    t0 = time.perf_counter()
    res = simulate_config(cfg, backend=backend)
    wall = time.perf_counter() - t0
    checks.append(
        OracleCheck(
            "D/D/1 zero wait",
            passed=res.n_waited == 0 and res.completed > 1 and res.conserved(),
            measured=res.max_wait,
            expected=0.0,
            tolerance=0.0,
            wall_clock_s=wall,
            detail=f"queries={res.completed} waited={res.n_waited}",
        )
    )

    cfg = parse(MD1_SCENARIO).with_overrides(overrides)
    t0 = time.perf_counter()
    res = simulate_config(cfg, backend=backend)
    wall = time.perf_counter() - t0
    sessions = cfg.topology.users_per_lan
    lam = sessions / cfg.workload.interarrival.mean
    expected = mdl_wait_oracle(lam, cfg.servers.base_service_time)
    measured = float(res.sum_wait.sum() / res.n_post.sum())
    checks.append(
        OracleCheck(
            "M/D/1 mean wait",
            passed=abs(measured - expected) <= 0.10 * expected and res.conserved(),
            measured=measured,
            expected=expected,
            tolerance=0.10,
            wall_clock_s=wall,
            detail=f"lambda={lam:g} rho={lam * cfg.servers.base_service_time:g} queries={int(res.n_post.sum())}",
        )
    )
    return checks
