"""Command line entry point: run, sweep, gen-trace and validate."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from . import traces
from .config import (ConfigError, ScenarioConfig, SweepConfig, _read_json, build_scenario, config_hash,
                     parse_scenario, parse_sweep, parse_trace_params)
from .engine import STRATEGIES, ScenarioInvalid, SimReport, run

log = logging.getLogger("limo")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

TABLE_COLUMNS = ("strategy", "value", "seed", "config_hash", "avg_utilization", "cloud_offload_rate",
                 "fog_offload_rate", "mean_ttc", "mean_sigma", "error")


# -- artifact writing ------------------------------------------------------

def write_atomic(path: Path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _stamp(config_hash_: str, seed: int) -> str:
    return f"# config_hash={config_hash_} seed={seed}\n"


def heatmap_csv(report: SimReport) -> str:
    """Node x epoch utilization, one row per node, epochs as columns."""
    buf = io.StringIO()
    buf.write(_stamp(report.config_hash, report.seed))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node"] + [f"t={t:g}" for t in report.epoch_times])
    for node, row in zip(report.node_ids, report.utilization):
        w.writerow([node] + [repr(float(u)) for u in row])
    return buf.getvalue()


def summary_dict(report: SimReport) -> Dict[str, Any]:
    return {
        "name": report.name,
        "strategy": report.strategy,
        "seed": report.seed,
        "config_hash": report.config_hash,
        "makespan": report.makespan,
        "avg_utilization": report.avg_utilization,
        "mean_ttc": report.mean_ttc,
        "mean_sigma": report.mean_sigma,
        "fog_offload_count": report.fog_offload_count,
        "cloud_offload_count": report.cloud_offload_count,
        "cloud_offload_rate": report.cloud_offload_rate,
        "fog_offload_rate": report.fog_offload_rate,
        "tasks_total": report.tasks_total,
        "tasks_completed": report.tasks_completed,
    }


def summary_csv(report: SimReport) -> str:
    row = summary_dict(report)
    buf = io.StringIO()
    buf.write(_stamp(report.config_hash, report.seed))
    w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
    w.writeheader()
    w.writerow(row)
    return buf.getvalue()


def _run_stem(report: SimReport) -> str:
    return f"{report.name}_{report.strategy}_s{report.seed}"


def emit(report: SimReport, out_dir: Path, fmt: str = "json") -> List[Path]:
    """Write the summary (full report for json) and the heatmap CSV."""
    stem = _run_stem(report)
    if fmt == "json":
        main = write_atomic(out_dir / f"{stem}.json", report.to_json() + "\n")
    else:
        main = write_atomic(out_dir / f"{stem}_summary.csv", summary_csv(report))
    heat = write_atomic(out_dir / f"{stem}_heatmap.csv", heatmap_csv(report))
    return [main, heat]


# -- sweeps ----------------------------------------------------------------

@dataclass
class ComparisonTable:
    axis: str
    base_hash: str
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r["strategy"], r["value"], r["seed"]))

    def to_json(self) -> str:
        return json.dumps({"axis": self.axis, "config_hash": self.base_hash, "rows": self.rows},
                          sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.base_hash} axis={self.axis} "
                  f"seeds={','.join(str(s) for s in sorted({r['seed'] for r in self.rows}))}\n")
        w = csv.DictWriter(buf, fieldnames=list(TABLE_COLUMNS), lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: r.get(k, "") for k in TABLE_COLUMNS})
        return buf.getvalue()

    def mean(self, strategy: str, value: int, column: str) -> float:
        vals = [r[column] for r in self.rows
                if r["strategy"] == strategy and r["value"] == value and r.get("error") is None]
        return math.fsum(vals) / len(vals) if vals else math.nan


def sweep_variant(base: ScenarioConfig, axis: str, value: int, strategy: str, seed: int) -> ScenarioConfig:
    data = base.model_dump(mode="json", by_alias=True)
    data["strategy"] = strategy
    data["seed"] = seed
    if axis == "task_count":
        data["workload"]["tasks"] = value
    else:
        if isinstance(data["nodes"], list):
            raise ConfigError("base.nodes", "node_count sweeps need a grid node spec")
        data["nodes"]["count"] = value
        data["nodes"]["rows"] = min(data["nodes"]["rows"], value)
    return parse_scenario(data)


def _sweep_job(args: Tuple[Dict[str, Any], str, int, str, int, Optional[str]]) -> Tuple[Dict[str, Any], Optional[Dict[str, Any]]]:
    base_data, axis, value, strategy, seed, base_dir = args
    row: Dict[str, Any] = {"strategy": strategy, "value": value, "seed": seed, "config_hash": None, "error": None}
    try:
        cfg = sweep_variant(ScenarioConfig.model_validate(base_data), axis, value, strategy, seed)
        row["config_hash"] = config_hash(cfg)
        report = run(build_scenario(cfg, Path(base_dir) if base_dir else None))
    except Exception as exc:  # one failed run must not stop the sweep
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row, None
    row.update(avg_utilization=report.avg_utilization, cloud_offload_rate=report.cloud_offload_rate,
               fog_offload_rate=report.fog_offload_rate, mean_ttc=report.mean_ttc, mean_sigma=report.mean_sigma)
    return row, report.to_dict()


def run_sweep(sweep: SweepConfig, workers: Optional[int] = None, out_dir: Optional[Path] = None,
              base_dir: Optional[Path] = None) -> ComparisonTable:
    """Every (strategy, value, seed) combination; rows come back sorted.

    Runs are independent, so ``workers > 1`` fans them out to processes
    without changing any result.  Failed runs keep a row with ``error`` set.
    """
    base = sweep.base
    assert isinstance(base, ScenarioConfig)
    jobs = [(base.model_dump(mode="json", by_alias=True), sweep.axis, v, s, seed,
             str(base_dir) if base_dir else None)
            for s in sweep.strategies for v in sweep.values for seed in sweep.seeds]
    n = workers or sweep.workers
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    table = ComparisonTable(sweep.axis, config_hash(base))
    for row, rep in results:
        if row["error"]:
            log.error("run %s/%s/seed %s failed: %s", row["strategy"], row["value"], row["seed"], row["error"])
        elif out_dir is not None:
            report = SimReport.from_dict(rep)
            write_atomic(out_dir / f"{_run_stem(report)}_{sweep.axis}{row['value']}_heatmap.csv",
                         heatmap_csv(report))
        table.rows.append(row)
    table.sort()
    return table


# -- verbs -----------------------------------------------------------------

def _load_config(path: str, seed: Optional[int], strategy: Optional[str]) -> ScenarioConfig:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ConfigError("", "scenario must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    if strategy is not None:
        data["strategy"] = strategy
    return parse_scenario(data)


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed, args.strategy)
    scenario = build_scenario(cfg, Path(args.config).parent)
    report = run(scenario)
    paths = emit(report, Path(args.out), args.format)
    s = summary_dict(report)
    print(f"{report.name} [{report.strategy}, seed {report.seed}, {report.config_hash}]: "
          f"avg_util={s['avg_utilization']:.4f} mean_ttc={s['mean_ttc']:.2f}s mean_sigma={s['mean_sigma']:.4f} "
          f"fog={s['fog_offload_count']} cloud={s['cloud_offload_count']} "
          f"done={s['tasks_completed']}/{s['tasks_total']}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    data = _read_json(args.config)
    if not isinstance(data, dict):
        raise ConfigError("", "sweep must be a JSON object")
    if args.seed is not None:
        data["seeds"] = [args.seed]
    if args.strategy is not None:
        data["strategies"] = [args.strategy]
    base_dir = Path(args.config).parent
    sweep = parse_sweep(data, base_dir)
    out = Path(args.out)
    table = run_sweep(sweep, out_dir=out, base_dir=base_dir)
    name = f"sweep_{sweep.axis}"
    if args.format == "json":
        path = write_atomic(out / f"{name}.json", table.to_json() + "\n")
    else:
        path = write_atomic(out / f"{name}.csv", table.to_csv())
    failed = [r for r in table.rows if r["error"]]
    for value in sweep.values:
        parts = [f"{s}: util={table.mean(s, value, 'avg_utilization'):.4f} "
                 f"cloud_rate={table.mean(s, value, 'cloud_offload_rate'):.4f} "
                 f"ttc={table.mean(s, value, 'mean_ttc'):.2f}" for s in sweep.strategies]
        print(f"{sweep.axis}={value}  " + "  |  ".join(parts))
    print(f"wrote {path}")
    if failed:
        print(f"{len(failed)} of {len(table.rows)} runs failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    params = parse_trace_params(_read_json(args.config))
    seed = params.seed if args.seed is None else args.seed
    if params.hotspots:
        ts = traces.generate_clustered_trace(params.n_vehicles, params.duration, params.area, params.hotspots,
                                             params.hotspot_share, params.spread, params.speed_range, seed)
    else:
        ts = traces.generate_synthetic_trace(params.n_vehicles, params.duration, params.area,
                                             params.speed_range, seed)
    out = Path(params.output)
    if not out.is_absolute():
        out = Path(args.out) / out
    out.parent.mkdir(parents=True, exist_ok=True)
    traces.write_trace(ts, out)
    print(f"wrote {out} ({ts.record_count} rows, {len(ts.tracks)} vehicles, seed {seed})")
    return EXIT_OK


def cmd_validate(args) -> int:
    data = _read_json(args.config)
    if not isinstance(data, dict):
        raise ConfigError("", "expected a JSON object")
    if "axis" in data:
        sweep = parse_sweep(data, Path(args.config).parent)
        runs = len(sweep.values) * len(sweep.strategies) * len(sweep.seeds)
        print(f"ok: sweep over {sweep.axis} with {runs} runs, base {config_hash(sweep.base)}")
    elif "n_vehicles" in data:
        p = parse_trace_params(data)
        print(f"ok: trace params for {p.n_vehicles} vehicles over {p.duration}s")
    else:
        cfg = parse_scenario(data)
        scenario = build_scenario(cfg, Path(args.config).parent)
        scenario.validate()
        print(f"ok: scenario {cfg.name} ({cfg.strategy}, seed {cfg.seed}) hash {config_hash(cfg)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="limo", description="Mobile fog migration simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log planning details")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt=True):
        p.add_argument("config", help="JSON document")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        if fmt:
            p.add_argument("--format", choices=("json", "csv"), default="json")
            p.add_argument("--strategy", choices=STRATEGIES, default=None)

    common(sub.add_parser("run", help="simulate one scenario"))
    common(sub.add_parser("sweep", help="run a task/node count sweep"))
    common(sub.add_parser("gen-trace", help="write a synthetic mobility trace"), fmt=False)
    p = sub.add_parser("validate", help="check a scenario, sweep or trace-params file")
    p.add_argument("config")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gen-trace": cmd_gen_trace, "validate": cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScenarioInvalid) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
