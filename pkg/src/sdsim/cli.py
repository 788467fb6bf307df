"""Command-line entry point: ``sdsim simulate | compare | gen-workload``.

Settings come from flags, then an optional ``--config`` file of flat
``key = value`` lines whose keys are the long flag names, then defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .cluster import ClusterConfig
from .engine import EventLog, SimConfig, replay_compare, run
from .errors import SimError
from .metrics import heatmap, summarize, write_daily_csv, write_heatmap_csv, write_report_csv, write_report_json
from .workload import SynthParams, format_swf, gen_synthetic, load_swf

log = logging.getLogger("sdsim")

DEFAULTS = {
    "policy": "static",
    "baseline": "static",
    "runtime_model": "ideal",
    "max_slowdown": "dyn",
    "sharing_factor": 0.5,
    "max_mates": 2,
    "candidate_cap": 64,
    "use_free_nodes": False,
    "backfill_interval": 30,
    "backfill_depth": 0,
    "easy": False,
    "seed": 0,
    "nodes": 1024,
    "sockets": 2,
    "cores_per_socket": 24,
    "malleable_fraction": 1.0,
    "ranks_per_node": 1,
    "bounded_slowdown": None,
    "out": "out",
    # gen-workload
    "jobs": 1000,
    "min_nodes": 1,
    "max_nodes": 128,
    "min_runtime": 60,
    "max_runtime": 36000,
    "max_inflation": 4.0,
    "interarrival": 600.0,
}

BOOL_KEYS = {"use_free_nodes", "easy"}


def read_config(path) -> dict:
    """Parse a flat key = value file; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SimError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in DEFAULTS and key != "workload":
            raise SimError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value):
    if value is None:
        return None
    default = DEFAULTS.get(key)
    if key in BOOL_KEYS:
        if isinstance(value, bool):
            return value
        return str(value).lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(value)
    if isinstance(default, float) or key == "bounded_slowdown":
        return float(value)
    return value


def resolve(args: argparse.Namespace) -> dict:
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    merged = {}
    for key in list(DEFAULTS) + ["workload"]:
        cli = getattr(args, key, None)
        if cli is not None:
            merged[key] = cli
        elif key in file_values:
            merged[key] = file_values[key]
        else:
            merged[key] = DEFAULTS.get(key)
        merged[key] = _coerce(key, merged[key])
    return merged


def sim_config(s: dict, policy: str | None = None) -> SimConfig:
    cluster = ClusterConfig(s["nodes"], s["sockets"], s["cores_per_socket"])
    return SimConfig(
        cluster=cluster,
        policy=policy or s["policy"],
        model=s["runtime_model"],
        cutoff=s["max_slowdown"],
        sharing_factor=s["sharing_factor"],
        max_mates=s["max_mates"],
        candidate_cap=s["candidate_cap"],
        use_free_nodes=s["use_free_nodes"],
        backfill_interval=s["backfill_interval"],
        backfill_depth=s["backfill_depth"],
        easy=s["easy"],
        seed=s["seed"],
    )


def _load_jobs(s: dict, cluster: ClusterConfig):
    if not s["workload"]:
        raise SimError("--workload is required")
    jobs, meta = load_swf(s["workload"], cluster, malleable_fraction=s["malleable_fraction"],
                          rng_seed=s["seed"], ranks_per_node=s["ranks_per_node"])
    if meta.dropped:
        log.warning("dropped %d unusable records from %s", meta.dropped, s["workload"])
    return jobs


def _settings_record(s: dict, config: SimConfig) -> dict:
    return {"policy": config.policy, "runtime_model": config.model.value, "max_slowdown": config.cutoff.label(),
            "sharing_factor": config.sharing_factor, "max_mates": config.max_mates,
            "candidate_cap": config.candidate_cap, "use_free_nodes": config.use_free_nodes,
            "backfill_interval": config.backfill_interval, "easy": config.easy, "seed": config.seed,
            "nodes": config.cluster.node_count, "workload": str(s["workload"])}


def write_run(out: Path, report, events: EventLog, hm, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    events.write(out / "events.log")
    write_report_json(out / "report.json", report, extra)
    write_report_csv(out / "report.csv", report)
    write_heatmap_csv(out / "heatmap.csv", hm)
    write_daily_csv(out / "daily.csv", report.daily)


def cmd_simulate(args) -> int:
    s = resolve(args)
    config = sim_config(s)
    jobs = _load_jobs(s, config.cluster)
    _, events = run(jobs, config)
    report = summarize(events, s["bounded_slowdown"])
    hm = heatmap(events, events, bounded_slowdown=s["bounded_slowdown"])
    out = Path(s["out"])
    write_run(out, report, events, hm, {"settings": _settings_record(s, config)})
    print(f"{len(jobs)} jobs  makespan {report.makespan}  avg slowdown {report.avg_slowdown:.3f}  "
          f"malleable starts {report.malleable_starts}  -> {out}")
    return 0


def cmd_compare(args) -> int:
    s = resolve(args)
    base_cfg = sim_config(s, s["baseline"])
    other_cfg = sim_config(s, s["policy"])
    jobs = _load_jobs(s, base_cfg.cluster)
    cmp = replay_compare(jobs, base_cfg, other_cfg)
    tau = s["bounded_slowdown"]
    base_rep, other_rep = summarize(cmp.baseline_log, tau), summarize(cmp.other_log, tau)
    out = Path(s["out"])
    write_run(out / "baseline", base_rep, cmp.baseline_log, heatmap(cmp.baseline_log, cmp.baseline_log,
              bounded_slowdown=tau), {"settings": _settings_record(s, base_cfg)})
    hm = heatmap(cmp.other_log, cmp.baseline_log, bounded_slowdown=tau)
    write_run(out / "policy", other_rep, cmp.other_log, hm, {"settings": _settings_record(s, other_cfg)})
    ratios = {k: (getattr(other_rep, k) / getattr(base_rep, k) if getattr(base_rep, k) else None)
              for k in ("makespan", "avg_response_time", "avg_wait_time", "avg_slowdown")}
    with open(out / "ratios.json", "w") as fp:
        json.dump(ratios, fp, indent=2, sort_keys=True)
        fp.write("\n")
    with open(out / "ratios.csv", "w") as fp:
        fp.write("metric,ratio\n")
        for k in sorted(ratios):
            fp.write(f"{k},{'' if ratios[k] is None else ratios[k]}\n")
    write_heatmap_csv(out / "heatmap.csv", hm)
    print("  ".join(f"{k} {v:.4f}" for k, v in sorted(ratios.items()) if v is not None) + f"  -> {out}")
    return 0


def cmd_gen_workload(args) -> int:
    s = resolve(args)
    cluster = ClusterConfig(s["nodes"], s["sockets"], s["cores_per_socket"])
    params = SynthParams(
        job_count=s["jobs"],
        node_range=(s["min_nodes"], min(s["max_nodes"], cluster.node_count)),
        runtime_range=(s["min_runtime"], s["max_runtime"]),
        estimate_inflation_range=(1.0, s["max_inflation"]),
        interarrival_mean_seconds=s["interarrival"],
        malleable_fraction=s["malleable_fraction"],
        ranks_per_node=s["ranks_per_node"],
    )
    jobs, _ = gen_synthetic(params, s["seed"], cluster)
    out = Path(s["out"])
    if out.suffix != ".swf":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "workload.swf"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(format_swf(jobs, cluster))
    print(f"wrote {len(jobs)} jobs to {out}")
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    d = DEFAULTS
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int, help=f"seed for malleability flags and generation (default {d['seed']})")
    p.add_argument("--nodes", type=int, help=f"node count (default {d['nodes']})")
    p.add_argument("--sockets", type=int, help=f"sockets per node (default {d['sockets']})")
    p.add_argument("--cores-per-socket", type=int, help=f"cores per socket (default {d['cores_per_socket']})")
    p.add_argument("--malleable-fraction", type=float,
                   help=f"share of jobs marked malleable (default {d['malleable_fraction']})")
    p.add_argument("--ranks-per-node", type=int, help=f"ranks per node for every job (default {d['ranks_per_node']})")
    p.add_argument("--out", help=f"output directory (default {d['out']})")
    p.add_argument("-v", "--verbose", action="store_true")


def _sim_flags(p: argparse.ArgumentParser) -> None:
    d = DEFAULTS
    p.add_argument("--workload", help="SWF trace to replay")
    p.add_argument("--policy", choices=("static", "sd"), help=f"scheduling policy (default {d['policy']})")
    p.add_argument("--runtime-model", choices=("ideal", "worst"),
                   help=f"how shrunk jobs progress (default {d['runtime_model']})")
    p.add_argument("--max-slowdown", help=f"mate penalty cutoff: a number > 1, inf, or dyn (default {d['max_slowdown']})")
    p.add_argument("--sharing-factor", type=float,
                   help=f"max fraction of a node's cores taken from a mate, in (0, 1) (default {d['sharing_factor']})")
    p.add_argument("--max-mates", type=int, help=f"max mates per malleable start (default {d['max_mates']})")
    p.add_argument("--candidate-cap", type=int, help=f"mate candidates examined (default {d['candidate_cap']})")
    p.add_argument("--use-free-nodes", action="store_true", default=None,
                   help="let free nodes top up a mate selection")
    p.add_argument("--backfill-interval", type=int,
                   help=f"seconds between periodic passes (default {d['backfill_interval']})")
    p.add_argument("--backfill-depth", type=int,
                   help=f"queued jobs examined per pass, 0 = all (default {d['backfill_depth']})")
    p.add_argument("--easy", action="store_true", default=None, help="reserve only for the first blocked job")
    p.add_argument("--bounded-slowdown", type=float, help="bound slowdown denominators below by this many seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdsim", description="Backfill / malleable co-scheduling simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replay a workload under one policy")
    _common(p)
    _sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="replay a workload under a baseline and a second policy")
    _common(p)
    _sim_flags(p)
    p.add_argument("--baseline", choices=("static", "sd"), help=f"baseline policy (default {DEFAULTS['baseline']})")
    p.set_defaults(func=cmd_compare)

    d = DEFAULTS
    p = sub.add_parser("gen-workload", help="write a synthetic SWF workload")
    _common(p)
    p.add_argument("--jobs", type=int, help=f"job count (default {d['jobs']})")
    p.add_argument("--min-nodes", type=int, help=f"(default {d['min_nodes']})")
    p.add_argument("--max-nodes", type=int, help=f"(default {d['max_nodes']})")
    p.add_argument("--min-runtime", type=int, help=f"seconds (default {d['min_runtime']})")
    p.add_argument("--max-runtime", type=int, help=f"seconds (default {d['max_runtime']})")
    p.add_argument("--max-inflation", type=float,
                   help=f"requested time is runtime times U(1, this) (default {d['max_inflation']})")
    p.add_argument("--interarrival", type=float, help=f"mean seconds between submissions (default {d['interarrival']})")
    p.set_defaults(func=cmd_gen_workload)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SimError, ValueError, OSError) as exc:
        print(f"sdsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
