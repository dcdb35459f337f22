"""Command line entry point: ``throttlesim {run,correlate,sweep,fluctuate,gen-trace}``."""

import argparse
import json
import logging
import os
import sys

from . import experiment
from .config import load_config
from .sim import ConfigError
from .workload import TRACE_KINDS, TraceError, gen_trace, save_trace

log = logging.getLogger("throttlesim")


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = args.out if args.out is not None else cfg.output_dir
    return cfg, out


def _emit(summary):
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_run(args):
    cfg, out = _load(args)
    res = experiment.run(cfg)
    paths = experiment.write_run(res, out)
    s = res.summary()
    s["files"] = {k: os.path.relpath(v) for k, v in sorted(paths.items())}
    _emit(s)


def cmd_correlate(args):
    cfg, out = _load(args)
    rows = experiment.correlation_bench(cfg)
    os.makedirs(out, exist_ok=True)
    table = [{"service": r.service, "pearson_latency_throttles": r.r_throttle,
              "pearson_latency_utilization": r.r_utilization, "flag": r.flag} for r in rows]
    points = [{"service": r.service, "quota_cores": q, "p99_ms": p, "throttles": t, "utilization": u}
              for r in rows for q, p, t, u in zip(r.quotas, r.p99_ms, r.throttles, r.utilization)]
    cols = ["service", "pearson_latency_throttles", "pearson_latency_utilization", "flag"]
    with open(os.path.join(out, "correlation.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(experiment.csv_text(cols, table))
    with open(os.path.join(out, "correlation_points.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(experiment.csv_text(["service", "quota_cores", "p99_ms", "throttles", "utilization"], points))
    _emit({"correlation": [{k: (experiment._r(v) if isinstance(v, float) else v) for k, v in t.items()}
                           for t in table]})


def cmd_sweep(args):
    cfg, out = _load(args)
    res = experiment.threshold_sweep(cfg)
    os.makedirs(out, exist_ok=True)
    rows = [{k: r[k] for k in ("threshold", "avg_alloc_cores", "max_hourly_p99_ms", "slo_met_every_hour")}
            for r in res.rows]
    for r in rows:
        if r["max_hourly_p99_ms"] is None:
            r["max_hourly_p99_ms"] = ""
    with open(os.path.join(out, "sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(experiment.csv_text(["threshold", "avg_alloc_cores", "max_hourly_p99_ms",
                                      "slo_met_every_hour"], rows))
    _emit({"baseline": res.baseline,
           "best_threshold": res.best if res.feasible else "none feasible",
           "best_avg_alloc_cores": experiment._r(res.best_alloc)})


def cmd_fluctuate(args):
    cfg, out = _load(args)
    targets, rows = experiment.fluctuation_bench(cfg)
    os.makedirs(out, exist_ok=True)
    cols = ["half_range", "rps_lo", "rps_hi", "p99_min", "p99_q1", "p99_median", "p99_q3", "p99_max",
            "avg_alloc_cores"]
    with open(os.path.join(out, "fluctuation.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(experiment.csv_text(cols, [vars(r) for r in rows]))
    _emit({"targets": targets,
           "median_p99_ms": [experiment._r(r.p99_median) for r in rows],
           "half_ranges": [r.half_range for r in rows]})


def cmd_gen_trace(args):
    tr = gen_trace(args.kind, args.duration, args.min, args.avg, args.max, seed=args.seed or 0)
    save_trace(tr, args.output)
    lo, avg, hi = tr.stats()
    _emit({"path": args.output, "points": len(tr), "rps_min": round(lo, 6),
           "rps_avg": round(avg, 6), "rps_max": round(hi, 6)})


def build_parser():
    p = argparse.ArgumentParser(prog="throttlesim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", "-c", required=True, help="YAML experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", "-o", default=None, help="output directory (default: config output_dir)")

    for name, fn, help_ in (("run", cmd_run, "end-to-end run with the configured controller"),
                            ("correlate", cmd_correlate, "static quota sweep; latency correlations"),
                            ("sweep", cmd_sweep, "utilization-threshold sweep for a K8s baseline"),
                            ("fluctuate", cmd_fluctuate, "fixed targets under local RPS fluctuation")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.set_defaults(func=fn)

    g = sub.add_parser("gen-trace", help="write a synthetic per-second RPS trace")
    g.add_argument("--kind", choices=TRACE_KINDS, default="diurnal")
    g.add_argument("--duration", type=int, default=3600, help="seconds")
    g.add_argument("--min", type=float, required=True)
    g.add_argument("--avg", type=float, required=True)
    g.add_argument("--max", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", "-o", required=True, help="destination CSV (t_s,rps)")
    g.set_defaults(func=cmd_gen_trace)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, TraceError, ValueError, OSError) as e:
        print(f"throttlesim: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
