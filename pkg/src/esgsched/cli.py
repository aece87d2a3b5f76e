"""Command-line driver: run one scenario or sweep one parameter.

    esgsched run strict-light --seed 42 --out runs/sl
    esgsched sweep relaxed-heavy --param k --values 1,5,20,80 --out runs/k
    esgsched presets
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import scenario
from .cluster_sim import run
from .metrics import RunSummary, summarize, validate_schedule, write_summary_csv

log = logging.getLogger("esgsched")

# flag -> dotted scenario path
FLAG_PATHS = {
    "scheduler": "scheduler",
    "regime": "workload.regime",
    "slo_mode": "workload.slo_mode",
    "seed": "seed",
    "k": "scheduler_params.k",
    "group_size": "scheduler_params.group_size",
    "sigma": "sim.noise_sigma",
    "nodes": "cluster.n_nodes",
    "horizon_ms": "workload.horizon_ms",
}
SWEEP_PATHS = {
    "k": ("scheduler_params.k", int),
    "group_size": ("scheduler_params.group_size", int),
    "sigma": ("sim.noise_sigma", float),
    "regime": ("workload.regime", str),
}


def _overrides(args) -> dict:
    out = {}
    for flag, path in FLAG_PATHS.items():
        v = getattr(args, flag)
        if v is not None:
            out[path] = v
    if args.no_gpu_sharing:
        out["ablations.no_gpu_sharing"] = True
    if args.no_batching:
        out["ablations.no_batching"] = True
    return out


def run_once(resolved: dict, out_dir: Path | None, extra: dict | None = None):
    built = scenario.build(resolved)
    trace = run(built.apps, built.profiles, built.scheduler, built.arrivals, built.settings, built.seed)
    overall, per_app = summarize(trace, built.pricing, resolved["gamma"])
    problems = validate_schedule(trace)
    for p in problems:
        log.warning("schedule violation: %s", p)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        trace.write_csv(out_dir / "trace.csv")
        write_summary_csv(out_dir / "summary.csv", [overall], extra)
        write_summary_csv(out_dir / "apps.csv", list(per_app.values()), extra)
        (out_dir / "resolved.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return overall, per_app, problems


def cmd_run(args) -> int:
    resolved = scenario.load(args.scenario, _overrides(args))
    overall, _, problems = run_once(resolved, Path(args.out))
    print(
        f"{resolved['name']} {resolved['scheduler']} seed={resolved['seed']}: "
        f"hit={overall.slo_hit_rate:.4f} cost=${overall.total_cost:.4f} jobs={overall.jobs} "
        f"search_mean={overall.search_mean_ms:.2f}ms violations={len(problems)}"
    )
    return 0


def cmd_sweep(args) -> int:
    path, kind = SWEEP_PATHS[args.param]
    try:
        values = [kind(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise scenario.ScenarioError(f"--values: cannot parse {args.values!r} as {kind.__name__}") from None
    if not values:
        raise scenario.ScenarioError("--values: at least one value is required")
    base = _overrides(args)
    out = Path(args.out)
    rows = []
    for v in values:
        resolved = scenario.load(args.scenario, {**base, path: v})
        overall, _, _ = run_once(resolved, out / f"{args.param}={v}", {"param": args.param, "value": v})
        rows.append((v, overall))
        print(f"{args.param}={v}: hit={overall.slo_hit_rate:.4f} cost=${overall.total_cost:.4f} search_mean={overall.search_mean_ms:.3f}ms")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", *RunSummary.COLUMNS])
        for v, r in rows:
            w.writerow([args.param, v, *(repr(x) if isinstance(x, float) else x for x in r.row())])
    return 0


def cmd_presets(args) -> int:
    for name in scenario.preset_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esgsched", description="Serverless DNN workflow scheduling simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file or preset name")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--scheduler", choices=sorted(scenario.SCHEDULERS))
        sp.add_argument("--regime", choices=sorted(scenario.REGIMES))
        sp.add_argument("--slo-mode", dest="slo_mode", choices=sorted(scenario.SLO_FACTORS))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--k", type=int, help="configurations kept per search (default 5)")
        sp.add_argument("--group-size", dest="group_size", type=int, help="maximal group size (default 3)")
        sp.add_argument("--sigma", type=float, help="execution-time noise sigma")
        sp.add_argument("--nodes", type=int, help="number of invoker nodes")
        sp.add_argument("--horizon-ms", dest="horizon_ms", type=float, help="arrival horizon")
        sp.add_argument("--no-gpu-sharing", action="store_true", help="one indivisible GPU per node")
        sp.add_argument("--no-batching", action="store_true", help="batch size fixed at 1")

    sp = sub.add_parser("run", help="simulate one scenario")
    common(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("sweep", help="simulate one scenario per parameter value")
    common(sp)
    sp.add_argument("--param", required=True, choices=sorted(SWEEP_PATHS))
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("presets", help="list bundled scenarios")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (scenario.ScenarioError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
