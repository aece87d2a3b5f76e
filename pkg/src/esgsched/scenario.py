"""Scenario files: JSON schema with defaults, validation and the run pipeline.

A scenario is a nested JSON object. Every key is optional; missing keys take
the defaults in ``DEFAULTS``. ``resolve`` returns the fully materialized
object, which is what the CLI echoes next to its outputs; feeding the echo
back reproduces the run.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .cluster_sim import WORKLOAD_STREAM, SimSettings, SimTrace, TransferParams, run
from .model import ApplicationDag, ConfigGrid, Pricing, ProfileModel, ProfileTable
from .schedulers import SCHEDULERS, make_scheduler
from .workload import REGIMES, SLO_FACTORS, Arrival, WorkloadSetting, generate_trace, load_catalog, periodic_trace, slo_for

DEFAULTS: dict[str, Any] = {
    "name": "custom",
    "seed": 1,
    "scheduler": "esg",
    "scheduler_params": {},
    "workload": {
        "kind": "random",  # random | periodic
        "regime": "light",
        "slo_mode": "strict",
        "interval_range_ms": None,
        "horizon_ms": 60_000.0,
        "app": None,  # periodic only
        "period_ms": None,
        "count": None,
    },
    "catalog": None,  # inline {"functions": [...], "applications": [...]}; None = bundled
    "apps": None,  # subset of application ids; None = all
    "grid": ConfigGrid().as_dict(),
    "profile_model": {"kappa_b": 0.6, "kappa_c": 0.15, "kappa_g": 0.35},
    "pricing": {"vcpu_per_hour": 0.034, "vgpu_per_hour": 0.67, "alpha": 0.5},
    "cluster": {"n_nodes": 16, "vcpus_per_node": 16, "vgpus_per_node": 7},
    "sim": {
        "noise_sigma": 0.05,
        "prewarm": True,
        "ewma_lambda": 0.3,
        "keep_alive_ms": 600_000.0,
        "tick_ms": 10.0,
        "recheck_rounds": 3,
        "initial_warm": False,
        "max_time_ms": None,
        "transfer": {"fixed_latency_ms": 5.0, "bandwidth_mb_per_ms": 1.0},
    },
    "ablations": {"no_gpu_sharing": False, "no_batching": False},
    "gamma": 0.0,
}

# keys whose values are free-form and not checked against DEFAULTS
_OPAQUE = {"scheduler_params", "catalog"}


class ScenarioError(ValueError):
    """Schema violation; the message starts with the offending field path."""


def _merge(defaults, given, path: str):
    if not isinstance(given, Mapping):
        raise ScenarioError(f"{path or '<root>'}: expected an object, got {type(given).__name__}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ScenarioError(f"{where}: unknown field")
        d = defaults[key]
        if key == "scheduler_params" and isinstance(value, Mapping):
            out[key] = {**out[key], **value}
        elif key in _OPAQUE or d is None or value is None:
            out[key] = copy.deepcopy(value)
        elif isinstance(d, dict):
            out[key] = _merge(d, value, where)
        else:
            out[key] = _coerce(d, value, where)
    return out


def _coerce(default, value, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ScenarioError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"{where}: expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and float(value) != int(value):
            raise ScenarioError(f"{where}: expected an integer, got {value!r}")
        return type(default)(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ScenarioError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ScenarioError(f"{where}: expected a nonempty list, got {value!r}")
        return list(value)
    return value


def _check(s: dict):
    if s["scheduler"] not in SCHEDULERS:
        raise ScenarioError(f"scheduler: unknown scheduler {s['scheduler']!r}; expected one of {sorted(SCHEDULERS)}")
    w = s["workload"]
    if w["kind"] not in ("random", "periodic"):
        raise ScenarioError(f"workload.kind: expected 'random' or 'periodic', got {w['kind']!r}")
    if w["slo_mode"] not in SLO_FACTORS:
        raise ScenarioError(f"workload.slo_mode: expected one of {sorted(SLO_FACTORS)}, got {w['slo_mode']!r}")
    if w["kind"] == "random":
        if w["interval_range_ms"] is None and w["regime"] not in REGIMES:
            raise ScenarioError(f"workload.regime: expected one of {sorted(REGIMES)}, got {w['regime']!r}")
        r = w["interval_range_ms"]
        if r is not None and (not isinstance(r, list) or len(r) != 2 or not 0 < r[0] <= r[1]):
            raise ScenarioError("workload.interval_range_ms: expected [lo, hi] with 0 < lo <= hi")
        if w["horizon_ms"] < 0:
            raise ScenarioError("workload.horizon_ms: must be >= 0")
    else:
        for key in ("app", "period_ms", "count"):
            if w[key] is None:
                raise ScenarioError(f"workload.{key}: required for periodic workloads")
        if not w["period_ms"] > 0 or int(w["count"]) < 0:
            raise ScenarioError("workload.period_ms: must be > 0 and count >= 0")
    for dim in ("batch", "vcpus", "vgpus"):
        vals = s["grid"][dim]
        if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in vals):
            raise ScenarioError(f"grid.{dim}: expected integers >= 1, got {vals!r}")
    if not 0 <= s["gamma"] <= 1:
        raise ScenarioError("gamma: must lie in [0, 1]")


def resolve(data: Mapping | None = None, overrides: Mapping | None = None) -> dict:
    """Defaults, then ``data``, then dotted-path ``overrides`` (e.g. ``{"workload.regime": "heavy"}``)."""
    s = _merge(DEFAULTS, data or {}, "")
    for dotted, value in (overrides or {}).items():
        *parents, leaf = dotted.split(".")
        patch: dict = {leaf: value}
        for p in reversed(parents):
            patch = {p: patch}
        s = _merge(s, patch, "")
    _check(s)
    return s


def load(path_or_name: str | Path, overrides: Mapping | None = None) -> dict:
    """Resolve a scenario file, or a bundled preset by name."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    else:
        preset = resources.files("esgsched").joinpath(f"data/presets/{path_or_name}.json")
        if not preset.is_file():
            raise ScenarioError(f"<file>: no scenario file or preset named {str(path_or_name)!r}; presets: {', '.join(preset_names())}")
        text = preset.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"<file>: invalid JSON ({e})") from None
    return resolve(data, overrides)


def preset_names() -> list[str]:
    d = resources.files("esgsched").joinpath("data/presets")
    return sorted(f.name[:-5] for f in d.iterdir() if f.name.endswith(".json"))


@dataclass
class Built:
    apps: list[ApplicationDag]
    profiles: ProfileTable
    pricing: Pricing
    settings: SimSettings
    arrivals: list[Arrival]
    scheduler: Any
    seed: int


def build(s: Mapping) -> Built:
    """Materialize a resolved scenario into simulator inputs, ablations applied."""
    funcs, apps = load_catalog(s["catalog"])
    if s["apps"] is not None:
        known = {a.id: a for a in apps}
        missing = [a for a in s["apps"] if a not in known]
        if missing:
            raise ScenarioError(f"apps: unknown application(s) {missing}")
        apps = [known[a] for a in s["apps"]]
    grid = dict(s["grid"])
    pm = dict(s["profile_model"])
    price = dict(s["pricing"])
    cluster = dict(s["cluster"])
    if s["ablations"]["no_batching"]:
        grid["batch"] = [1]
    if s["ablations"]["no_gpu_sharing"]:
        # the whole GPU is one indivisible unit with the speed and price of all its slices
        slices = cluster["vgpus_per_node"]
        grid["vgpus"] = [1]
        pm["vgpu_scale"] = slices
        price["vgpu_per_hour"] *= slices
        cluster["vgpus_per_node"] = 1
    fn_used = sorted({f for a in apps for f in a.node_ids})
    profiles = ProfileTable.synthesize(
        [funcs[f] for f in fn_used], ConfigGrid(grid["batch"], grid["vcpus"], grid["vgpus"]), ProfileModel(**pm)
    )
    pricing = Pricing(**price)
    w = s["workload"]
    apps = [a if a.slo_ms is not None else a.with_slo(slo_for(a, w["slo_mode"], profiles)) for a in apps]
    sim = dict(s["sim"])
    sim["transfer"] = TransferParams(**sim["transfer"])
    settings = SimSettings(**cluster, **sim)
    seed = int(s["seed"])
    if w["kind"] == "periodic":
        if w["app"] not in {a.id for a in apps}:
            raise ScenarioError(f"workload.app: unknown application {w['app']!r}")
        arrivals = periodic_trace(w["app"], float(w["period_ms"]), int(w["count"]))
    else:
        rng = tuple(w["interval_range_ms"]) if w["interval_range_ms"] is not None else None
        setting = WorkloadSetting(w["regime"], w["slo_mode"], rng)
        arrivals = generate_trace(setting, apps, float(w["horizon_ms"]), [seed, WORKLOAD_STREAM])
    try:
        sched = make_scheduler(s["scheduler"], **s["scheduler_params"]).fit(apps, profiles, pricing)
    except ValueError as e:
        raise ScenarioError(f"scheduler: {e}") from None
    return Built(apps, profiles, pricing, settings, arrivals, sched, seed)


def simulate(s: Mapping) -> SimTrace:
    b = build(s)
    return run(b.apps, b.profiles, b.scheduler, b.arrivals, b.settings, b.seed)

