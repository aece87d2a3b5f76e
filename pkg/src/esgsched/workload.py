"""Arrival traces for the heavy/normal/light regimes and SLO settings."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple, Sequence

import numpy as np

from .model import MIN_CONFIG, ApplicationDag, FunctionSpec, ProfileTable

REGIMES = {
    "heavy": (10.0, 16.8),
    "normal": (20.0, 33.6),
    "light": (40.0, 67.2),
}
SLO_FACTORS = {"strict": 0.8, "moderate": 1.0, "relaxed": 1.2}


@dataclass(frozen=True)
class WorkloadSetting:
    regime: str = "light"
    slo_mode: str = "strict"
    interval_range_ms: tuple[float, float] | None = None

    def __post_init__(self):
        if self.slo_mode not in SLO_FACTORS:
            raise ValueError(f"unknown slo mode {self.slo_mode!r}; expected one of {sorted(SLO_FACTORS)}")
        if self.interval_range_ms is None:
            if self.regime not in REGIMES:
                raise ValueError(f"unknown regime {self.regime!r}; expected one of {sorted(REGIMES)}")
            object.__setattr__(self, "interval_range_ms", REGIMES[self.regime])
        lo, hi = self.interval_range_ms
        if not 0 < lo <= hi:
            raise ValueError("interval range must satisfy 0 < lo <= hi")

    @property
    def slo_factor(self) -> float:
        return SLO_FACTORS[self.slo_mode]


class Arrival(NamedTuple):
    job_id: int
    time_ms: float
    app_id: str


def generate_trace(setting: WorkloadSetting, apps: Sequence[ApplicationDag], horizon_ms: float, seed) -> list[Arrival]:
    """Uniform inter-arrival gaps in the setting's range, uniformly chosen apps, arrivals in [gap1, horizon)."""
    if not apps:
        raise ValueError("at least one application is required")
    rng = np.random.default_rng(seed)
    lo, hi = setting.interval_range_ms
    out = []
    t = 0.0
    while True:
        t += lo if lo == hi else float(rng.uniform(lo, hi))
        if t >= horizon_ms:
            break
        app = apps[int(rng.integers(len(apps)))]
        out.append(Arrival(len(out), t, app.id))
    return out


def periodic_trace(app_id: str, period_ms: float, count: int, start_ms: float = 0.0) -> list[Arrival]:
    return [Arrival(i, start_ms + i * period_ms, app_id) for i in range(count)]


def slo_for(app: ApplicationDag, mode: str | float, profiles: ProfileTable) -> float:
    """factor * L, where L is the critical path of the app at the minimum configuration."""
    factor = SLO_FACTORS[mode] if isinstance(mode, str) else float(mode)
    weights = {f: profiles.exec_ms(f, MIN_CONFIG) for f in app.node_ids}
    return factor * app.critical_path_ms(weights)


def load_catalog(data: dict | None = None) -> tuple[dict[str, FunctionSpec], list[ApplicationDag]]:
    """Functions and applications from a catalog dict, default the bundled one."""
    if data is None:
        data = json.loads(resources.files("esgsched").joinpath("data/functions.json").read_text())
    funcs = {}
    for row in data["functions"]:
        spec = FunctionSpec(
            str(row["id"]),
            float(row["base_exec_ms"]),
            float(row.get("cold_start_ms", 0.0)),
            float(row.get("input_size_mb", 0.0)),
        )
        funcs[spec.id] = spec
    apps = []
    for row in data["applications"]:
        if "chain" in row:
            apps.append(ApplicationDag.chain(row["id"], [funcs[f] for f in row["chain"]], row.get("slo_ms")))
        else:
            nodes = tuple(funcs[f] for f in row["functions"])
            edges = tuple(tuple(e) for e in row.get("edges", ()))
            apps.append(ApplicationDag(row["id"], nodes, edges, row.get("slo_ms")))
    return funcs, apps


def builtin_apps() -> list[ApplicationDag]:
    return load_catalog()[1]
