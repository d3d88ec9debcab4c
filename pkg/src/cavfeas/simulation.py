"""Event-driven intersection simulation.

Vehicles arrive at path entries according to independent Poisson processes,
are planned one at a time in arrival order against the growing occupancy
ledger, and the finished ledger is audited from scratch. Because every
trajectory is committed in full at entry there is no time stepping: the only
events are arrivals.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .constraints import OccupancyLedger, SafetyParams, Violation, audit, gap_guarantee_holds
from .errors import ConfigError
from .geometry import IntersectionLayout, four_leg_12path
from .planner import PlannerSettings, PlanRequest, PlanResult, PlanStatus, plan
from .trajectory import EntryState, KinematicLimits, squared_accel_integral, squared_jerk_integral

RateSpec = Union[float, Mapping[int, float]]


@dataclass(frozen=True)
class SimConfig:
    """Everything a run depends on.

    ``arrival_rate`` is vehicles per second, either one value for every path
    or a map from path id to rate (unlisted paths get no traffic).
    """

    layout: IntersectionLayout = field(default_factory=four_leg_12path)
    limits: KinematicLimits = KinematicLimits(v_min=2.0, v_max=20.0, u_min=-3.0, u_max=3.0)
    params: SafetyParams = SafetyParams(tau_r=4.0, tau_l=2.0)
    arrival_rate: RateSpec = 0.02
    entry_speed_range: tuple[float, float] = (8.0, 14.0)
    duration: float = 300.0
    rng_seed: int = 0
    scan_step: float = 0.1
    sample_dt: float = 0.1
    allow_weak_headways: bool = False
    planner: PlannerSettings = PlannerSettings()

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("/duration", f"must be > 0, got {self.duration}")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("/rng_seed", "must be a 64-bit unsigned integer")
        for loc, value in (("/solver/scan_step", self.scan_step), ("/output/sample_dt", self.sample_dt)):
            if not value > 0:
                raise ConfigError(loc, f"must be > 0, got {value}")
        v_lo, v_hi = self.entry_speed_range
        if not self.limits.v_min <= v_lo <= v_hi <= self.limits.v_max:
            raise ConfigError(
                "/arrivals/entry_speed",
                f"[{v_lo}, {v_hi}] must lie within [{self.limits.v_min}, {self.limits.v_max}]",
            )
        known = set(self.layout.path_ids)
        for pid, rate in self.rates().items():
            if pid not in known:
                raise ConfigError(f"/arrivals/rate/{pid}", f"unknown path_id {pid}")
            if not rate >= 0:
                raise ConfigError(f"/arrivals/rate/{pid}", f"rate must be >= 0, got {rate}")

    def rates(self) -> dict[int, float]:
        """Per-path arrival rate."""
        if isinstance(self.arrival_rate, Mapping):
            return {int(k): float(v) for k, v in self.arrival_rate.items()}
        return {pid: float(self.arrival_rate) for pid in self.layout.path_ids}


@dataclass(frozen=True)
class Arrival:
    vehicle_id: int
    t: float
    path_id: int
    v0: float

    def to_dict(self) -> dict:
        return {"vehicle_id": self.vehicle_id, "t": self.t, "path_id": self.path_id, "v0": self.v0}


@dataclass
class Metrics:
    vehicles_total: int = 0
    vehicles_cubic: int = 0
    vehicles_fallback: int = 0
    vehicles_rejected: int = 0
    mean_travel_time: float = 0.0
    max_travel_time: float = 0.0
    mean_energy: float = 0.0
    mean_jerk: float = 0.0
    latency_p50: float = 0.0
    latency_p95: float = 0.0
    audit_violations: int = 0

    TIMING_FIELDS = ("latency_p50", "latency_p95")

    def to_dict(self, timing: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not timing:
            for k in self.TIMING_FIELDS:
                d.pop(k)
        return d


@dataclass
class SimOutcome:
    """Full record of one run; ``run`` returns the first three fields."""

    ledger: OccupancyLedger
    rejected: list[Arrival]
    metrics: Metrics
    arrivals: list[Arrival]
    results: list[PlanResult]
    violations: list[Violation]
    latencies: list[float]


def _path_arrivals(config: SimConfig, path_id: int, rate: float):
    if rate <= 0:
        return []
    # Philox is counter-based; one independent stream per (seed, path)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.rng_seed, path_id])))
    v_lo, v_hi = config.entry_speed_range
    out = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > config.duration:
            break
        out.append((t, rng.uniform(v_lo, v_hi)))
    # vehicles cannot enter closer than the rear-end headway
    spaced = []
    for t, v0 in out:
        if spaced:
            t = max(t, spaced[-1][0] + config.params.tau_r)
        spaced.append((t, v0))
    return spaced


def generate_arrivals(config: SimConfig) -> list[Arrival]:
    """Seeded Poisson arrivals on every path, sorted by time then path id.

    Same-path arrivals closer than ``tau_r`` are pushed back; a pushed
    arrival may land after ``duration`` and is kept.
    """
    rows = []
    for pid, rate in sorted(config.rates().items()):
        rows += [(t, pid, v0) for t, v0 in _path_arrivals(config, pid, rate)]
    rows.sort(key=lambda r: (r[0], r[1]))
    return [Arrival(i + 1, float(t), pid, float(v0)) for i, (t, pid, v0) in enumerate(rows)]


def _metrics(results: Sequence[PlanResult], latencies, n_violations) -> Metrics:
    m = Metrics(vehicles_total=len(results), audit_violations=n_violations)
    travel, energy, jerk = [], [], []
    for r in results:
        if r.status is PlanStatus.CUBIC:
            m.vehicles_cubic += 1
        elif r.status is PlanStatus.FALLBACK:
            m.vehicles_fallback += 1
        else:
            m.vehicles_rejected += 1
            continue
        travel.append(r.trajectory.duration)
        energy.append(squared_accel_integral(r.trajectory))
        jerk.append(squared_jerk_integral(r.trajectory))
    if travel:
        m.mean_travel_time = float(np.mean(travel))
        m.max_travel_time = float(np.max(travel))
        m.mean_energy = float(np.mean(energy))
        m.mean_jerk = float(np.mean(jerk))
    if latencies:
        m.latency_p50 = float(np.percentile(latencies, 50))
        m.latency_p95 = float(np.percentile(latencies, 95))
    return m


def simulate(config: SimConfig, arrivals: Optional[Sequence[Arrival]] = None) -> SimOutcome:
    """Run the simulation and keep every intermediate product.

    ``arrivals`` overrides the generated arrival list (used for constructed
    scenarios).
    """
    if not config.allow_weak_headways and not gap_guarantee_holds(config.params):
        raise ConfigError(
            "/safety/tau_r",
            f"tau_r={config.params.tau_r} < 2*tau_l={2 * config.params.tau_l}; "
            "the rear-end headway must leave room for a lateral crossing "
            "(set allow_weak_headways to override)",
        )
    if arrivals is None:
        arrivals = generate_arrivals(config)
    ledger = OccupancyLedger()
    results, rejected, latencies = [], [], []
    for a in sorted(arrivals, key=lambda a: (a.t, a.path_id, a.vehicle_id)):
        req = PlanRequest(a.vehicle_id, a.path_id, EntryState(a.t, 0.0, a.v0), config.limits, config.params)
        started = time.perf_counter()
        res = plan(req, ledger, config.layout, config.scan_step, config.planner)
        latencies.append(time.perf_counter() - started)
        results.append(res)
        if not res.ok:
            rejected.append(a)
    violations = audit(ledger, config.layout, config.params, config.limits, config.planner.position_step)
    metrics = _metrics(results, latencies, len(violations))
    return SimOutcome(ledger, rejected, metrics, list(arrivals), results, violations, latencies)


def run(config: SimConfig):
    """Simulate one configuration; returns ``(ledger, rejected, metrics)``."""
    out = simulate(config)
    return out.ledger, out.rejected, out.metrics


@dataclass(frozen=True)
class SweepRow:
    rate: float
    seed: int
    metrics: Metrics


def sweep(base: SimConfig, rates: Sequence[float], seeds: Sequence[int]) -> list[SweepRow]:
    """One run per ``(rate, seed)``, rates outer, in input order.

    Each rate is applied uniformly to every path.
    """
    if not rates:
        raise ConfigError("/rates", "at least one rate is required")
    if not seeds:
        raise ConfigError("/seeds", "at least one seed is required")
    rows = []
    for rate in rates:
        for seed in seeds:
            cfg = dataclasses.replace(base, arrival_rate=float(rate), rng_seed=int(seed))
            rows.append(SweepRow(float(rate), int(seed), run(cfg)[2]))
    return rows
