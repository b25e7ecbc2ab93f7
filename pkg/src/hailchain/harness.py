"""Load generator and measurement rig for the simulated network.

Traffic is produced by a small pool of workers (default four, split
across the organizations) that each drive complete ride lifecycles:
request, accept, set destination, pickup, dropoff, leave. A worker owns
its riders and drivers outright and a driver serves one ride at a time,
so a clean run has zero read/write conflicts by construction and every
failure the report counts is a real defect.

Workers are open-loop: each submits on its own clock (constant delay
with a uniform deviation, or Poisson) regardless of what has committed,
bounded only by its pool of in-flight rides. That cap is what models a
test engine saturating: past the point where commits cannot keep up,
beats find nothing ready and throughput flattens or collapses instead
of queueing unboundedly.

Latencies are read off transaction tickets (peer, orderer, event) in
commit order and averaged over non-overlapping 1000-transaction
windows. TPS is committed transactions over the measured span. The
harness drives the virtual clock only; wall-mode networks belong to the
interactive gateway.
"""

from __future__ import annotations

import csv
import math
import random
import statistics
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .chaincode import request_key
from .netsim import (
    VIRTUAL,
    ClientHandle,
    Network,
    OrgSpec,
    TopologyConfig,
    TxTicket,
    build_network,
)

PICKUP_POINT = "36.1627,-86.7816"
DROPOFF_POINT = "36.1263,-86.6774"
PASSWORD_HASH = "e3" * 32
PASSWORD_SALT = "5a" * 16

RIDE_TXS = 6  # request, accept, destination, pickup, dropoff, leave
WINDOW_SIZE = 1000


class HarnessError(Exception):
    pass


class InvalidProfile(HarnessError):
    pass


class HarnessTimeout(HarnessError):
    """The network stopped making progress before the workload finished."""


# --- traffic profiles -----------------------------------------------------------

@dataclass(frozen=True)
class ConstantRate:
    """Fixed inter-send delay spread uniformly by +-deviation."""

    delay_ms: float
    deviation: float = 0.30

    def describe(self) -> str:
        return f"constant:{self.delay_ms:g}"


@dataclass(frozen=True)
class Poisson:
    """Exponential inter-send times at rate_per_s transactions/second."""

    rate_per_s: float

    def describe(self) -> str:
        return f"poisson:{self.rate_per_s:g}"


Profile = ConstantRate | Poisson


def _check_profile(profile: Profile) -> None:
    if isinstance(profile, ConstantRate):
        if not math.isfinite(profile.delay_ms) or profile.delay_ms <= 0:
            raise InvalidProfile("delay must be positive")
        if not 0.0 <= profile.deviation < 1.0:
            raise InvalidProfile("deviation fraction must be in [0, 1)")
    elif isinstance(profile, Poisson):
        if not math.isfinite(profile.rate_per_s) or profile.rate_per_s <= 0:
            raise InvalidProfile("lambda must be positive")
    else:
        raise InvalidProfile(f"unknown profile {profile!r}")


def next_interval(profile: Profile, rng: random.Random) -> float:
    """One inter-send time in ms; the single home of both distributions."""
    if isinstance(profile, ConstantRate):
        lo = profile.delay_ms * (1.0 - profile.deviation)
        hi = profile.delay_ms * (1.0 + profile.deviation)
        return rng.uniform(lo, hi)
    return rng.expovariate(profile.rate_per_s / 1000.0)


def generate_intervals(profile: Profile, n: int, seed: int) -> list[float]:
    _check_profile(profile)
    if n <= 0:
        raise InvalidProfile("need at least one interval")
    rng = random.Random(seed)
    return [next_interval(profile, rng) for _ in range(n)]


def parse_profile(text: str) -> Profile:
    """CLI form: constant:<delay_ms>[:<deviation>] or poisson:<rate_per_s>."""
    parts = text.split(":")
    try:
        if parts[0] == "constant" and len(parts) == 2:
            profile: Profile = ConstantRate(float(parts[1]))
        elif parts[0] == "constant" and len(parts) == 3:
            profile = ConstantRate(float(parts[1]), float(parts[2]))
        elif parts[0] == "poisson" and len(parts) == 2:
            profile = Poisson(float(parts[1]))
        else:
            raise InvalidProfile(f"unrecognized profile {text!r}")
    except ValueError as exc:
        raise InvalidProfile(f"bad number in profile {text!r}") from exc
    _check_profile(profile)
    return profile


# --- workload and report --------------------------------------------------------

@dataclass(frozen=True)
class WorkloadSpec:
    total_rides: int = 1000
    txs_per_ride: int = RIDE_TXS
    workers: int = 4
    riders_per_worker: int = 8
    drivers_per_worker: int = 8
    idle_limit_ms: float = 60_000.0

    def __post_init__(self) -> None:
        if self.total_rides < 1:
            raise HarnessError("total_rides must be positive")
        if self.txs_per_ride != RIDE_TXS:
            raise HarnessError("a ride lifecycle is exactly six transactions")
        if self.workers < 1:
            raise HarnessError("need at least one worker")
        if self.riders_per_worker < 0 or self.drivers_per_worker < 0:
            raise HarnessError("pool sizes cannot be negative")

    @property
    def total_txs(self) -> int:
        return self.total_rides * self.txs_per_ride

    @property
    def per_worker_tx(self) -> int:
        return self.total_txs // self.workers


@dataclass
class LatencyReport:
    axis_value: float | None
    peer_mean_ms: float
    orderer_mean_ms: float
    event_mean_ms: float
    tps: float
    success_count: int
    failure_count: int
    submitted: int
    duration_ms: float
    skipped_beats: int
    windows: dict[str, list[float]] = field(default_factory=dict)

    def row(self) -> list[str]:
        return [
            _fmt3(self.axis_value if self.axis_value is not None else 0.0),
            _fmt3(self.peer_mean_ms),
            _fmt3(self.orderer_mean_ms),
            _fmt3(self.event_mean_ms),
            _fmt3(self.tps),
        ]


def _fmt3(value: float) -> str:
    return f"{value:.3f}"


def window_means(values: Sequence[float], size: int = WINDOW_SIZE) -> list[float]:
    """Means over consecutive non-overlapping windows; the tail window
    may be short but is never dropped."""
    if not values:
        return []
    return [
        statistics.fmean(values[i : i + size]) for i in range(0, len(values), size)
    ]


# --- the load driver ------------------------------------------------------------

@dataclass
class _Ride:
    rider: ClientHandle
    driver: ClientHandle
    key: str
    step: int = 0


class _Collector:
    def __init__(self, start_ms: float):
        self.t0 = start_ms
        self.last_progress = start_ms
        self.submitted = 0
        self.success = 0
        self.failure = 0
        self.skipped = 0
        self.peer_ms: list[float] = []
        self.orderer_ms: list[float] = []
        self.event_ms: list[float] = []
        self.last_commit = start_ms

    def record(self, ticket: TxTicket, now: float) -> None:
        self.last_progress = now
        if ticket.valid:
            self.success += 1
            self.last_commit = now
        else:
            self.failure += 1
        if ticket.committed_at is not None:
            if ticket.peer_latency_ms is not None:
                self.peer_ms.append(ticket.peer_latency_ms)
            if ticket.orderer_latency_ms is not None:
                self.orderer_ms.append(ticket.orderer_latency_ms)
            if ticket.event_latency_ms is not None:
                self.event_ms.append(ticket.event_latency_ms)


_STEPS: list[Callable[[_Ride], tuple[ClientHandle, str, list[str]]]] = [
    lambda r: (r.rider, "requestRide", [PICKUP_POINT]),
    lambda r: (r.driver, "acceptRide", [r.key]),
    lambda r: (r.rider, "setRideDestination", [DROPOFF_POINT]),
    lambda r: (r.driver, "pickupRider", [r.key, PICKUP_POINT]),
    lambda r: (r.driver, "dropoffRider", [r.key, DROPOFF_POINT]),
    lambda r: (r.rider, "leaveDriver", [DROPOFF_POINT]),
]


class _Worker:
    """One submission actor: an org-affine clock that feeds ride steps.

    Every beat submits at most one transaction: the next step of a ride
    whose previous step has committed, or a fresh request if the quota
    and the rider/driver pools allow. Beats with nothing ready are
    counted and skipped; that back-pressure is deliberate.
    """

    def __init__(
        self,
        net: Network,
        index: int,
        quota: int,
        profile: Profile,
        rng: random.Random,
        collector: _Collector,
        idle_limit_ms: float,
        riders: list[ClientHandle],
        drivers: list[ClientHandle],
    ):
        self.net = net
        self.index = index
        self.quota = quota
        self.profile = profile
        self.rng = rng
        self.collector = collector
        self.idle_limit_ms = idle_limit_ms
        self.free_riders: deque[ClientHandle] = deque(riders)
        self.free_drivers: deque[ClientHandle] = deque(drivers)
        self.ready: deque[_Ride] = deque()
        self.started = 0
        self.completed = 0

    @property
    def finished(self) -> bool:
        return self.completed >= self.quota

    def begin(self) -> None:
        if self.finished:  # zero-quota worker
            return
        self.net.schedule(next_interval(self.profile, self.rng), self.beat)

    def beat(self) -> None:
        now = self.net.now_ms()
        if now - self.collector.last_progress > self.idle_limit_ms:
            raise HarnessTimeout(
                f"no progress for {self.idle_limit_ms:.0f} ms "
                f"(worker {self.index}, {self.completed}/{self.quota} rides)"
            )
        self._try_submit()
        if not self.finished:
            self.net.schedule(next_interval(self.profile, self.rng), self.beat)

    def _try_submit(self) -> None:
        if self.ready:
            self._submit_step(self.ready.popleft())
        elif self.started < self.quota and self.free_riders and self.free_drivers:
            rider = self.free_riders.popleft()
            driver = self.free_drivers.popleft()
            ride = _Ride(rider, driver, request_key(rider.user_id))
            self.started += 1
            self._submit_step(ride)
        else:
            self.collector.skipped += 1

    def _submit_step(self, ride: _Ride) -> None:
        client, function, args = _STEPS[ride.step](ride)
        self.collector.submitted += 1
        self.collector.last_progress = self.net.now_ms()
        client.invoke(function, args, on_done=lambda t, r=ride: self._on_done(r, t))

    def _on_done(self, ride: _Ride, ticket: TxTicket) -> None:
        self.collector.record(ticket, self.net.now_ms())
        if ticket.valid:
            ride.step += 1
            if ride.step == len(_STEPS):
                self.completed += 1
                self.free_riders.append(ride.rider)
                self.free_drivers.append(ride.driver)
            else:
                self.ready.append(ride)
        else:
            # requeue for another attempt; the failure stays on the books
            self.ready.append(ride)


def _setup_clients(
    net: Network, workload: WorkloadSpec
) -> tuple[list[list[ClientHandle]], list[list[ClientHandle]]]:
    """Register every rider and driver before measurement starts.

    Upgrades wait for registrations to commit: a driver upgrade endorsed
    before its registration lands would read an absent user record.
    """
    org_names = [o.name for o in net.config.orgs]
    riders: list[list[ClientHandle]] = []
    drivers: list[list[ClientHandle]] = []
    for w in range(workload.workers):
        org = org_names[w % len(org_names)]
        riders.append(
            [net.create_client(f"w{w}r{i}", org) for i in range(workload.riders_per_worker)]
        )
        drivers.append(
            [net.create_client(f"w{w}d{i}", org) for i in range(workload.drivers_per_worker)]
        )

    def drain(submit: Callable[[ClientHandle], TxTicket], clients: list[ClientHandle], what: str):
        tickets = []
        for i, client in enumerate(clients):
            # small stagger keeps the registration burst from thrashing
            # the endorsement queues before measurement even starts
            net.schedule(i * 5.0, lambda c=client: tickets.append(submit(c)))
        net.run()
        bad = [t for t in tickets if not t.valid]
        if bad or len(tickets) != len(clients):
            raise HarnessError(f"workload setup failed during {what}")

    everyone = [c for pool in riders for c in pool] + [c for pool in drivers for c in pool]
    drain(
        lambda c: c.invoke("registerUser", [PASSWORD_HASH, PASSWORD_SALT]),
        everyone,
        "registration",
    )
    drain(
        lambda c: c.invoke("upgradeToDriver", ["Worker", "Generic", "EV", "2022"]),
        [c for pool in drivers for c in pool],
        "driver upgrade",
    )
    return riders, drivers


def run_load(
    network: Network,
    workload: WorkloadSpec,
    profile: Profile,
    seed: int = 0,
    axis_value: float | None = None,
) -> LatencyReport:
    """Drive the full workload and report latencies and throughput.

    Raises HarnessTimeout when the network stops making progress, for
    example when no driver exists to accept the open requests.
    """
    _check_profile(profile)
    if network.mode != VIRTUAL:
        raise HarnessError("the harness drives virtual-clock networks only")

    riders, drivers = _setup_clients(network, workload)

    worker_profile = profile
    if isinstance(profile, Poisson):
        # the aggregate rate is the spec; each worker carries a share
        worker_profile = Poisson(profile.rate_per_s / workload.workers)

    collector = _Collector(network.now_ms())
    base_quota, extra = divmod(workload.total_rides, workload.workers)
    workers = []
    for w in range(workload.workers):
        quota = base_quota + (1 if w < extra else 0)
        workers.append(
            _Worker(
                network,
                w,
                quota,
                worker_profile,
                random.Random(f"{seed}:{w}"),
                collector,
                workload.idle_limit_ms,
                riders[w],
                drivers[w],
            )
        )
    for worker in workers:
        worker.begin()
    network.run()
    if not all(w.finished for w in workers):
        raise HarnessTimeout("simulation drained with rides incomplete")

    duration_ms = max(collector.last_commit - collector.t0, 1e-9)
    peer_w = window_means(collector.peer_ms)
    orderer_w = window_means(collector.orderer_ms)
    event_w = window_means(collector.event_ms)
    return LatencyReport(
        axis_value=axis_value,
        peer_mean_ms=statistics.fmean(peer_w) if peer_w else 0.0,
        orderer_mean_ms=statistics.fmean(orderer_w) if orderer_w else 0.0,
        event_mean_ms=statistics.fmean(event_w) if event_w else 0.0,
        tps=collector.success / (duration_ms / 1000.0),
        success_count=collector.success,
        failure_count=collector.failure,
        submitted=collector.submitted,
        duration_ms=duration_ms,
        skipped_beats=collector.skipped,
        windows={"peer": peer_w, "orderer": orderer_w, "event": event_w},
    )


# --- sweeps ---------------------------------------------------------------------

SWEEP_AXES = ("constant_delay", "low_delay", "poisson", "peers", "orgs")

# presets named after the report figures they reproduce
SWEEP_PRESETS: dict[str, tuple[str, tuple[float, ...]]] = {
    "fig9": ("constant_delay", (100.0, 200.0, 300.0, 400.0, 500.0)),
    "low-delay": ("low_delay", (10.0, 30.0, 50.0, 70.0, 90.0)),
    "poisson": ("poisson", (10.0, 30.0, 50.0, 70.0, 90.0)),
    "fig11": ("peers", (2.0, 4.0, 6.0, 8.0)),
    "fig12": ("orgs", (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)),
    "fig13": ("orgs", (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)),
}


def _base_config(base: TopologyConfig | None) -> TopologyConfig:
    return base if base is not None else TopologyConfig.default()


def _sweep_point(
    axis: str,
    value: float,
    base: TopologyConfig,
    rides: int | None,
    seed: int,
) -> tuple[TopologyConfig, WorkloadSpec, Profile]:
    if axis in ("constant_delay", "low_delay"):
        cfg = base.replace(seed=seed)
        workload = WorkloadSpec(total_rides=rides or 120)
        return cfg, workload, ConstantRate(value)
    if axis == "poisson":
        cfg = base.replace(seed=seed)
        workload = WorkloadSpec(total_rides=rides or 120)
        return cfg, workload, Poisson(value)
    if axis == "peers":
        # one organization growing its peer count under steady traffic
        first = base.orgs[0].name
        cfg = base.replace(orgs=(OrgSpec(first, int(value)),), seed=seed)
        workload = WorkloadSpec(total_rides=rides or 80, workers=2)
        return cfg, workload, ConstantRate(200.0)
    if axis == "orgs":
        # traffic grows with the network: two workers per organization
        k = int(value)
        cfg = base.replace(
            orgs=tuple(OrgSpec(f"Org{i + 1}PeerOrgMSP", 2) for i in range(k)),
            seed=seed,
        )
        workload = WorkloadSpec(total_rides=(rides or 24) * k, workers=2 * k)
        return cfg, workload, ConstantRate(44.0)
    raise HarnessError(f"unknown sweep axis {axis!r}")


def run_sweep(
    axis: str,
    values: Iterable[float] | None = None,
    base: TopologyConfig | None = None,
    rides_per_point: int | None = None,
    seed: int = 0,
    csv_path: str | None = None,
) -> list[LatencyReport]:
    """One run_load per axis point, each on a freshly built network with
    its own fixed seed, so reruns are comparable point by point."""
    if axis in SWEEP_PRESETS and values is None:
        axis, values = SWEEP_PRESETS[axis]
    if axis not in SWEEP_AXES:
        raise HarnessError(f"unknown sweep axis {axis!r}")
    if values is None:
        raise HarnessError("sweep needs axis values")
    base_cfg = _base_config(base)
    reports = []
    for i, value in enumerate(values):
        cfg, workload, profile = _sweep_point(axis, value, base_cfg, rides_per_point, seed + i)
        net = build_network(cfg)
        net.trace_enabled = False
        report = run_load(net, workload, profile, seed=seed + i, axis_value=float(value))
        reports.append(report)
    if csv_path is not None:
        export_csv(reports, csv_path)
    return reports


CSV_HEADER = ["axis_value", "peer_ms", "orderer_ms", "event_ms", "tps"]


def export_csv(reports: Sequence[LatencyReport], path: str) -> None:
    if not reports:
        raise HarnessError("nothing to export")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for report in reports:
            writer.writerow(report.row())


def read_csv(path: str) -> list[dict[str, float]]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [{k: float(v) for k, v in row.items()} for row in reader]


# --- trend helpers --------------------------------------------------------------

def slope_r2(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and R^2. A perfectly flat series fits its
    own constant exactly, so it reports (0, 1)."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise HarnessError("need two or more points")
    if len(set(ys)) == 1:
        return 0.0, 1.0
    fit = statistics.linear_regression(xs, ys)
    r = statistics.correlation(xs, ys)
    return fit.slope, r * r


def ks_distance_exponential(samples: Sequence[float], mean_value: float) -> float:
    """Kolmogorov-Smirnov distance from Exp(mean_value), both one-sided
    gaps checked at every step of the empirical CDF."""
    if not samples or mean_value <= 0:
        raise HarnessError("need samples and a positive mean")
    xs = sorted(samples)
    n = len(xs)
    worst = 0.0
    for i, x in enumerate(xs):
        cdf = 1.0 - math.exp(-x / mean_value)
        worst = max(worst, abs((i + 1) / n - cdf), abs(cdf - i / n))
    return worst
