"""Simulated experimental-network domains behind the DOM-IM / DOM-MON contracts."""

from __future__ import annotations

import csv
import io
import threading
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .core import SliceError
from .marketplace import ResourceOffer, ResourceType

INTERFACE_VERSION = "1.0"


class DomainError(SliceError):
    pass


class DomainFailure(DomainError):
    def __init__(self, domain_id: str, detail: str = ""):
        super().__init__(f"domain {domain_id} failed" + (f": {detail}" if detail else ""))
        self.domain_id = domain_id


class UnsupportedType(DomainError):
    pass


class UnknownHandle(DomainError):
    pass


class UnknownSlice(SliceError):
    pass


class OutOfRange(DomainError):
    pass


# --- contracts -----------------------------------------------------------

@dataclass(frozen=True)
class ResourceSpec:
    resource_type: ResourceType
    amount: int
    slice_id: str
    offer_id: str


class DomainInterfaceManager(Protocol):
    """DOM-IM: what the orchestrator needs from any domain adapter."""

    interface_version: str

    def allocate(self, spec: ResourceSpec) -> str: ...

    def deallocate(self, handle: str) -> None: ...

    def health(self) -> bool: ...


class DomainMonitor(Protocol):
    """DOM-MON: per-slice metric collection."""

    interface_version: str

    def poll(self, slice_id: str, timestamp: int) -> "MetricBatch": ...


# --- policies and profiles ------------------------------------------------

@dataclass(frozen=True)
class Never:
    def fails(self, attempt: int, spec: ResourceSpec) -> bool:
        return False


@dataclass(frozen=True)
class FailNth:
    """Only the n-th allocate call (1-based) fails."""

    n: int

    def fails(self, attempt: int, spec: ResourceSpec) -> bool:
        return attempt == self.n


@dataclass(frozen=True)
class FailResourceType:
    resource_type: ResourceType

    def fails(self, attempt: int, spec: ResourceSpec) -> bool:
        return spec.resource_type == ResourceType(self.resource_type)


@dataclass(frozen=True)
class MetricProfile:
    base: float
    jitter: float = 0.0
    # contribution of each allocated unit, e.g. throughput that grows with scale
    per_unit: float = 0.0


@dataclass(frozen=True)
class MetricBatch:
    slice_id: str
    metrics: Mapping[str, float]
    timestamp: int


@dataclass(frozen=True)
class SeriesWindow:
    values: np.ndarray
    start_index: int = 0
    sampling_interval: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or len(values) < 1:
            raise ValueError("a series window needs at least one value")
        if not np.all(np.isfinite(values)):
            raise ValueError("series values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class IngressRecord:
    flow: object
    origin: str
    external: Optional[bool] = None


def _noise(seed: int, *keys) -> float:
    """Uniform draw in [-1, 1] fixed by ``seed`` and ``keys``."""
    entropy = [seed] + [zlib.crc32(str(k).encode()) for k in keys]
    return float(np.random.default_rng(entropy).uniform(-1.0, 1.0))


class SimDomain:
    """A seeded, deterministic domain. All state changes take the domain lock."""

    interface_version = INTERFACE_VERSION

    def __init__(self, domain_id: str, offers: Sequence[ResourceOffer] = (), *,
                 island_count: int = 1, failure_policy=None,
                 metric_profile: Optional[Mapping[str, MetricProfile]] = None,
                 energy_trace: Optional[SeriesWindow] = None, seed: int = 0,
                 ingress_classifier: Optional[Callable[[str], bool]] = None):
        if island_count < 1:
            raise ValueError("island_count must be >= 1")
        self.domain_id = domain_id
        self.island_count = island_count
        self.offers = list(offers)
        self.failure_policy = failure_policy or Never()
        self.metric_profile = dict(metric_profile or {})
        self.energy_trace = energy_trace
        if energy_trace is not None and np.any(energy_trace.values < 0):
            raise ValueError("energy trace values must be >= 0")
        self.seed = seed
        # returns True when an origin is external to the architecture
        self.ingress_classifier = ingress_classifier
        self._lock = threading.RLock()
        self._ledger: dict[str, ResourceSpec] = {}
        self._attempts = 0
        self._next_handle = 1
        self._ingress: deque[IngressRecord] = deque()

    # DOM-IM
    def supported_types(self) -> set[ResourceType]:
        return {o.resource_type for o in self.offers}

    def allocate(self, spec: ResourceSpec) -> str:
        with self._lock:
            if spec.resource_type not in self.supported_types():
                raise UnsupportedType(f"{self.domain_id} does not offer {spec.resource_type.value}")
            self._attempts += 1
            if self.failure_policy.fails(self._attempts, spec):
                raise DomainFailure(self.domain_id, f"allocate attempt {self._attempts}")
            handle = f"{self.domain_id}/h{self._next_handle:05d}"
            self._next_handle += 1
            self._ledger[handle] = spec
            return handle

    def deallocate(self, handle: str) -> None:
        with self._lock:
            if self._ledger.pop(handle, None) is None:
                raise UnknownHandle(handle)

    def health(self) -> bool:
        return True

    @property
    def ledger(self) -> int:
        return len(self._ledger)

    def outstanding(self, slice_id: Optional[str] = None) -> dict[str, ResourceSpec]:
        with self._lock:
            return {h: s for h, s in sorted(self._ledger.items())
                    if slice_id is None or s.slice_id == slice_id}

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "ledger": {h: [s.resource_type.value, s.amount, s.slice_id, s.offer_id]
                           for h, s in sorted(self._ledger.items())},
                "attempts": self._attempts,
                "next_handle": self._next_handle,
            }

    def restore(self, snap: dict) -> None:
        with self._lock:
            self._ledger = {h: ResourceSpec(ResourceType(t), n, sid, oid)
                            for h, (t, n, sid, oid) in snap["ledger"].items()}
            self._attempts = snap["attempts"]
            self._next_handle = snap["next_handle"]

    # DOM-MON
    def poll(self, slice_id: str, timestamp: int) -> MetricBatch:
        units = sum(s.amount for s in self.outstanding(slice_id).values())
        if units == 0:
            raise UnknownSlice(f"{slice_id} has no allocations in {self.domain_id}")
        metrics = {}
        for name, prof in sorted(self.metric_profile.items()):
            value = prof.base + prof.per_unit * units
            if prof.jitter:
                value += prof.jitter * _noise(self.seed, slice_id, name, timestamp)
            metrics[name] = value
        return MetricBatch(slice_id, metrics, timestamp)

    # traffic
    def inject_flows(self, flows: Iterable[object], origin: str) -> None:
        external = None
        if self.ingress_classifier is not None:
            external = bool(self.ingress_classifier(origin))
        with self._lock:
            for flow in flows:
                self._ingress.append(IngressRecord(flow, origin, external))

    def drain_ingress(self, limit: Optional[int] = None) -> list[IngressRecord]:
        out = []
        with self._lock:
            while self._ingress and (limit is None or len(out) < limit):
                out.append(self._ingress.popleft())
        return out

    # energy
    def energy_window(self, start: int, length: int) -> SeriesWindow:
        if self.energy_trace is None:
            raise OutOfRange(f"{self.domain_id} has no energy trace")
        return window(self.energy_trace, start, length)


def window(series: SeriesWindow, start: int, length: int) -> SeriesWindow:
    n = len(series)
    if length < 1 or start < 0 or start + length > n:
        raise OutOfRange(f"window [{start}, {start + length}) outside [0, {n})")
    return SeriesWindow(series.values[start:start + length],
                        series.start_index + start, series.sampling_interval)


# --- energy traces ---------------------------------------------------------

@dataclass(frozen=True)
class EnergyProfile:
    """Daily-seasonal hourly consumption: sinusoid + linear trend + noise (kWh)."""

    base: float
    amplitude: float
    trend: float
    noise: float
    period: int = 24
    phase: float = 0.0


def synthetic_energy_trace(profile: EnergyProfile, length: int, seed: int) -> SeriesWindow:
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=float)
    values = (profile.base
              + profile.amplitude * np.sin(2 * np.pi * t / profile.period + profile.phase)
              + profile.trend * t
              + profile.noise * rng.standard_normal(length))
    return SeriesWindow(np.clip(values, 0.0, None))


class EnergyTraceFormatError(DomainError):
    def __init__(self, line: int, message: str):
        super().__init__(f"energy trace line {line}: {message}")
        self.line = line


def parse_energy_trace(text: str) -> SeriesWindow:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["timestamp", "kwh"]:
        raise EnergyTraceFormatError(1, "header must be timestamp,kwh")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise EnergyTraceFormatError(lineno, "expected 2 fields")
        try:
            v = float(row[1])
        except ValueError:
            raise EnergyTraceFormatError(lineno, f"bad kwh value {row[1]!r}") from None
        if not np.isfinite(v) or v < 0:
            raise EnergyTraceFormatError(lineno, "kwh must be finite and >= 0")
        values.append(v)
    if not values:
        raise EnergyTraceFormatError(2, "no data rows")
    return SeriesWindow(np.array(values))


def load_energy_trace(path: Path) -> SeriesWindow:
    return parse_energy_trace(Path(path).read_text())


def format_energy_trace(series: SeriesWindow) -> str:
    lines = ["timestamp,kwh"]
    for i, v in enumerate(series.values):
        lines.append(f"{series.start_index + i},{float(v)!r}")
    return "\n".join(lines) + "\n"


# --- default federation ------------------------------------------------------

ENERGY_PROFILES = {
    "compute": EnergyProfile(base=120.0, amplitude=35.0, trend=0.02, noise=4.0),
    "iot": EnergyProfile(base=40.0, amplitude=18.0, trend=-0.005, noise=2.5, phase=1.3),
    "fiveg": EnergyProfile(base=80.0, amplitude=10.0, trend=0.01, noise=6.0, phase=2.6),
}

DEFAULT_METRICS = {
    "compute": {"latency_ms": MetricProfile(8.0, 1.5), "throughput_mbps": MetricProfile(20.0, 4.0, per_unit=40.0)},
    "iot": {"latency_ms": MetricProfile(15.0, 3.0), "throughput_mbps": MetricProfile(5.0, 1.0, per_unit=10.0)},
    "fiveg": {"latency_ms": MetricProfile(5.0, 1.0), "throughput_mbps": MetricProfile(50.0, 8.0, per_unit=60.0)},
}


def _offer(oid, rtype, domain, price, renewable, pue, loc, hops, cap):
    return ResourceOffer(oid, ResourceType(rtype), domain, price, renewable, pue, loc, hops, cap)


def default_offers() -> list[ResourceOffer]:
    """Three domains, two islands each, with distinct technology mixes."""
    return [
        _offer("compute-i1-vm", "VM", "compute", 0.9, True, 1.2, (0.0, 1.0), 1, 16),
        _offer("compute-i1-ct", "Container", "compute", 0.3, True, 1.2, (0.0, 1.0), 1, 32),
        _offer("compute-i2-vm", "VM", "compute", 0.6, False, 1.7, (4.0, 3.0), 2, 16),
        _offer("compute-i2-bm", "BareMetal", "compute", 2.5, False, 1.7, (4.0, 3.0), 2, 4),
        _offer("iot-i1-dev", "IoTDevice", "iot", 0.2, True, 1.4, (6.0, 0.0), 3, 20),
        _offer("iot-i1-sw", "SDNSwitch", "iot", 0.5, True, 1.4, (6.0, 0.0), 3, 8),
        _offer("iot-i2-dev", "IoTDevice", "iot", 0.1, False, 2.0, (8.0, 5.0), 4, 30),
        _offer("iot-i2-vm", "VM", "iot", 0.4, False, 2.0, (8.0, 5.0), 4, 8),
        _offer("fiveg-i1-nf", "FiveGFunction", "fiveg", 1.5, True, 1.3, (2.0, 6.0), 2, 10),
        _offer("fiveg-i1-vm", "VM", "fiveg", 1.1, True, 1.3, (2.0, 6.0), 2, 8),
        _offer("fiveg-i2-nf", "FiveGFunction", "fiveg", 1.0, False, 1.9, (5.0, 8.0), 3, 10),
        _offer("fiveg-i2-sw", "SDNSwitch", "fiveg", 0.7, False, 1.9, (5.0, 8.0), 3, 6),
    ]


def default_federation(seed: int = 0, offers: Optional[Sequence[ResourceOffer]] = None,
                       trace_length: int = 24 * 40,
                       energy_traces: Optional[Mapping[str, SeriesWindow]] = None,
                       failure_policies: Optional[Mapping[str, object]] = None) -> dict[str, SimDomain]:
    offers = list(default_offers() if offers is None else offers)
    energy_traces = dict(energy_traces or {})
    failure_policies = dict(failure_policies or {})
    domains = {}
    names = sorted({o.owner_domain for o in offers})
    for i, name in enumerate(names):
        own = [o for o in offers if o.owner_domain == name]
        profile = ENERGY_PROFILES.get(name, EnergyProfile(60.0, 15.0, 0.0, 3.0, phase=0.7 * i))
        trace = energy_traces.get(name) or synthetic_energy_trace(profile, trace_length, seed + 101 * (i + 1))
        domains[name] = SimDomain(
            name, own, island_count=2,
            failure_policy=failure_policies.get(name),
            metric_profile=DEFAULT_METRICS.get(name, DEFAULT_METRICS["compute"]),
            energy_trace=trace, seed=seed + 7 * (i + 1),
        )
    return domains
