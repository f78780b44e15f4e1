"""Domain types and the slice lifecycle state machine."""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional


class SliceError(Exception):
    """Base class for every error raised by the orchestration stack."""


class IllegalTransition(SliceError):
    def __init__(self, phase: "LifecyclePhase", event: "LifecycleEvent"):
        super().__init__(f"no transition from {phase.value} on {event.value}")
        self.phase = phase
        self.event = event


class MissingMetric(SliceError):
    def __init__(self, name: str):
        super().__init__(f"KPI {name!r} was never observed")
        self.name = name


class InvalidIntent(SliceError):
    pass


class LifecyclePhase(str, Enum):
    PREPARATION = "Preparation"
    COMMISSIONING = "Commissioning"
    OPERATION = "Operation"
    DECOMMISSIONING = "Decommissioning"
    TERMINATED = "Terminated"


class LifecycleEvent(str, Enum):
    BUILD_SUCCEEDED = "BuildSucceeded"
    INSTANTIATE_SUCCEEDED = "InstantiateSucceeded"
    DECOMMISSION_REQUESTED = "DecommissionRequested"
    TEARDOWN_COMPLETE = "TeardownComplete"
    BUILD_FAILED = "BuildFailed"
    INSTANTIATE_FAILED = "InstantiateFailed"


_P = LifecyclePhase
_E = LifecycleEvent

TRANSITIONS: dict[tuple[LifecyclePhase, LifecycleEvent], LifecyclePhase] = {
    (_P.PREPARATION, _E.BUILD_SUCCEEDED): _P.COMMISSIONING,
    (_P.COMMISSIONING, _E.INSTANTIATE_SUCCEEDED): _P.OPERATION,
    (_P.PREPARATION, _E.BUILD_FAILED): _P.DECOMMISSIONING,
    (_P.PREPARATION, _E.DECOMMISSION_REQUESTED): _P.DECOMMISSIONING,
    (_P.COMMISSIONING, _E.INSTANTIATE_FAILED): _P.DECOMMISSIONING,
    (_P.COMMISSIONING, _E.DECOMMISSION_REQUESTED): _P.DECOMMISSIONING,
    (_P.OPERATION, _E.DECOMMISSION_REQUESTED): _P.DECOMMISSIONING,
    (_P.DECOMMISSIONING, _E.TEARDOWN_COMPLETE): _P.TERMINATED,
}


class Comparator(str, Enum):
    LE = "<="
    GE = ">="

    def holds(self, observed: float, threshold: float) -> bool:
        # inclusive at the boundary
        op = operator.le if self is Comparator.LE else operator.ge
        return op(observed, threshold)


@dataclass(frozen=True)
class Demand:
    resource_type: str
    quantity: int
    unit_capacity: int = 1


@dataclass(frozen=True)
class KppTarget:
    threshold: float
    comparator: Comparator
    # index of the demand that scales when this metric is violated
    elastic_demand: Optional[int] = None


@dataclass(frozen=True)
class SustainabilityConstraints:
    require_renewable: bool = False
    max_pue: Optional[float] = None


@dataclass(frozen=True)
class IntentDescriptor:
    tenant_id: str
    demands: tuple[Demand, ...]
    kpp_targets: Mapping[str, KppTarget] = field(default_factory=dict)
    sustainability: SustainabilityConstraints = SustainabilityConstraints()
    weight_overrides: Optional[Mapping[str, float]] = None
    max_price_per_hour: Optional[float] = None
    location: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.tenant_id:
            raise InvalidIntent("tenant-id must be non-empty")
        if not self.demands:
            raise InvalidIntent("at least one demand is required")
        for i, d in enumerate(self.demands):
            if d.quantity < 1:
                raise InvalidIntent(f"demand {i}: quantity must be >= 1")
            if d.unit_capacity < 1:
                raise InvalidIntent(f"demand {i}: unit capacity must be >= 1")
        for name, kpp in self.kpp_targets.items():
            if not math.isfinite(kpp.threshold):
                raise InvalidIntent(f"kpp {name}: threshold must be finite")
            if kpp.elastic_demand is not None and not 0 <= kpp.elastic_demand < len(self.demands):
                raise InvalidIntent(f"kpp {name}: elastic demand index out of range")
        max_pue = self.sustainability.max_pue
        if max_pue is not None and not max_pue >= 1.0:
            raise InvalidIntent("max-pue must be >= 1.0")
        if self.max_price_per_hour is not None and not self.max_price_per_hour >= 0:
            raise InvalidIntent("max-price-per-hour must be >= 0")

    def to_dict(self) -> dict:
        return {
            "tenant_id": self.tenant_id,
            "demands": [[d.resource_type, d.quantity, d.unit_capacity] for d in self.demands],
            "kpp_targets": {
                k: [v.threshold, v.comparator.value, v.elastic_demand]
                for k, v in sorted(self.kpp_targets.items())
            },
            "require_renewable": self.sustainability.require_renewable,
            "max_pue": self.sustainability.max_pue,
            "weight_overrides": dict(self.weight_overrides) if self.weight_overrides else None,
            "max_price_per_hour": self.max_price_per_hour,
            "location": list(self.location),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntentDescriptor":
        return cls(
            tenant_id=d["tenant_id"],
            demands=tuple(Demand(t, q, u) for t, q, u in d["demands"]),
            kpp_targets={
                k: KppTarget(th, Comparator(c), el) for k, (th, c, el) in d["kpp_targets"].items()
            },
            sustainability=SustainabilityConstraints(d["require_renewable"], d["max_pue"]),
            weight_overrides=d["weight_overrides"],
            max_price_per_hour=d["max_price_per_hour"],
            location=tuple(d["location"]),
        )


@dataclass(frozen=True)
class Grant:
    """One DOM-IM allocation backing part of a slice allocation."""

    handle: str
    demand_index: int
    amount: int
    reservation_id: str
    seq: int


@dataclass(frozen=True)
class DomainAllocation:
    domain_id: str
    offer_id: str
    grants: tuple[Grant, ...]

    @property
    def amount(self) -> int:
        return sum(g.amount for g in self.grants)

    @property
    def domain_handle(self) -> str:
        return self.grants[0].handle


@dataclass(frozen=True)
class SliceRecord:
    slice_id: str
    phase: LifecyclePhase
    intent: IntentDescriptor
    created_at: int
    phase_entered_at: int
    blueprint: Optional[object] = None  # builder.AllocationPlan
    allocations: tuple[DomainAllocation, ...] = ()
    kpi_snapshot: Mapping[str, float] = field(default_factory=dict)
    demand_quantities: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.demand_quantities:
            object.__setattr__(
                self, "demand_quantities", tuple(d.quantity for d in self.intent.demands)
            )

    def allocation_for(self, offer_id: str) -> Optional[DomainAllocation]:
        for a in self.allocations:
            if a.offer_id == offer_id:
                return a
        return None


def advance_lifecycle(slice_: SliceRecord, event: LifecycleEvent, now: int) -> SliceRecord:
    """Return a copy of ``slice_`` moved along the transition for ``event``.

    Raises IllegalTransition (leaving the input untouched) for any pair not
    in ``TRANSITIONS``; Terminated has no outgoing edges.
    """
    event = LifecycleEvent(event)
    target = TRANSITIONS.get((slice_.phase, event))
    if target is None:
        raise IllegalTransition(slice_.phase, event)
    return replace(slice_, phase=target, phase_entered_at=now)


@dataclass(frozen=True)
class Violated:
    observed: float
    threshold: float


CONFORMANT = "Conformant"


@dataclass(frozen=True)
class ConformanceReport:
    per_metric: Mapping[str, object]  # CONFORMANT or Violated

    @property
    def overall(self) -> bool:
        return all(v == CONFORMANT for v in self.per_metric.values())

    @property
    def violations(self) -> dict[str, Violated]:
        return {k: v for k, v in sorted(self.per_metric.items()) if isinstance(v, Violated)}


def check_conformance(kpis: Mapping[str, float], kpps: Mapping[str, KppTarget]) -> ConformanceReport:
    per_metric = {}
    for name in sorted(kpps):
        if name not in kpis:
            raise MissingMetric(name)
        target = kpps[name]
        observed = kpis[name]
        if target.comparator.holds(observed, target.threshold):
            per_metric[name] = CONFORMANT
        else:
            per_metric[name] = Violated(observed, target.threshold)
    return ConformanceReport(per_metric)


class LogicalClock:
    """Monotonic counter standing in for wall-clock time."""

    def __init__(self, start: int = 0):
        self._now = start

    @property
    def now(self) -> int:
        return self._now

    def tick(self) -> int:
        self._now += 1
        return self._now

    def advance_to(self, t: int) -> None:
        if t > self._now:
            self._now = t
