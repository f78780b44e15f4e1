"""End-to-end slice orchestration: build, instantiate, supervise, actuate, decommission.

Every state change is an event. ``_emit`` applies an event to the live
components (marketplace, domains, slice table) and then appends it to the
slice store; recovery re-executes the logged events against fresh components
and checks each recorded outcome (reservation id, domain handle, failure) is
reproduced.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

from .builder import (DEFAULT_HOP_COST, AllocationPlan, Assignment, Infeasible, ScoringWeights,
                      eligible_offers, score_offer, select_resources)
from .core import (Comparator, DomainAllocation, Grant, IntentDescriptor, LifecycleEvent,
                   LifecyclePhase, SliceError, SliceRecord, advance_lifecycle, check_conformance)
from .domains import DomainError, DomainFailure, ResourceSpec, UnknownSlice
from .marketplace import Marketplace, MarketplaceError
from .security import (ACTIVITY, AttackCategory, NotAuthorized, Principal, PrincipalKind,
                       SecurityServices, kv)
from .store import SliceStore

_P = LifecyclePhase
_E = LifecycleEvent

ORCHESTRATOR = "orchestrator"
CREATE_ACTION = "create-slice"
DECOMMISSION_ACTION = "decommission-slice"


# event fields produced by applying the event rather than supplied to it
_RESULT_KEYS = {"reserve": ("reservation_id",), "allocate": ("handle",)}


class SliceNotOperational(SliceError):
    pass


class AlreadyTerminated(UnknownSlice):
    pass


class InvalidAction(SliceError):
    pass


class ReplayMismatch(SliceError):
    pass


# --- supervision actions --------------------------------------------------------

@dataclass(frozen=True)
class ScaleUp:
    demand_index: int
    delta: int = 1

    def __post_init__(self):
        if self.delta < 1:
            raise InvalidAction("delta must be >= 1")

    def __str__(self):
        return f"ScaleUp({self.demand_index},{self.delta})"


@dataclass(frozen=True)
class ScaleDown:
    demand_index: int
    delta: int = 1

    def __post_init__(self):
        if self.delta < 1:
            raise InvalidAction("delta must be >= 1")

    def __str__(self):
        return f"ScaleDown({self.demand_index},{self.delta})"


@dataclass(frozen=True)
class Migrate:
    source_offer: str
    target_offer: str

    def __str__(self):
        return f"Migrate({self.source_offer},{self.target_offer})"


@dataclass(frozen=True)
class RaiseAlert:
    metric: str
    source: str = "kpi"

    def __str__(self):
        return f"RaiseAlert({self.metric},{self.source})"


SupervisionAction = (ScaleUp, ScaleDown, Migrate, RaiseAlert)
_ACTIONS = {cls.__name__: cls for cls in SupervisionAction}


def action_to_dict(action) -> dict:
    return {"kind": type(action).__name__, **action.__dict__}


def action_from_dict(d: dict):
    d = dict(d)
    return _ACTIONS[d.pop("kind")](**d)


# --- (de)serialization of slice records -------------------------------------------

def slice_to_dict(rec: SliceRecord) -> dict:
    return {
        "slice_id": rec.slice_id,
        "phase": rec.phase.value,
        "intent": rec.intent.to_dict(),
        "created_at": rec.created_at,
        "phase_entered_at": rec.phase_entered_at,
        "blueprint": rec.blueprint.to_dict() if rec.blueprint is not None else None,
        "allocations": [
            [a.domain_id, a.offer_id,
             [[g.handle, g.demand_index, g.amount, g.reservation_id, g.seq] for g in a.grants]]
            for a in rec.allocations
        ],
        "kpi_snapshot": dict(sorted(rec.kpi_snapshot.items())),
        "demand_quantities": list(rec.demand_quantities),
    }


def slice_from_dict(d: dict) -> SliceRecord:
    return SliceRecord(
        slice_id=d["slice_id"],
        phase=LifecyclePhase(d["phase"]),
        intent=IntentDescriptor.from_dict(d["intent"]),
        created_at=d["created_at"],
        phase_entered_at=d["phase_entered_at"],
        blueprint=AllocationPlan.from_dict(d["blueprint"]) if d["blueprint"] is not None else None,
        allocations=tuple(
            DomainAllocation(dom, oid, tuple(Grant(*g) for g in grants))
            for dom, oid, grants in d["allocations"]
        ),
        kpi_snapshot=dict(d["kpi_snapshot"]),
        demand_quantities=tuple(d["demand_quantities"]),
    )


def _grants(rec: SliceRecord) -> list[Grant]:
    return sorted((g for a in rec.allocations for g in a.grants), key=lambda g: g.seq)


def _with_grant(rec: SliceRecord, domain_id: str, offer_id: str, grant: Grant) -> SliceRecord:
    allocs = list(rec.allocations)
    for i, a in enumerate(allocs):
        if a.offer_id == offer_id:
            allocs[i] = replace(a, grants=a.grants + (grant,))
            break
    else:
        allocs.append(DomainAllocation(domain_id, offer_id, (grant,)))
    return replace(rec, allocations=tuple(allocs))


def _without_grant(rec: SliceRecord, handle: str) -> tuple[SliceRecord, Grant, str]:
    allocs = []
    found = None
    for a in rec.allocations:
        keep = tuple(g for g in a.grants if g.handle != handle)
        if len(keep) != len(a.grants):
            found = (next(g for g in a.grants if g.handle == handle), a.offer_id)
        if keep:
            allocs.append(replace(a, grants=keep))
    if found is None:
        raise SliceError(f"{rec.slice_id} holds no grant {handle}")
    return replace(rec, allocations=tuple(allocs)), found[0], found[1]


# --- orchestrator ------------------------------------------------------------------

class Orchestrator:
    """Slice life cycle over a marketplace and a set of DOM-IM/DOM-MON adapters.

    Operations on one slice are serialized by a per-slice lock; individual
    events are serialized globally so the log order is the apply order.
    """

    def __init__(self, marketplace: Marketplace, domains: Mapping[str, object],
                 security: SecurityServices, *, store: Optional[SliceStore] = None,
                 weights: Optional[ScoringWeights] = None, hop_cost: float = DEFAULT_HOP_COST,
                 reference_mode: str = "anchored"):
        self.marketplace = marketplace
        self.domains = dict(domains)
        self.security = security
        self.clock = security.audit.clock
        self.store = store
        self.weights = weights or ScoringWeights()
        self.hop_cost = hop_cost
        self.reference_mode = reference_mode
        # called with each event after it is logged (tests use it to capture states)
        self.on_event: Optional[Callable[[dict], None]] = None

        self._slices: dict[str, SliceRecord] = {}
        # reservations taken but not (or no longer) backing a domain allocation
        self._pending: dict[str, list[list]] = {}
        self._alerts: dict[str, list[str]] = {}
        self._grant_seq: dict[str, int] = {}
        self._next_slice = 1
        self.event_count = 0

        self._emit_lock = threading.RLock()
        self._placement_lock = threading.Lock()
        self._registry_lock = threading.Lock()
        self._slice_locks: dict[str, threading.RLock] = {}
        if store is not None:
            self._recover()

    # -- events ---------------------------------------------------------------

    def _emit(self, kind: str, **payload) -> dict:
        with self._emit_lock:
            event = {"kind": kind, "t": self.clock.now, **payload}
            try:
                result = self._apply(event)
            except (DomainError, MarketplaceError) as exc:
                if kind not in ("reserve", "allocate"):
                    raise
                event["error"] = type(exc).__name__
                self._log(event)
                raise
            event.update(result)
            self._log(event)
            return event

    def _log(self, event: dict) -> None:
        self.event_count += 1
        if self.store is not None:
            self.store.append(event, state_fn=self.state_dict)
        if self.on_event is not None:
            self.on_event(event)

    def _apply(self, e: dict) -> dict:
        kind = e["kind"]
        sid = e["slice_id"]
        if kind == "slice_opened":
            intent = IntentDescriptor.from_dict(e["intent"])
            self._slices[sid] = SliceRecord(sid, _P.PREPARATION, intent, e["t"], e["t"])
            self._pending[sid] = []
            self._alerts[sid] = []
            self._grant_seq[sid] = 0
            self._next_slice = int(sid[1:]) + 1
            return {}
        rec = self._slices[sid]
        if kind == "phase_event":
            self._slices[sid] = advance_lifecycle(rec, LifecycleEvent(e["event"]), e["t"])
        elif kind == "plan_built" or kind == "plan_updated":
            self._slices[sid] = replace(rec, blueprint=AllocationPlan.from_dict(e["plan"]))
        elif kind == "reserve":
            uc = rec.intent.demands[e["demand_index"]].unit_capacity
            res = self.marketplace.reserve(e["offer_id"], e["units"] * uc, holder=sid)
            self._pending[sid].append([res.reservation_id, e["demand_index"], e["offer_id"], e["units"]])
            return {"reservation_id": res.reservation_id}
        elif kind == "release":
            entry = self._pending_entry(sid, e["reservation_id"])
            units = e.get("units") or entry[3]
            uc = rec.intent.demands[entry[1]].unit_capacity
            self.marketplace.release(entry[0], None if units == entry[3] else units * uc)
            if units == entry[3]:
                self._pending[sid].remove(entry)
            else:
                entry[3] -= units
        elif kind == "allocate":
            entry = self._pending_entry(sid, e["reservation_id"])
            rid, d, offer_id, units = entry
            offer = self.marketplace.get(offer_id)
            domain = self.domains.get(offer.owner_domain)
            if domain is None:
                raise DomainFailure(offer.owner_domain, "no interface manager registered")
            uc = rec.intent.demands[d].unit_capacity
            handle = domain.allocate(ResourceSpec(offer.resource_type, units * uc, sid, offer_id))
            seq = self._grant_seq[sid] + 1
            self._grant_seq[sid] = seq
            self._pending[sid].remove(entry)
            self._slices[sid] = _with_grant(rec, offer.owner_domain, offer_id,
                                            Grant(handle, d, units, rid, seq))
            return {"handle": handle}
        elif kind == "deallocate":
            new, grant, offer_id = _without_grant(rec, e["handle"])
            domain_id = next(a.domain_id for a in rec.allocations if a.offer_id == offer_id)
            self.domains[domain_id].deallocate(grant.handle)
            self._slices[sid] = new
            self._pending[sid].append([grant.reservation_id, grant.demand_index, offer_id, grant.amount])
        elif kind == "demand_changed":
            q = list(rec.demand_quantities)
            q[e["demand_index"]] = e["quantity"]
            self._slices[sid] = replace(rec, demand_quantities=tuple(q))
        elif kind == "kpis_observed":
            self._slices[sid] = replace(rec, kpi_snapshot=dict(e["kpis"]))
        elif kind == "app_alert":
            self._alerts[sid].append(e["metric"])
        elif kind == "actions_proposed":
            self._alerts[sid] = []
        else:
            raise SliceError(f"unknown event kind {kind!r}")
        return {}

    def _pending_entry(self, sid: str, rid: str) -> list:
        for entry in self._pending[sid]:
            if entry[0] == rid:
                return entry
        raise SliceError(f"{sid} holds no unallocated reservation {rid}")

    def _replay(self, e: dict) -> None:
        self.clock.advance_to(e["t"])
        outputs = _RESULT_KEYS.get(e["kind"], ()) + ("error",)
        probe = {k: v for k, v in e.items() if k not in outputs}
        try:
            result = self._apply(probe)
        except (DomainError, MarketplaceError) as exc:
            if e.get("error") != type(exc).__name__:
                raise ReplayMismatch(f"{e['kind']} raised {type(exc).__name__} on replay") from exc
            self.event_count += 1
            return
        if "error" in e:
            raise ReplayMismatch(f"{e['kind']} succeeded on replay but failed originally")
        for key, value in result.items():
            if e.get(key) != value:
                raise ReplayMismatch(f"{e['kind']}: {key} {value!r} != logged {e.get(key)!r}")
        self.event_count += 1

    def _recover(self) -> None:
        after = 0
        snap = self.store.latest_snapshot()
        if snap is not None:
            after, state = snap
            self.load_state(state)
        for event in self.store.events(after):
            self._replay(event)

    def state_dict(self) -> dict:
        with self._emit_lock:
            return {
                "clock": self.clock.now,
                "events": self.event_count,
                "next_slice": self._next_slice,
                "slices": {sid: slice_to_dict(r) for sid, r in sorted(self._slices.items())},
                "pending": {sid: [list(p) for p in v] for sid, v in sorted(self._pending.items())},
                "alerts": {sid: list(v) for sid, v in sorted(self._alerts.items())},
                "grant_seq": dict(sorted(self._grant_seq.items())),
                "marketplace": self.marketplace.snapshot(),
                "domains": {name: d.snapshot() for name, d in sorted(self.domains.items())},
            }

    def load_state(self, state: dict) -> None:
        self.clock.advance_to(state["clock"])
        self.event_count = state["events"]
        self._next_slice = state["next_slice"]
        self._slices = {sid: slice_from_dict(d) for sid, d in state["slices"].items()}
        self._pending = {sid: [list(p) for p in v] for sid, v in state["pending"].items()}
        self._alerts = {sid: list(v) for sid, v in state["alerts"].items()}
        self._grant_seq = dict(state["grant_seq"])
        self.marketplace.restore(state["marketplace"])
        for name, snap in state["domains"].items():
            self.domains[name].restore(snap)

    # -- helpers -----------------------------------------------------------------

    def _lock_for(self, sid: str) -> threading.RLock:
        with self._registry_lock:
            return self._slice_locks.setdefault(sid, threading.RLock())

    def get(self, sid: str) -> SliceRecord:
        try:
            return self._slices[sid]
        except KeyError:
            raise UnknownSlice(sid) from None

    def slices(self) -> list[SliceRecord]:
        return [self._slices[k] for k in sorted(self._slices)]

    def pending_reservations(self, sid: str) -> list[tuple]:
        return [tuple(p) for p in self._pending.get(sid, [])]

    def _activity(self, sid: str, op: str, principal: str = ORCHESTRATOR, **fields) -> int:
        audit = self.security.audit
        step = len(audit.query(category=ACTIVITY, slice_id=sid)) + 1
        rec = self._slices.get(sid)
        return audit.append(ACTIVITY, rec.phase if rec else None, principal,
                            kv(slice=sid, step=step, op=op, **fields))

    def _authorize(self, principal: Optional[Principal], action: str, target: str,
                   token: Optional[str], phase: Optional[LifecyclePhase]) -> None:
        self.security.iam.authorize(principal, action, target, phase)
        if token is not None:
            self.security.iam.validate_token(token, action, target, phase)

    def _phase(self, sid: str, event: LifecycleEvent) -> None:
        self._emit("phase_event", slice_id=sid, event=event.value)

    def _undo_since(self, sid: str, grant_seq: int, pending_before: set) -> None:
        """Compensate every grant newer than ``grant_seq`` and every new reservation."""
        for g in reversed(_grants(self._slices[sid])):
            if g.seq > grant_seq:
                self._emit("deallocate", slice_id=sid, handle=g.handle)
        for entry in list(self._pending[sid]):
            if entry[0] not in pending_before:
                self._emit("release", slice_id=sid, reservation_id=entry[0])

    def _teardown(self, sid: str) -> None:
        self._undo_since(sid, 0, set())

    def _fail(self, sid: str, event: LifecycleEvent) -> None:
        self._phase(sid, event)
        self._teardown(sid)
        self._phase(sid, _E.TEARDOWN_COMPLETE)

    def _reserve_plan(self, sid: str, plan: AllocationPlan) -> list[str]:
        rids = []
        for a in plan.assignments:
            ev = self._emit("reserve", slice_id=sid, offer_id=a.offer_id,
                            demand_index=a.demand_index, units=a.amount)
            rids.append(ev["reservation_id"])
        return rids

    def _allocate(self, sid: str, rids: Sequence[str]) -> None:
        for rid in rids:
            self._emit("allocate", slice_id=sid, reservation_id=rid)

    def current_plan(self, sid: str) -> AllocationPlan:
        """Plan view of the slice's live grants, one assignment per (demand, offer)."""
        rec = self.get(sid)
        weights = self.weights.with_overrides(rec.intent.weight_overrides)
        amounts: dict[tuple[int, str], int] = {}
        for g in _grants(rec):
            offer_id = next(a.offer_id for a in rec.allocations if g in a.grants)
            key = (g.demand_index, offer_id)
            amounts[key] = amounts.get(key, 0) + g.amount
        offers = {oid: self.marketplace.get(oid) for _, oid in amounts}
        assignments = tuple(
            Assignment(d, oid, n, score_offer(offers[oid], weights, rec.intent.location, self.hop_cost))
            for (d, oid), n in sorted(amounts.items())
        )
        return AllocationPlan(
            assignments,
            offer_facts={k: (o.renewable, o.owner_domain, o.pue) for k, o in offers.items()},
            prices={k: o.price_per_hour for k, o in offers.items()},
        )

    def validate_plan(self, sid: str) -> None:
        """Grants cover each demand exactly, with offers of the right type and constraints."""
        rec = self.get(sid)
        if len({a.offer_id for a in rec.allocations}) != len(rec.allocations):
            raise SliceError(f"{sid}: more than one allocation entry per offer")
        held = [0] * len(rec.intent.demands)
        for a in rec.allocations:
            offer = self.marketplace.get(a.offer_id)
            for g in a.grants:
                demand = rec.intent.demands[g.demand_index]
                ok, _ = eligible_offers(demand, rec.intent, [offer])
                if not ok:
                    raise SliceError(f"{sid}: offer {a.offer_id} does not fit demand {g.demand_index}")
                held[g.demand_index] += g.amount
        if rec.phase is _P.OPERATION and tuple(held) != rec.demand_quantities:
            raise SliceError(f"{sid}: grants {held} do not match demands {list(rec.demand_quantities)}")

    # -- creation ------------------------------------------------------------------

    def _open(self, intent: IntentDescriptor) -> str:
        with self._emit_lock:
            sid = f"S{self._next_slice:04d}"
            self._emit("slice_opened", slice_id=sid, intent=intent.to_dict())
        return sid

    def _build(self, sid: str) -> None:
        rec = self.get(sid)
        with self._placement_lock:
            try:
                plan = select_resources(rec.intent, self.marketplace.query_offers(), self.weights,
                                        hop_cost=self.hop_cost, reference_mode=self.reference_mode)
            except Infeasible:
                self._fail(sid, _E.BUILD_FAILED)
                raise
            self._emit("plan_built", slice_id=sid, plan=plan.to_dict())
            try:
                self._reserve_plan(sid, plan)
            except MarketplaceError:
                self._fail(sid, _E.BUILD_FAILED)
                raise
        self._phase(sid, _E.BUILD_SUCCEEDED)

    def _instantiate(self, sid: str) -> None:
        try:
            self._allocate(sid, [p[0] for p in self._pending[sid]])
        except DomainError:
            self._fail(sid, _E.INSTANTIATE_FAILED)
            raise
        self._phase(sid, _E.INSTANTIATE_SUCCEEDED)

    def create_slice(self, intent: IntentDescriptor, principal: Optional[Principal],
                     token: Optional[str] = None) -> str:
        """End-to-end creation: authorize, persist, build, reserve, allocate per domain.

        On failure every reservation and allocation made so far is undone, the
        slice ends Terminated and the error is re-raised with ``slice_id`` set.
        """
        self._authorize(principal, CREATE_ACTION, ORCHESTRATOR, token, _P.PREPARATION)
        sid = self._open(intent)
        with self._lock_for(sid):
            try:
                self._build(sid)
                self._instantiate(sid)
            except SliceError as exc:
                exc.slice_id = sid
                self._activity(sid, "create", principal.principal_id, outcome="failed",
                               error=type(exc).__name__)
                raise
            self._activity(sid, "create", principal.principal_id, outcome="ok",
                           domains=",".join(a.domain_id for a in self.get(sid).allocations))
        return sid

    # step-wise variants, so a slice can be held in Preparation or Commissioning
    def open_slice(self, intent: IntentDescriptor, principal: Optional[Principal],
                   token: Optional[str] = None) -> str:
        self._authorize(principal, CREATE_ACTION, ORCHESTRATOR, token, _P.PREPARATION)
        sid = self._open(intent)
        self._activity(sid, "open", principal.principal_id, outcome="ok")
        return sid

    def _step(self, sid: str, op: str, fn: Callable[[str], None]) -> None:
        with self._lock_for(sid):
            try:
                fn(sid)
            except SliceError as exc:
                self._activity(sid, op, outcome="failed", error=type(exc).__name__)
                raise
            self._activity(sid, op, outcome="ok")

    def build_slice(self, sid: str) -> None:
        if self.get(sid).phase is not _P.PREPARATION:
            raise InvalidAction(f"{sid} is not in Preparation")
        self._step(sid, "build", self._build)

    def instantiate_slice(self, sid: str) -> None:
        if self.get(sid).phase is not _P.COMMISSIONING:
            raise InvalidAction(f"{sid} is not in Commissioning")
        self._step(sid, "instantiate", self._instantiate)

    # -- supervision ---------------------------------------------------------------

    def app_mon_alert(self, sid: str, metric: str) -> None:
        """APP-MON notification; surfaces as RaiseAlert on the next tick."""
        if self.get(sid).phase is not _P.OPERATION:
            raise SliceNotOperational(sid)
        self._emit("app_alert", slice_id=sid, metric=metric)

    def _collect(self, rec: SliceRecord) -> dict[str, float]:
        """Poll every domain holding part of the slice; keep the worst value per metric."""
        samples: dict[str, list[float]] = {}
        for domain_id in sorted({a.domain_id for a in rec.allocations}):
            batch = self.domains[domain_id].poll(rec.slice_id, self.clock.now)
            for name, value in batch.metrics.items():
                samples.setdefault(name, []).append(float(value))
        kpis = {}
        for name, values in sorted(samples.items()):
            kpp = rec.intent.kpp_targets.get(name)
            higher_is_better = kpp is not None and kpp.comparator is Comparator.GE
            kpis[name] = min(values) if higher_is_better else max(values)
        return kpis

    def supervise_tick(self, sid: str) -> list:
        with self._lock_for(sid):
            rec = self.get(sid)
            if rec.phase is not _P.OPERATION:
                raise SliceNotOperational(f"{sid} is in {rec.phase.value}")
            with self._emit_lock:
                # each poll gets a fresh logical timestamp
                self.clock.tick()
            kpis = self._collect(rec)
            self._emit("kpis_observed", slice_id=sid, kpis=kpis)
            report = check_conformance(kpis, rec.intent.kpp_targets)
            actions = []
            for name in report.violations:
                kpp = rec.intent.kpp_targets[name]
                if kpp.elastic_demand is not None:
                    actions.append(ScaleUp(kpp.elastic_demand, 1))
                else:
                    actions.append(RaiseAlert(name))
            actions.extend(RaiseAlert(m, "app-mon") for m in self._alerts[sid])
            self._emit("actions_proposed", slice_id=sid, actions=[action_to_dict(a) for a in actions])
            self._activity(sid, "tick", violations=len(report.violations),
                           actions=";".join(str(a) for a in actions) or "-")
            return actions

    def apply_action(self, sid: str, action, principal: str = ORCHESTRATOR):
        with self._lock_for(sid):
            rec = self.get(sid)
            if rec.phase is not _P.OPERATION:
                raise SliceNotOperational(f"{sid} is in {rec.phase.value}")
            if isinstance(action, RaiseAlert):
                self._activity(sid, "action", principal, action=str(action), outcome="alert")
                return rec
            try:
                if isinstance(action, ScaleUp):
                    extra = self._scale_up(sid, action)
                elif isinstance(action, ScaleDown):
                    extra = self._scale_down(sid, action)
                elif isinstance(action, Migrate):
                    extra = self._migrate(sid, action)
                else:
                    raise InvalidAction(f"unknown action {action!r}")
            except Infeasible as exc:
                self._activity(sid, "action", principal, action=str(action), outcome="infeasible",
                               alert="yes", reason=exc.reason)
                raise
            except (DomainError, MarketplaceError) as exc:
                self._refresh_plan(sid)
                self._activity(sid, "action", principal, action=str(action), outcome="failed",
                               error=type(exc).__name__)
                raise
            self._refresh_plan(sid)
            self.validate_plan(sid)
            self._activity(sid, "action", principal, action=str(action), outcome="ok", **extra)
            return self.get(sid)

    def _refresh_plan(self, sid: str) -> None:
        plan = self.current_plan(sid)
        if plan != self.get(sid).blueprint:
            self._emit("plan_updated", slice_id=sid, plan=plan.to_dict())

    def _check_demand(self, rec: SliceRecord, d: int) -> None:
        if not 0 <= d < len(rec.intent.demands):
            raise InvalidAction(f"demand index {d} out of range")

    def _domains_for(self, rec: SliceRecord, d: int) -> set[str]:
        return {a.domain_id for a in rec.allocations for g in a.grants if g.demand_index == d}

    def _scale_up(self, sid: str, action: ScaleUp) -> dict:
        rec = self.get(sid)
        d = action.demand_index
        self._check_demand(rec, d)
        before_seq = self._grant_seq[sid]
        before_pending = {p[0] for p in self._pending[sid]}
        quantities = [0] * len(rec.intent.demands)
        quantities[d] = action.delta
        with self._placement_lock:
            plan = select_resources(rec.intent, self.marketplace.query_offers(), self.weights,
                                    hop_cost=self.hop_cost, demand_quantities=quantities,
                                    reference_mode=self.reference_mode)
            try:
                rids = self._reserve_plan(sid, plan)
            except MarketplaceError:
                self._undo_since(sid, before_seq, before_pending)
                raise
        try:
            self._allocate(sid, rids)
        except DomainError:
            self._undo_since(sid, before_seq, before_pending)
            raise
        self._emit("demand_changed", slice_id=sid, demand_index=d,
                   quantity=rec.demand_quantities[d] + action.delta)
        new_domains = {plan.offer_facts[a.offer_id][1] for a in plan.assignments}
        cross = bool(new_domains - self._domains_for(rec, d))
        return {"cross_domain": "yes" if cross else "no"}

    def _scale_down(self, sid: str, action: ScaleDown) -> dict:
        """Give back ``delta`` units of a demand, newest grants first."""
        rec = self.get(sid)
        d = action.demand_index
        self._check_demand(rec, d)
        if rec.demand_quantities[d] - action.delta < 1:
            raise InvalidAction(f"demand {d} would drop below one unit")
        remaining = action.delta
        for g in reversed([g for g in _grants(rec) if g.demand_index == d]):
            if remaining == 0:
                break
            take = min(g.amount, remaining)
            self._emit("deallocate", slice_id=sid, handle=g.handle)
            if take == g.amount:
                self._emit("release", slice_id=sid, reservation_id=g.reservation_id)
            else:
                self._emit("release", slice_id=sid, reservation_id=g.reservation_id, units=take)
                try:
                    self._emit("allocate", slice_id=sid, reservation_id=g.reservation_id)
                except DomainError:
                    # the shrunk grant could not be re-established: give it all back
                    self._emit("release", slice_id=sid, reservation_id=g.reservation_id)
                    self._emit("demand_changed", slice_id=sid, demand_index=d,
                               quantity=sum(x.amount for x in _grants(self.get(sid))
                                            if x.demand_index == d))
                    raise
            remaining -= take
        self._emit("demand_changed", slice_id=sid, demand_index=d,
                   quantity=rec.demand_quantities[d] - action.delta)
        return {}

    def _migrate(self, sid: str, action: Migrate) -> dict:
        """Move every grant on one offer to another; the new grants exist before the old go."""
        rec = self.get(sid)
        source = rec.allocation_for(action.source_offer)
        if source is None:
            raise InvalidAction(f"{sid} holds nothing on {action.source_offer}")
        if action.target_offer == action.source_offer:
            raise InvalidAction("source and target offer are the same")
        target = self.marketplace.get(action.target_offer)
        need = 0
        for g in source.grants:
            demand = rec.intent.demands[g.demand_index]
            _, reason = eligible_offers(demand, rec.intent, [target])
            if reason is not None:
                raise Infeasible(g.demand_index, reason)
            need += g.amount * demand.unit_capacity
        if target.capacity_available < need:
            raise Infeasible(source.grants[0].demand_index, Infeasible.CAPACITY_EXHAUSTED)
        before_seq = self._grant_seq[sid]
        before_pending = {p[0] for p in self._pending[sid]}
        try:
            rids = [self._emit("reserve", slice_id=sid, offer_id=target.offer_id,
                               demand_index=g.demand_index, units=g.amount)["reservation_id"]
                    for g in source.grants]
            self._allocate(sid, rids)
        except (DomainError, MarketplaceError):
            self._undo_since(sid, before_seq, before_pending)
            raise
        for g in source.grants:
            self._emit("deallocate", slice_id=sid, handle=g.handle)
            self._emit("release", slice_id=sid, reservation_id=g.reservation_id)
        cross = target.owner_domain != source.domain_id
        return {"cross_domain": "yes" if cross else "no"}

    def supervision_loop(self, sid: str, max_ticks: int, apply_actions: bool = True,
                         on_tick: Optional[Callable[[int], None]] = None) -> int:
        """Tick until ``max_ticks`` or the slice leaves Operation; returns ticks done."""
        done = 0
        for _ in range(max_ticks):
            rec = self._slices.get(sid)
            if rec is None or rec.phase is not _P.OPERATION:
                break
            try:
                actions = self.supervise_tick(sid)
            except SliceNotOperational:
                break
            if apply_actions:
                for action in actions:
                    try:
                        self.apply_action(sid, action)
                    except (Infeasible, DomainError, MarketplaceError):
                        pass
                    except SliceNotOperational:
                        return done + 1
            done += 1
            if on_tick is not None:
                on_tick(done)
        return done

    # -- decommissioning -------------------------------------------------------------

    def _decommission_checks(self, sid: str, principal, token) -> SliceRecord:
        rec = self._slices.get(sid)
        self._authorize(principal, DECOMMISSION_ACTION, sid, token, rec.phase if rec else None)
        if rec is None:
            raise UnknownSlice(sid)
        if rec.phase is _P.TERMINATED:
            raise AlreadyTerminated(f"{sid} is already Terminated")
        # tenants only tear down their own slices; experimenters operate the testbed
        if (principal.kind is PrincipalKind.TENANT
                and principal.principal_id != rec.intent.tenant_id):
            self.security.audit.append(AttackCategory.IMPERSONATION, rec.phase,
                                       principal.principal_id,
                                       kv(action=DECOMMISSION_ACTION, target=sid,
                                          outcome="not-owner"))
            raise NotAuthorized(f"{principal.principal_id} does not own {sid}")
        return rec

    def begin_decommission(self, sid: str, principal: Optional[Principal],
                           token: Optional[str] = None) -> None:
        with self._lock_for(sid):
            rec = self._decommission_checks(sid, principal, token)
            if rec.phase is not _P.DECOMMISSIONING:
                self._phase(sid, _E.DECOMMISSION_REQUESTED)
            self._activity(sid, "decommission-begin", principal.principal_id, outcome="ok")

    def decommission(self, sid: str, principal: Optional[Principal],
                     token: Optional[str] = None) -> None:
        with self._lock_for(sid):
            rec = self._decommission_checks(sid, principal, token)
            if rec.phase is not _P.DECOMMISSIONING:
                self._phase(sid, _E.DECOMMISSION_REQUESTED)
            self._teardown(sid)
            self._phase(sid, _E.TEARDOWN_COMPLETE)
            self._activity(sid, "decommission", principal.principal_id, outcome="ok")
