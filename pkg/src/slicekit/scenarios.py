"""Scripted scenarios: one injected attack per (category, phase) cell, and the end-to-end demo."""

from __future__ import annotations

import csv
import json
import shutil
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import Config, System, build_system
from .core import IntentDescriptor, LifecyclePhase
from .intentfile import parse_intent
from .ml.agent import MLAgent
from .ml.flows import TrafficClass, make_synthetic_flows, train_test_split_indices
from .ml.knn import knn_train
from .orchestrator import CREATE_ACTION, DECOMMISSION_ACTION, ORCHESTRATOR
from .security import (AttackCategory, AuditEntry, Deny, Drop, SecurityError,
                       is_applicable)

_P = LifecyclePhase
ATTACKER = "attacker.example"
PHASES = (_P.PREPARATION, _P.COMMISSIONING, _P.OPERATION, _P.DECOMMISSIONING)
GATED_BLOCK = "slice-builder"


def demo_intent_text() -> str:
    return resources.files("slicekit").joinpath("data/demo.intent").read_text()


def demo_intent() -> IntentDescriptor:
    return parse_intent(demo_intent_text())


@dataclass
class ScenarioOutcome:
    category: AttackCategory
    phase: LifecyclePhase
    applicable: bool
    # what the architecture answered: exception name or decision
    response: str = "not-applicable"
    audit: list[AuditEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if not self.applicable:
            return not self.audit
        return (len(self.audit) == 1 and self.audit[0].category == self.category.value
                and self.audit[0].phase == self.phase.value)


def _slice_in_phase(system: System, phase: LifecyclePhase) -> str:
    orch, iam = system.orchestrator, system.security.iam
    tenant = iam.authenticate("alice", "alice-secret")
    intent = demo_intent()
    if phase is _P.OPERATION:
        return orch.create_slice(intent, tenant)
    sid = orch.open_slice(intent, tenant)
    if phase is _P.PREPARATION:
        return sid
    orch.build_slice(sid)
    if phase is _P.COMMISSIONING:
        return sid
    orch.instantiate_slice(sid)
    orch.begin_decommission(sid, tenant)
    return sid


def _ddos_model(seed: int):
    """KNN on the training 80% of a synthetic capture; returns (model, held-out X, y)."""
    X, y = make_synthetic_flows(seed=seed)
    train, test = train_test_split_indices(len(X), 0.2, seed)
    return knn_train(X[train], y[train], 4), X[test], y[test]


def _syn_flow(model, X, y):
    pred = model.predict(X)
    return X[np.flatnonzero((y == TrafficClass.SYN.value) & (pred == TrafficClass.SYN.value))[0]]


def _attack(system: System, category: AttackCategory, phase: LifecyclePhase, sid: str,
            seed: int) -> str:
    sec = system.security
    iam = sec.iam
    if category is AttackCategory.IMPERSONATION:
        iam.authenticate("alice", "guessed-password", phase)
    elif category is AttackCategory.TRAFFIC_INJECTION:
        rec = system.orchestrator.get(sid)
        domain = system.domains[rec.allocations[0].domain_id] if rec.allocations else \
            next(iter(system.domains.values()))
        domain.inject_flows([np.zeros(12)], origin=ATTACKER)
        decisions = [sec.ingress.filter_ingress(r.flow, r.origin, phase) for r in domain.drain_ingress()]
        return ",".join(type(d).__name__ + (f"({d.reason})" if isinstance(d, Deny) else "")
                        for d in decisions)
    elif category is AttackCategory.DOS:
        if phase is _P.PREPARATION:
            # request flood from a registered element during slice building
            decision = None
            for _ in range(sec.ingress.rate_limit + 1):
                decision = sec.ingress.admit(GATED_BLOCK, phase)
            return f"Deny({decision.reason})"
        model, X, y = _ddos_model(seed)
        syn_flow = _syn_flow(model, X, y)
        sec.gate.attach(GATED_BLOCK, MLAgent(GATED_BLOCK, model))
        decision = sec.gate.ddos_gate(GATED_BLOCK, syn_flow, ATTACKER, phase)
        return f"Drop({decision.predicted})" if isinstance(decision, Drop) else type(decision).__name__
    elif category is AttackCategory.TAMPERING:
        builder = iam.authenticate("slice-builder", "builder-secret")
        if phase is _P.DECOMMISSIONING:
            sec.audit.rewrite(1, principal="slice-builder", phase=phase, detail="forged")
        elif phase is _P.COMMISSIONING:
            iam.validate_token("f" * 32, "write", "slice-db", phase)
        else:
            token = iam.issue_token(builder, "write", "slice-db")
            iam.validate_token(token.token_id, "write", "dom-im", phase)
    elif category is AttackCategory.EAVESDROPPING:
        iam.transmit("dom-mon", "slice-db", {"slice": sid}, phase)
    elif category is AttackCategory.REPLAY_ATTACK:
        builder = iam.authenticate("slice-builder", "builder-secret")
        token = iam.issue_token(builder, "reserve", "marketplace")
        iam.validate_token(token.token_id, "reserve", "marketplace", phase)
        iam.validate_token(token.token_id, "reserve", "marketplace", phase)
    elif category is AttackCategory.INTERFACE_MONITORING:
        iam.transmit("dom-im", ORCHESTRATOR, {"slice": sid, "op": "allocate"}, phase,
                     category=AttackCategory.INTERFACE_MONITORING)
    return "accepted"


def run_attack(category, phase, *, seed: int = 0, config: Optional[Config] = None) -> ScenarioOutcome:
    """Inject one attack of ``category`` while a slice sits in ``phase``.

    Non-applicable cells run nothing and return an outcome with no audit.
    """
    category, phase = AttackCategory(category), LifecyclePhase(phase)
    if not is_applicable(category, phase):
        return ScenarioOutcome(category, phase, False)
    system = build_system(config or Config(seed=seed), persistent=False)
    sid = _slice_in_phase(system, phase)
    assert system.orchestrator.get(sid).phase is phase
    mark = len(system.security.audit)
    try:
        response = _attack(system, category, phase, sid, seed)
    except SecurityError as exc:
        response = type(exc).__name__
    return ScenarioOutcome(category, phase, True, response,
                           system.security.audit.query(since=mark))


def run_attack_matrix(seed: int = 0) -> list[ScenarioOutcome]:
    return [run_attack(c, p, seed=seed) for c in AttackCategory for p in PHASES]


# --- end-to-end demo ----------------------------------------------------------------

@dataclass
class DemoResult:
    out_dir: Path
    slice_id: str
    files: dict[str, Path]

    def read_all(self) -> dict[str, bytes]:
        return {name: p.read_bytes() for name, p in sorted(self.files.items())}


def plan_rows(system: System, sid: str) -> list[list]:
    rec = system.orchestrator.get(sid)
    plan = rec.blueprint
    rows = []
    for a in plan.assignments:
        renewable, domain, pue = plan.offer_facts[a.offer_id]
        rows.append([a.demand_index, a.offer_id, domain, a.amount, repr(a.unit_score),
                     "true" if renewable else "false", repr(pue)])
    return rows


PLAN_HEADER = ["demand", "offer", "domain", "amount", "score", "renewable", "pue"]


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def run_demo(out_dir, *, seed: int = 0, ticks: int = 6, config: Optional[Config] = None,
             observer: Optional[Callable[[System], None]] = None) -> DemoResult:
    """Create -> attack injection -> supervision -> decommission, all persisted under ``out_dir``.

    ``observer`` sees the assembled system before the first step (tests hook events there).
    """
    out = Path(out_dir)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    cfg = config or Config(seed=seed)
    cfg.store_dir = str(out / "store")
    system = build_system(cfg)
    if observer is not None:
        observer(system)
    orch, sec = system.orchestrator, system.security
    iam = sec.iam

    tenant = iam.authenticate("alice", "alice-secret")
    token = iam.issue_token(tenant, CREATE_ACTION, ORCHESTRATOR)
    sid = orch.create_slice(demo_intent(), tenant, token.token_id)
    files = {"plan": _write_csv(out / "plan.csv", PLAN_HEADER, plan_rows(system, sid))}

    # attacks while the slice runs
    phase = _P.OPERATION
    try:
        iam.validate_token(token.token_id, CREATE_ACTION, ORCHESTRATOR, phase)
    except SecurityError:
        pass
    try:
        iam.authenticate("alice", "letmein", phase)
    except SecurityError:
        pass
    model, X, y = _ddos_model(seed)
    sec.gate.attach(GATED_BLOCK, MLAgent(GATED_BLOCK, model))
    X, y = X[:30], y[:30]
    domain = system.domains[orch.get(sid).allocations[0].domain_id]
    for i, flow in enumerate(X):
        domain.inject_flows([flow], origin=ATTACKER if i % 3 == 0 else GATED_BLOCK)
    drops = []
    for rec, label in zip(domain.drain_ingress(), y):
        decision = sec.ingress.filter_ingress(rec.flow, rec.origin, phase)
        if isinstance(decision, Deny):
            drops.append([rec.origin, label, "deny", decision.reason])
            continue
        decision = sec.gate.ddos_gate(GATED_BLOCK, rec.flow, rec.origin, phase)
        if isinstance(decision, Drop):
            drops.append([rec.origin, label, "drop", decision.predicted])
        else:
            drops.append([rec.origin, label, "pass", ""])
    files["ingress"] = _write_csv(out / "ingress.csv", ["origin", "label", "decision", "detail"], drops)

    def alert(tick):
        if tick == 2:
            orch.app_mon_alert(sid, "video_stall_ratio")
    orch.supervision_loop(sid, ticks, on_tick=alert)

    dtoken = iam.issue_token(tenant, DECOMMISSION_ACTION, sid)
    orch.decommission(sid, tenant, dtoken.token_id)

    status = out / "status.json"
    status.write_text(json.dumps(orch.state_dict(), sort_keys=True, indent=1) + "\n")
    files["status"] = status
    transcript = out / "audit.log"
    transcript.write_text(sec.audit.transcript())
    files["audit"] = transcript
    files["slice_events"] = Path(cfg.store_dir) / "slices" / "events.jsonl"
    files["security_events"] = Path(cfg.store_dir) / "security" / "events.jsonl"
    return DemoResult(out, sid, files)
