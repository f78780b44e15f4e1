import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slicekit.core import LifecyclePhase, LogicalClock
from slicekit.ml.agent import MLAgent
from slicekit.ml.flows import make_synthetic_flows, train_test_split_indices
from slicekit.ml.knn import knn_train
from slicekit.security import (APPLICABILITY, AppendOnlyViolation, AttackCategory, AuditEntry,
                               AuditLog, AuthenticationFailed, Deny, Drop, InvalidToken,
                               NotAuthorized, Pass, PrincipalKind, ReplayDetected, ScopeMismatch,
                               SecurityServices, StorageFailure, TokenSource, UnkeyedChannel,
                               is_applicable, parse_transcript)
from slicekit.store import SecurityStore, attach_security_store

P = LifecyclePhase
OP = P.OPERATION

# attack applicability, written out cell by cell: category -> (Prep, Comm, Oper, Decomm)
APPLICABLE_CELLS = {
    "Impersonation": (1, 1, 1, 1),
    "TrafficInjection": (1, 1, 1, 1),
    "DoS": (1, 0, 1, 0),
    "Tampering": (1, 1, 1, 1),
    "Eavesdropping": (1, 1, 1, 0),
    "ReplayAttack": (1, 0, 0, 0),
    "InterfaceMonitoring": (1, 1, 1, 1),
}
FOUR = [P.PREPARATION, P.COMMISSIONING, P.OPERATION, P.DECOMMISSIONING]


def services(**kw):
    s = SecurityServices.create(LogicalClock(), token_seed=1, **kw)
    s.iam.register("alice", PrincipalKind.TENANT, "pw", ["write"])
    s.register_element("slice-db", "db", ["write"])
    s.register_element("slice-builder", "b", ["write"])
    return s


def test_applicability_matrix_matches_table():
    assert {c.value for c in AttackCategory} == set(APPLICABLE_CELLS)
    for cat, row in APPLICABLE_CELLS.items():
        for phase, flag in zip(FOUR, row):
            assert is_applicable(AttackCategory(cat), phase) == bool(flag), (cat, phase)
        assert not is_applicable(AttackCategory(cat), P.TERMINATED)
    assert sum(map(sum, APPLICABLE_CELLS.values())) == 22 == sum(len(v) for v in APPLICABILITY.values())


def test_authenticate_ok_and_wrong_secret():
    s = services()
    assert s.iam.authenticate("alice", "pw").principal_id == "alice"
    with pytest.raises(AuthenticationFailed):
        s.iam.authenticate("alice", "nope", OP)
    [e] = s.audit.entries
    assert (e.category, e.phase, e.principal) == ("Impersonation", "Operation", "alice")


def test_unknown_principal_same_error():
    s = services()
    with pytest.raises(AuthenticationFailed):
        s.iam.authenticate("mallory", "pw")
    assert len(s.audit) == 1


def test_three_failures_then_success():
    s = services()
    for _ in range(3):
        with pytest.raises(AuthenticationFailed):
            s.iam.authenticate("alice", "x", P.PREPARATION)
    s.iam.authenticate("alice", "pw")
    assert [e.seq for e in s.audit.entries] == [1, 2, 3]
    assert all(e.category == "Impersonation" for e in s.audit.entries)


def test_credentials_not_stored_in_clear():
    s = services()
    p = s.iam.principal("alice")
    assert b"pw" not in p.credential_digest and len(p.credential_digest) == 32
    assert "pw" not in repr(p)


def test_token_single_use_and_scope():
    s = services()
    alice = s.iam.authenticate("alice", "pw")
    t = s.iam.issue_token(alice, "write", "slice-db")
    assert len(t.token_id) == 32 and not t.consumed
    assert s.iam.validate_token(t.token_id, "write", "slice-db").consumed
    with pytest.raises(ReplayDetected):
        s.iam.validate_token(t.token_id, "write", "slice-db", P.PREPARATION)
    assert [e.category for e in s.audit.entries] == ["ReplayAttack"]
    t2 = s.iam.issue_token(alice, "write", "slice-db")
    with pytest.raises(ScopeMismatch):
        s.iam.validate_token(t2.token_id, "write", "slice-builder", OP)
    assert s.audit.entries[-1].category == "Tampering"
    # a scope mismatch does not consume the token
    s.iam.validate_token(t2.token_id, "write", "slice-db")


def test_issue_requires_session_and_grant():
    s = services()
    alice = s.iam.principal("alice")
    with pytest.raises(NotAuthorized):
        s.iam.issue_token(alice, "write", "slice-db")
    s.iam.authenticate("alice", "pw")
    with pytest.raises(NotAuthorized):
        s.iam.issue_token(alice, "delete", "slice-db")
    assert [e.fields["outcome"] for e in s.audit.entries] == ["unauthenticated", "unauthorized"]


def test_unknown_token():
    s = services()
    with pytest.raises(InvalidToken):
        s.iam.validate_token("0" * 32, "write", "slice-db")
    assert len(s.audit) == 1


def test_token_uniqueness_million():
    src = TokenSource(seed=0)
    ids = {src.next_id() for _ in range(1_000_000)}
    assert len(ids) == 1_000_000


def test_token_stream_seeded_and_unseeded():
    a, b = TokenSource(3), TokenSource(3)
    assert [a.next_id() for _ in range(5)] == [b.next_id() for _ in range(5)]
    assert TokenSource().next_id() != TokenSource().next_id()
    # channel keys come from a separate stream
    assert TokenSource(3).derive("channel").next_id() != TokenSource(3).next_id()


def test_ingress_filter():
    s = services()
    assert s.ingress.filter_ingress(None, "slice-db") .__class__.__name__ == "Allow"
    assert s.ingress.filter_ingress(None, "1.2.3.4", OP) == Deny("External")
    [e] = s.audit.entries
    assert (e.category, e.phase, e.principal) == ("TrafficInjection", "Operation", "1.2.3.4")


def test_mixed_origin_counts():
    s = services()
    rng = random.Random(0)
    origins = [rng.choice(["slice-db", "slice-builder", "ext-a", "ext-b", "ext-c"]) for _ in range(1000)]
    denies = sum(isinstance(s.ingress.filter_ingress(None, o, tick=i), Deny) for i, o in enumerate(origins))
    external = sum(o.startswith("ext") for o in origins)
    assert denies == external == len(s.audit)


def test_rate_limit_per_tick():
    s = services(rate_limit=5)
    decisions = [s.ingress.admit("slice-db", P.PREPARATION, tick=1) for _ in range(8)]
    assert sum(isinstance(d, Deny) for d in decisions) == 3
    assert [e.category for e in s.audit.entries] == ["DoS"] * 3
    assert s.ingress.admit("slice-db", tick=2).__class__.__name__ == "Allow"


class Stub:
    def __init__(self, label):
        self.label = label

    def predict(self, flow):
        return self.label


def test_gate_pass_and_drop():
    s = services()
    s.gate.attach("b", MLAgent("b", Stub("Benign")))
    assert s.gate.ddos_gate("b", [0], "slice-db") == Pass()
    s.gate.attach("b", MLAgent("b", Stub("Syn")))
    assert s.gate.ddos_gate("b", [0], "slice-db", OP) == Drop("slice-db", "Syn")
    [e] = s.audit.entries
    assert e.category == "DoS" and e.fields["class"] == "Syn"


def test_gate_model_unavailable_closed_and_open():
    closed = services()
    closed.gate.attach("b", MLAgent("b"))
    assert isinstance(closed.gate.ddos_gate("b", [0], "x"), Drop)
    assert closed.audit.entries[-1].fields["reason"] == "model-unavailable"
    opened = services(fail_closed=False)
    assert opened.gate.ddos_gate("nobody", [0], "x") == Pass()
    assert opened.audit.entries[-1].category == "Fault"


def test_gate_agrees_with_classifier():
    X, y = make_synthetic_flows([40] * 9, seed=2)
    tr, te = train_test_split_indices(len(X), 0.2, 2)
    model = knn_train(X[tr], y[tr], 4)
    s = services()
    s.gate.attach("b", MLAgent("b", model))
    direct = model.predict(X[te])
    for x, p in zip(X[te], direct):
        d = s.gate.ddos_gate("b", x, "slice-db", OP)
        assert isinstance(d, Pass) == (p == "Benign")
        if isinstance(d, Drop):
            assert d.predicted == p
    assert len(s.audit) == int(np.sum(direct != "Benign"))


def test_eavesdropping_needs_keyed_channel():
    s = services()
    with pytest.raises(UnkeyedChannel):
        s.iam.transmit("slice-builder", "slice-db", "m", OP)
    b = s.iam.authenticate("slice-builder", "b")
    key = s.iam.open_channel(b, "slice-db")
    assert s.iam.open_channel(b, "slice-db") == key
    assert s.iam.transmit("slice-db", "slice-builder", "m") == "m"
    assert [e.category for e in s.audit.entries] == ["Eavesdropping"]


# --- audit log ---

def test_append_sequence_and_rewrite():
    log = AuditLog(LogicalClock())
    assert [log.append("Activity", detail=f"n={i}") for i in range(3)] == [1, 2, 3]
    with pytest.raises(AppendOnlyViolation):
        log.rewrite(2, principal="eve", phase=OP, detail="x")
    assert len(log) == 4 and log.entries[-1].category == "Tampering"
    assert log.entries[1].detail == "n=1"
    with pytest.raises(ValueError):
        log.append("Gossip")


def test_entries_immutable():
    log = AuditLog()
    log.append("Activity")
    with pytest.raises(AttributeError):
        log.entries[0].detail = "x"


@given(st.lists(st.tuples(st.sampled_from(sorted(APPLICABLE_CELLS) + ["Activity", "Fault"]),
                          st.sampled_from([None] + FOUR),
                          st.text(min_size=1, max_size=8),
                          st.text(max_size=20)), max_size=15))
def test_transcript_round_trip(items):
    log = AuditLog()
    for cat, phase, who, detail in items:
        log.append(cat, phase, who, detail)
    assert parse_transcript(log.transcript()) == list(log.entries)
    assert all(len(e.to_line().split("|")) == 6 for e in log.entries)


def test_query_filters():
    log = AuditLog()
    log.append("Activity", OP, "alice", "slice=S1 step=1")
    log.append("DoS", OP, "x", "")
    log.append("Activity", P.TERMINATED, "bob", "slice=S2 step=1")
    assert len(log.query(category="Activity")) == 2
    assert [e.seq for e in log.query(phase="Operation")] == [1, 2]
    assert [e.seq for e in log.query(slice_id="S2")] == [3]
    assert [e.seq for e in log.query(principal="x")] == [2]
    assert [e.seq for e in log.query(since=2)] == [3]


def test_sink_failure_is_storage_failure():
    def boom(entry):
        raise OSError("disk full")
    log = AuditLog(sink=boom)
    with pytest.raises(StorageFailure):
        log.append("Activity")
    assert len(log) == 0


def test_restore_rejects_gaps():
    log = AuditLog()
    with pytest.raises(StorageFailure):
        log.restore([AuditEntry(2, 0, "Activity", "-", "-", "")])


def run_script(seed, store_dir=None):
    s = SecurityServices.create(LogicalClock(), token_seed=seed)
    s.iam.register("alice", PrincipalKind.TENANT, "pw", ["write"])
    s.register_element("slice-db", "db", ["write"])
    if store_dir is not None:
        attach_security_store(s, SecurityStore(store_dir))
    for phase in FOUR:
        s.audit.clock.tick()
        try:
            s.iam.authenticate("alice", "bad", phase)
        except AuthenticationFailed:
            pass
        a = s.iam.authenticate("alice", "pw")
        t = s.iam.issue_token(a, "write", "slice-db")
        s.iam.validate_token(t.token_id, "write", "slice-db", phase)
        try:
            s.iam.validate_token(t.token_id, "write", "slice-db", phase)
        except ReplayDetected:
            pass
        s.ingress.filter_ingress(None, "evil", phase)
    return s


def test_same_seed_same_transcript():
    a, b = run_script(4), run_script(4)
    assert a.audit.transcript() == b.audit.transcript()
    assert "ReplayAttack" in a.audit.transcript()


def test_security_store_round_trip(tmp_path):
    s = run_script(4, tmp_path)
    assert (tmp_path / "audit.log").read_text() == s.audit.transcript()
    fresh = SecurityServices.create(LogicalClock(), token_seed=4)
    attach_security_store(fresh, SecurityStore(tmp_path))
    assert fresh.audit.transcript() == s.audit.transcript()
    assert fresh.audit.clock.now == s.audit.clock.now
    # consumed tokens stay consumed after recovery
    tid = next(t for t in s.iam._tokens)
    with pytest.raises(ReplayDetected):
        fresh.iam.validate_token(tid, "write", "slice-db")


def test_security_store_detects_foreign_token_stream(tmp_path):
    run_script(4, tmp_path)
    other = SecurityServices.create(LogicalClock(), token_seed=5)
    with pytest.raises(StorageFailure):
        attach_security_store(other, SecurityStore(tmp_path))
