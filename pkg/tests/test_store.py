import json
import shutil

import pytest

from slicekit.orchestrator import ScaleUp
from slicekit.orchestrator import ReplayMismatch
from slicekit.security import AuditEntry, AuthenticationFailed
from slicekit.store import LOG_NAME, SNAPSHOT_DIR, EventStore, SecurityStore

from sysutil import capacity_problems, intent, login, system


def strip_clock(state):
    return {k: v for k, v in state.items() if k != "clock"}


FAILURES = {"iot": "fail_nth:4"}


def scripted_run(store_dir, snapshot_every):
    s = system(store_dir, snapshot_every=snapshot_every, failures=FAILURES)
    states = []
    s.orchestrator.on_event = lambda e: states.append(s.orchestrator.state_dict())
    o = s.orchestrator
    a = o.create_slice(intent(iot=1), login(s))
    try:
        o.create_slice(intent("carol"), login(s, "carol"))
    except Exception:
        pass
    o.supervision_loop(a, 3)
    o.apply_action(a, ScaleUp(0, 1))
    o.decommission(a, login(s))
    return states


@pytest.mark.parametrize("snapshot_every", [0, 7])
def test_recovery_at_every_event_boundary(tmp_path, snapshot_every):
    states = scripted_run(tmp_path / "run", snapshot_every)
    lines = (tmp_path / "run" / "slices" / LOG_NAME).read_bytes().splitlines(keepends=True)
    assert len(lines) == len(states) > 20
    for n in range(len(lines) + 1):
        for torn in (b"", b'{"kind":"reserve","sli'):
            d = tmp_path / f"crash-{n}-{len(torn)}"
            shutil.copytree(tmp_path / "run", d)
            (d / "slices" / LOG_NAME).write_bytes(b"".join(lines[:n]) + torn)
            s = system(d, snapshot_every=snapshot_every, failures=FAILURES)
            got = strip_clock(s.orchestrator.state_dict())
            if n == 0:
                assert got["slices"] == {} and got["events"] == 0
            else:
                assert got == strip_clock(states[n - 1]), n
            assert not capacity_problems(s)
            shutil.rmtree(d)


def test_torn_tail_is_truncated(tmp_path):
    st = EventStore(tmp_path)
    st.append({"a": 1})
    with open(st.log_path, "ab") as fh:
        fh.write(b'{"a": 2')
    again = EventStore(tmp_path)
    assert len(again) == 1 and again.events() == [{"a": 1}]
    again.append({"a": 3})
    assert [e["a"] for e in EventStore(tmp_path).events()] == [1, 3]


def test_snapshots_newer_than_log_are_ignored(tmp_path):
    st = EventStore(tmp_path, snapshot_every=2)
    for i in range(6):
        st.append({"i": i}, state_fn=lambda i=i: {"upto": i})
    assert st.latest_snapshot() == (6, {"upto": 5})
    lines = st.log_path.read_bytes().splitlines(keepends=True)
    st.log_path.write_bytes(b"".join(lines[:3]))
    assert EventStore(tmp_path).latest_snapshot() == (2, {"upto": 1})
    assert sorted(p.name for p in (tmp_path / SNAPSHOT_DIR).iterdir())[-1] == "00000006.json"


def test_cli_style_continuation(tmp_path):
    s1 = system(tmp_path)
    sid = s1.orchestrator.create_slice(intent(), login(s1))
    s2 = system(tmp_path)
    assert s2.orchestrator.get(sid).phase.value == "Operation"
    s2.orchestrator.decommission(sid, login(s2))
    s3 = system(tmp_path)
    assert s3.orchestrator.get(sid).phase.value == "Terminated"
    assert s3.security.audit.transcript() == s2.security.audit.transcript()


def test_security_store_mirror(tmp_path):
    s = system(tmp_path)
    with pytest.raises(AuthenticationFailed):
        s.security.iam.authenticate("alice", "nope")
    store_dir = tmp_path / "security"
    mirror = (store_dir / SecurityStore.AUDIT_NAME).read_text()
    assert mirror == s.security.audit.transcript()
    # the mirror is rebuilt from the JSON log on open
    (store_dir / SecurityStore.AUDIT_NAME).write_text("garbage\n")
    assert (SecurityStore(store_dir).audit_path.read_text()) == mirror
    events = [json.loads(l) for l in (store_dir / LOG_NAME).read_text().splitlines()]
    assert [AuditEntry.from_line(e["line"]) for e in events if e["kind"] == "audit"] == \
        s.security.audit.query()


def test_replay_detects_changed_failure_policy(tmp_path):
    scripted_run(tmp_path, 0)
    with pytest.raises(ReplayMismatch):
        system(tmp_path)
