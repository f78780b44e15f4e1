"""Append-only event logs with periodic snapshots (slice database and security database)."""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Callable, Iterator, Optional, Union

from .security import AuditEntry

LOG_NAME = "events.jsonl"
SNAPSHOT_DIR = "snapshots"


def _encode(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class EventStore:
    """One directory, one writer.

    Events are JSON objects, one per line, numbered from 1 by position. A
    snapshot ``snapshots/<n>.json`` holds the state after event ``n``. On read,
    a torn final line (crash mid-append) is ignored, and snapshots newer than
    the readable log are never used.
    """

    def __init__(self, directory: Union[str, Path], snapshot_every: int = 0, fsync: bool = False):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / SNAPSHOT_DIR).mkdir(exist_ok=True)
        self.snapshot_every = snapshot_every
        self.fsync = fsync
        self._lock = threading.Lock()
        self._count = sum(1 for _ in self._read())
        self._truncate_torn_tail()

    @property
    def log_path(self) -> Path:
        return self.directory / LOG_NAME

    def _read(self) -> Iterator[dict]:
        if not self.log_path.exists():
            return
        with open(self.log_path, "rb") as fh:
            for raw in fh:
                if not raw.endswith(b"\n"):
                    return
                yield json.loads(raw)

    def _truncate_torn_tail(self) -> None:
        if not self.log_path.exists():
            return
        data = self.log_path.read_bytes()
        if data and not data.endswith(b"\n"):
            cut = data.rfind(b"\n") + 1
            with open(self.log_path, "r+b") as fh:
                fh.truncate(cut)

    def events(self, after: int = 0) -> list[dict]:
        return [e for i, e in enumerate(self._read(), start=1) if i > after]

    def __len__(self) -> int:
        return self._count

    def append(self, event: dict, state_fn: Optional[Callable[[], dict]] = None) -> int:
        line = (_encode(event) + "\n").encode()
        with self._lock:
            with open(self.log_path, "ab") as fh:
                fh.write(line)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
            self._count += 1
            n = self._count
        if state_fn is not None and self.snapshot_every and n % self.snapshot_every == 0:
            self.write_snapshot(n, state_fn())
        return n

    def write_snapshot(self, n: int, state: dict) -> None:
        path = self.directory / SNAPSHOT_DIR / f"{n:08d}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(_encode(state))
        os.replace(tmp, path)

    def latest_snapshot(self, max_n: Optional[int] = None) -> Optional[tuple[int, dict]]:
        limit = len(self) if max_n is None else min(max_n, len(self))
        best = None
        for p in (self.directory / SNAPSHOT_DIR).glob("*.json"):
            n = int(p.stem)
            if n <= limit and (best is None or n > best):
                best = n
        if best is None:
            return None
        return best, json.loads((self.directory / SNAPSHOT_DIR / f"{best:08d}.json").read_text())


class SliceStore(EventStore):
    pass


class SecurityStore(EventStore):
    """Security database: audit entries and token events.

    Alongside the JSON log it keeps ``audit.log`` in the line format
    ``seq|timestamp|category|phase|principal|detail``.
    """

    AUDIT_NAME = "audit.log"

    def __init__(self, directory, snapshot_every: int = 0, fsync: bool = False):
        super().__init__(directory, snapshot_every, fsync)
        self._sync_audit_mirror()

    @property
    def audit_path(self) -> Path:
        return self.directory / self.AUDIT_NAME

    def _sync_audit_mirror(self) -> None:
        entries = self.audit_entries()
        self.audit_path.write_text("".join(e.to_line() + "\n" for e in entries))

    def append_audit(self, entry: AuditEntry) -> None:
        self.append({"kind": "audit", "line": entry.to_line()})
        with open(self.audit_path, "a") as fh:
            fh.write(entry.to_line() + "\n")

    def append_token(self, kind: str, payload: dict) -> None:
        self.append({"kind": "token", "op": kind, "token": payload})

    def audit_entries(self) -> list[AuditEntry]:
        return [AuditEntry.from_line(e["line"]) for e in self.events() if e["kind"] == "audit"]


def attach_security_store(services, store: SecurityStore) -> None:
    """Recover ``services`` (a SecurityServices) from ``store`` and persist from now on."""
    entries = []
    for event in store.events():
        if event["kind"] == "audit":
            entries.append(AuditEntry.from_line(event["line"]))
        else:
            services.iam.restore_token(event["op"], event["token"])
    services.audit.restore(entries)
    if entries:
        services.audit.clock.advance_to(entries[-1].timestamp)
    services.audit.sink = store.append_audit
    services.iam.token_sink = store.append_token
