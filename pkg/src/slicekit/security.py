"""IAM, single-use tokens, ingress filtering, DDoS gating and the append-only audit log."""

from __future__ import annotations

import hashlib
import hmac
import random
import secrets
import threading
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional

from .core import LifecyclePhase, LogicalClock, SliceError


class SecurityError(SliceError):
    pass


class AuthenticationFailed(SecurityError):
    pass


class NotAuthorized(SecurityError):
    pass


class InvalidToken(SecurityError):
    pass


class ReplayDetected(InvalidToken):
    pass


class ScopeMismatch(InvalidToken):
    pass


class UnkeyedChannel(SecurityError):
    pass


class AppendOnlyViolation(SecurityError):
    pass


class StorageFailure(SecurityError):
    pass


class AttackCategory(str, Enum):
    IMPERSONATION = "Impersonation"
    TRAFFIC_INJECTION = "TrafficInjection"
    DOS = "DoS"
    TAMPERING = "Tampering"
    EAVESDROPPING = "Eavesdropping"
    REPLAY_ATTACK = "ReplayAttack"
    INTERFACE_MONITORING = "InterfaceMonitoring"


_ALL = frozenset(p for p in LifecyclePhase if p is not LifecyclePhase.TERMINATED)
_PH = LifecyclePhase

# attack category -> phases it can strike
APPLICABILITY: Mapping[AttackCategory, frozenset] = {
    AttackCategory.IMPERSONATION: _ALL,
    AttackCategory.TRAFFIC_INJECTION: _ALL,
    AttackCategory.DOS: frozenset({_PH.PREPARATION, _PH.OPERATION}),
    AttackCategory.TAMPERING: _ALL,
    AttackCategory.EAVESDROPPING: frozenset({_PH.PREPARATION, _PH.COMMISSIONING, _PH.OPERATION}),
    AttackCategory.REPLAY_ATTACK: frozenset({_PH.PREPARATION}),
    AttackCategory.INTERFACE_MONITORING: _ALL,
}


def is_applicable(attack: AttackCategory, phase: LifecyclePhase) -> bool:
    return LifecyclePhase(phase) in APPLICABILITY[AttackCategory(attack)]


ACTIVITY = "Activity"
FAULT = "Fault"
AUDIT_CATEGORIES = frozenset([c.value for c in AttackCategory] + [ACTIVITY, FAULT])


# --- audit -----------------------------------------------------------------

def _escape(text: str) -> str:
    return (text.replace("\\", "\\\\").replace("|", "\\p").replace("\n", "\\n")
            .replace("\r", "\\r"))


def _unescape(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(it, "")
        out.append({"\\": "\\", "p": "|", "n": "\n", "r": "\r"}[nxt])
    return "".join(out)


def kv(**fields) -> str:
    """Render audit detail as ``key=value`` pairs in argument order."""
    return " ".join(f"{k}={v}" for k, v in fields.items() if v is not None)


def parse_kv(detail: str) -> dict[str, str]:
    out = {}
    for part in detail.split():
        key, sep, value = part.partition("=")
        if sep:
            out[key] = value
    return out


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    timestamp: int
    category: str
    phase: str
    principal: str
    detail: str

    def to_line(self) -> str:
        return "|".join([str(self.seq), str(self.timestamp), self.category, self.phase,
                         _escape(self.principal), _escape(self.detail)])

    @classmethod
    def from_line(cls, line: str) -> "AuditEntry":
        parts = line.rstrip("\n").split("|")
        if len(parts) != 6:
            raise ValueError(f"malformed audit line: {line!r}")
        seq, ts, cat, phase, principal, detail = parts
        return cls(int(seq), int(ts), cat, phase, _unescape(principal), _unescape(detail))

    @property
    def fields(self) -> dict[str, str]:
        return parse_kv(self.detail)


def _phase_name(phase: Optional[LifecyclePhase]) -> str:
    return "-" if phase is None else LifecyclePhase(phase).value


class AuditLog:
    """Append-only, gap-free sequence of audit entries.

    ``sink`` receives every new entry before it becomes visible; a sink error
    surfaces as StorageFailure and the entry is dropped.
    """

    def __init__(self, clock: Optional[LogicalClock] = None,
                 sink: Optional[Callable[[AuditEntry], None]] = None):
        self.clock = clock or LogicalClock()
        self.sink = sink
        self._entries: list[AuditEntry] = []
        self._lock = threading.Lock()

    def append(self, category: str, phase: Optional[LifecyclePhase] = None,
               principal: str = "-", detail: str = "") -> int:
        category = category.value if isinstance(category, AttackCategory) else category
        if category not in AUDIT_CATEGORIES:
            raise ValueError(f"unknown audit category {category!r}")
        with self._lock:
            entry = AuditEntry(len(self._entries) + 1, self.clock.now, category,
                               _phase_name(phase), principal or "-", detail)
            if self.sink is not None:
                try:
                    self.sink(entry)
                except OSError as exc:
                    raise StorageFailure(str(exc)) from exc
            self._entries.append(entry)
            return entry.seq

    def restore(self, entries: Iterable[AuditEntry]) -> None:
        with self._lock:
            self._entries = list(entries)
            for i, e in enumerate(self._entries, start=1):
                if e.seq != i:
                    raise StorageFailure(f"audit sequence gap at {i}")

    def rewrite(self, seq: int, principal: str = "-", phase: Optional[LifecyclePhase] = None,
                **changes) -> None:
        """Always refused; the attempt itself is audited as tampering."""
        self.append(AttackCategory.TAMPERING, phase, principal,
                    kv(action="rewrite", target=f"audit#{seq}"))
        raise AppendOnlyViolation(f"audit entry {seq} is immutable")

    @property
    def entries(self) -> tuple[AuditEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def query(self, category: Optional[str] = None, phase: Optional[str] = None,
              principal: Optional[str] = None, slice_id: Optional[str] = None,
              since: int = 0) -> list[AuditEntry]:
        category = category.value if isinstance(category, AttackCategory) else category
        phase = phase.value if isinstance(phase, LifecyclePhase) else phase
        out = []
        for e in self.entries:
            if e.seq <= since:
                continue
            if category is not None and e.category != category:
                continue
            if phase is not None and e.phase != phase:
                continue
            if principal is not None and e.principal != principal:
                continue
            if slice_id is not None and e.fields.get("slice") != slice_id:
                continue
            out.append(e)
        return out

    def transcript(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.entries)


def parse_transcript(text: str) -> list[AuditEntry]:
    # only "\n" ends a record; other line-break characters are ordinary text
    return [AuditEntry.from_line(line) for line in text.split("\n") if line]


# --- identities and tokens ---------------------------------------------------

class PrincipalKind(str, Enum):
    EXPERIMENTER = "Experimenter"
    TENANT = "Tenant"
    ARCHITECTURE_ELEMENT = "ArchitectureElement"


@dataclass(frozen=True)
class Principal:
    principal_id: str
    kind: PrincipalKind
    credential_digest: bytes = field(repr=False)
    salt: bytes = field(repr=False)
    granted_actions: frozenset = frozenset()


@dataclass(frozen=True)
class Token:
    token_id: str
    principal_id: str
    scoped_action: str
    scoped_target: str
    issued_at: int
    consumed: bool = False


class TokenSource:
    """128-bit token identifiers; seeded for reproducible runs, else from ``secrets``."""

    def __init__(self, seed: Optional[object] = None):
        self.seed = seed
        self._rng = None if seed is None else random.Random(str(seed))

    def derive(self, label: str) -> "TokenSource":
        """An independent stream, so other draws never shift the token sequence."""
        return TokenSource(None if self.seed is None else f"{self.seed}/{label}")

    def next_id(self) -> str:
        bits = secrets.randbits(128) if self._rng is None else self._rng.getrandbits(128)
        return f"{bits:032x}"


_KDF_ITERATIONS = 2048


def digest_secret(secret: str, salt: bytes) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", secret.encode(), salt, _KDF_ITERATIONS)


class IdentityManager:
    """Authentication, authorization, single-use tokens and per-pair session keys."""

    def __init__(self, audit: AuditLog, token_source: Optional[TokenSource] = None,
                 token_sink: Optional[Callable[[str, dict], None]] = None):
        self.audit = audit
        self.token_source = token_source or TokenSource()
        self.token_sink = token_sink
        self._principals: dict[str, Principal] = {}
        self._tokens: dict[str, Token] = {}
        self._sessions: set[str] = set()
        self._channels: dict[frozenset, str] = {}
        self._channel_keys = self.token_source.derive("channel")
        self._lock = threading.RLock()
        self._dummy_salt = b"\x00" * 16

    def register(self, principal_id: str, kind: PrincipalKind, secret: str,
                 granted_actions: Iterable[str] = ()) -> Principal:
        salt = hashlib.sha256(f"salt:{principal_id}".encode()).digest()[:16]
        p = Principal(principal_id, PrincipalKind(kind), digest_secret(secret, salt), salt,
                      frozenset(granted_actions))
        with self._lock:
            self._principals[principal_id] = p
        return p

    def principal(self, principal_id: str) -> Optional[Principal]:
        return self._principals.get(principal_id)

    def is_element(self, principal_id: str) -> bool:
        p = self._principals.get(principal_id)
        return p is not None and p.kind is PrincipalKind.ARCHITECTURE_ELEMENT

    def authenticate(self, principal_id: str, secret: str,
                     phase: Optional[LifecyclePhase] = None) -> Principal:
        known = self._principals.get(principal_id)
        salt = known.salt if known else self._dummy_salt
        expected = known.credential_digest if known else digest_secret("", self._dummy_salt)
        # digest computed on every path so timing does not reveal which field was wrong
        ok = hmac.compare_digest(digest_secret(secret, salt), expected) and known is not None
        if not ok:
            self.audit.append(AttackCategory.IMPERSONATION, phase, principal_id,
                              kv(action="authenticate", outcome="denied"))
            raise AuthenticationFailed(principal_id)
        with self._lock:
            self._sessions.add(principal_id)
        return known

    def is_authenticated(self, principal: Principal) -> bool:
        return principal is not None and principal.principal_id in self._sessions

    def _require_session(self, principal: Optional[Principal], action: str, target: str,
                         phase: Optional[LifecyclePhase]) -> None:
        if principal is None or principal.principal_id not in self._sessions:
            pid = principal.principal_id if principal else "-"
            self.audit.append(AttackCategory.IMPERSONATION, phase, pid,
                              kv(action=action, target=target, outcome="unauthenticated"))
            raise NotAuthorized(f"{pid} is not authenticated")

    def authorize(self, principal: Optional[Principal], action: str, target: str,
                  phase: Optional[LifecyclePhase] = None) -> None:
        self._require_session(principal, action, target, phase)
        if action not in principal.granted_actions:
            self.audit.append(AttackCategory.IMPERSONATION, phase, principal.principal_id,
                              kv(action=action, target=target, outcome="unauthorized"))
            raise NotAuthorized(f"{principal.principal_id} may not {action}")

    def issue_token(self, principal: Principal, action: str, target: str,
                    phase: Optional[LifecyclePhase] = None) -> Token:
        self.authorize(principal, action, target, phase)
        with self._lock:
            token = Token(self.token_source.next_id(), principal.principal_id, action, target,
                          self.audit.clock.now)
            if token.token_id in self._tokens:
                raise SecurityError("token id collision")
            if self.token_sink:
                self.token_sink("issued", _token_dict(token))
            self._tokens[token.token_id] = token
        return token

    def validate_token(self, token_id: str, action: str, target: str,
                       phase: Optional[LifecyclePhase] = None) -> Token:
        """Accept a token once, for its exact scope; every refusal is audited once."""
        with self._lock:
            token = self._tokens.get(token_id)
            if token is None:
                self.audit.append(AttackCategory.TAMPERING, phase, "-",
                                  kv(action=action, target=target, outcome="unknown-token"))
                raise InvalidToken("unknown token")
            if token.consumed:
                self.audit.append(AttackCategory.REPLAY_ATTACK, phase, token.principal_id,
                                  kv(action=action, target=target, token=token_id[:8], outcome="replay"))
                raise ReplayDetected(token_id)
            if (token.scoped_action, token.scoped_target) != (action, target):
                self.audit.append(AttackCategory.TAMPERING, phase, token.principal_id,
                                  kv(action=action, target=target, token=token_id[:8],
                                     scope=f"{token.scoped_action}@{token.scoped_target}",
                                     outcome="scope-mismatch"))
                raise ScopeMismatch(token_id)
            if self.token_sink:
                self.token_sink("consumed", {"token_id": token_id})
            token = replace(token, consumed=True)
            self._tokens[token_id] = token
            return token

    def token(self, token_id: str) -> Optional[Token]:
        return self._tokens.get(token_id)

    def restore_token(self, kind: str, payload: dict) -> None:
        """Re-apply a persisted token event; issuance also advances the id stream."""
        if kind == "issued":
            t = Token(**payload)
            if self.token_source.seed is not None and self.token_source.next_id() != t.token_id:
                raise StorageFailure("token stream does not match the security database")
            self._tokens[t.token_id] = t
        elif kind == "consumed":
            tid = payload["token_id"]
            self._tokens[tid] = replace(self._tokens[tid], consumed=True)

    # confidentiality modelled as per-pair session keys, set up at authentication time
    def open_channel(self, principal: Principal, peer: str,
                     phase: Optional[LifecyclePhase] = None) -> str:
        self._require_session(principal, "open-channel", peer, phase)
        pair = frozenset((principal.principal_id, peer))
        with self._lock:
            key = self._channels.get(pair)
            if key is None:
                key = self._channel_keys.next_id()
                self._channels[pair] = key
        return key

    def has_channel(self, src: str, dst: str) -> bool:
        return frozenset((src, dst)) in self._channels

    def transmit(self, src: str, dst: str, message: object,
                 phase: Optional[LifecyclePhase] = None,
                 category: AttackCategory = AttackCategory.EAVESDROPPING) -> object:
        """Carry ``message`` only over a keyed channel."""
        if not self.has_channel(src, dst):
            self.audit.append(category, phase, src,
                              kv(action="transmit", target=dst, outcome="unkeyed-channel"))
            raise UnkeyedChannel(f"{src} -> {dst}")
        return message


def _token_dict(t: Token) -> dict:
    return {"token_id": t.token_id, "principal_id": t.principal_id, "scoped_action": t.scoped_action,
            "scoped_target": t.scoped_target, "issued_at": t.issued_at, "consumed": t.consumed}


# --- ingress and DDoS ----------------------------------------------------------

@dataclass(frozen=True)
class Allow:
    pass


@dataclass(frozen=True)
class Deny:
    reason: str


@dataclass(frozen=True)
class Pass:
    pass


@dataclass(frozen=True)
class Drop:
    origin: str
    predicted: Optional[str] = None


EXTERNAL = "External"
RATE_LIMITED = "RateLimited"


class IngressFilter:
    """Only architecture elements may send; per-origin request rate is capped per tick."""

    def __init__(self, audit: AuditLog, elements: Iterable[str] = (), rate_limit: int = 100):
        self.audit = audit
        self.elements = set(elements)
        self.rate_limit = rate_limit
        self._counts: dict[tuple[str, int], int] = defaultdict(int)
        self._lock = threading.Lock()

    def register_element(self, name: str) -> None:
        self.elements.add(name)

    def is_external(self, origin: str) -> bool:
        return origin not in self.elements

    def filter_ingress(self, flow: object, origin: str, phase: Optional[LifecyclePhase] = None,
                       tick: Optional[int] = None):
        if self.is_external(origin):
            self.audit.append(AttackCategory.TRAFFIC_INJECTION, phase, origin,
                              kv(action="ingress", outcome="deny", reason=EXTERNAL))
            return Deny(EXTERNAL)
        return self.admit(origin, phase, tick)

    def admit(self, origin: str, phase: Optional[LifecyclePhase] = None, tick: Optional[int] = None):
        """Count one request from ``origin`` in ``tick``; over the limit it is denied as DoS."""
        tick = self.audit.clock.now if tick is None else tick
        with self._lock:
            self._counts[(origin, tick)] += 1
            count = self._counts[(origin, tick)]
        if count > self.rate_limit:
            self.audit.append(AttackCategory.DOS, phase, origin,
                              kv(action="request", outcome="deny", reason=RATE_LIMITED, tick=tick))
            return Deny(RATE_LIMITED)
        return Allow()


BENIGN = "Benign"


class DdosGate:
    """Per-block classifier gate backed by ML-Agents."""

    def __init__(self, audit: AuditLog, agents: Optional[Mapping[str, object]] = None,
                 fail_closed: bool = True):
        self.audit = audit
        self.agents = dict(agents or {})
        self.fail_closed = fail_closed

    def attach(self, block: str, agent) -> None:
        self.agents[block] = agent

    def ddos_gate(self, block: str, flow, origin: str, phase: Optional[LifecyclePhase] = None):
        from .ml.agent import ModelUnavailable

        agent = self.agents.get(block)
        try:
            if agent is None:
                raise ModelUnavailable(block)
            predicted = agent.predict(flow)
        except ModelUnavailable:
            if self.fail_closed:
                self.audit.append(AttackCategory.DOS, phase, origin,
                                  kv(block=block, outcome="drop", reason="model-unavailable"))
                return Drop(origin)
            self.audit.append(FAULT, phase, origin,
                              kv(block=block, outcome="pass", reason="model-unavailable"))
            return Pass()
        predicted = getattr(predicted, "value", predicted)
        if predicted != BENIGN:
            self.audit.append(AttackCategory.DOS, phase, origin,
                              kv(block=block, outcome="drop", **{"class": predicted}))
            return Drop(origin, predicted)
        return Pass()


@dataclass
class SecurityServices:
    """The security plane as one bundle: audit, IAM, ingress filter and DDoS gate."""

    audit: AuditLog
    iam: IdentityManager
    ingress: IngressFilter
    gate: DdosGate

    @classmethod
    def create(cls, clock: Optional[LogicalClock] = None, *, token_seed=None,
               rate_limit: int = 100, fail_closed: bool = True) -> "SecurityServices":
        audit = AuditLog(clock or LogicalClock())
        return cls(audit, IdentityManager(audit, TokenSource(token_seed)),
                   IngressFilter(audit, rate_limit=rate_limit), DdosGate(audit, fail_closed=fail_closed))

    def register_element(self, name: str, secret: str, granted_actions: Iterable[str] = ()) -> Principal:
        """An architecture element is both an IAM principal and a trusted traffic origin."""
        self.ingress.register_element(name)
        return self.iam.register(name, PrincipalKind.ARCHITECTURE_ELEMENT, secret, granted_actions)
