"""Run configuration (JSON) and the assembly of a full system from it."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

from .builder import DEFAULT_HOP_COST, ScoringWeights
from .core import LogicalClock, SliceError
from .domains import (FailNth, FailResourceType, Never, SimDomain, default_federation,
                      default_offers, load_energy_trace)
from .marketplace import Marketplace, ResourceType, load_catalog
from .orchestrator import CREATE_ACTION, DECOMMISSION_ACTION, Orchestrator
from .security import PrincipalKind, SecurityServices
from .store import SecurityStore, SliceStore, attach_security_store


class ConfigError(SliceError):
    pass


@dataclass
class DomainConfig:
    energy_trace: Optional[str] = None
    # "never", "fail_nth:<n>" or "fail_type:<ResourceType>"
    failure: str = "never"


@dataclass
class SecurityConfig:
    rate_limit: int = 100
    fail_closed: bool = True


@dataclass
class MLConfig:
    k: int = 4
    k_max: int = 30
    repeats: int = 10
    window: int = 30
    hidden: int = 16
    epochs: int = 100
    learning_rate: float = 0.2
    rounds: int = 5
    horizon: int = 30
    trace_length: int = 960
    # FedAvg weighting: False = plain mean, True = by training pairs per domain
    weighted_fedavg: bool = False


@dataclass
class PrincipalConfig:
    id: str
    secret: str
    kind: str = "Tenant"
    actions: list = field(default_factory=list)


def default_principals() -> list[PrincipalConfig]:
    return [
        PrincipalConfig("alice", "alice-secret", "Tenant", [CREATE_ACTION, DECOMMISSION_ACTION]),
        PrincipalConfig("bob", "bob-secret", "Experimenter", [CREATE_ACTION, DECOMMISSION_ACTION]),
        PrincipalConfig("carol", "carol-secret", "Tenant", [CREATE_ACTION, DECOMMISSION_ACTION]),
        PrincipalConfig("slice-builder", "builder-secret", "ArchitectureElement",
                        ["write", "read", "reserve"]),
        PrincipalConfig("slice-db", "db-secret", "ArchitectureElement", ["write", "read"]),
        PrincipalConfig("dom-im", "domim-secret", "ArchitectureElement", ["allocate", "read"]),
        PrincipalConfig("dom-mon", "dommon-secret", "ArchitectureElement", ["read"]),
    ]


@dataclass
class Config:
    seed: int
    store_dir: str = "slicekit-store"
    catalog: Optional[str] = None
    domains: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    hop_cost: float = DEFAULT_HOP_COST
    reference_mode: str = "anchored"
    snapshot_every: int = 50
    workers: int = 1
    security: SecurityConfig = field(default_factory=SecurityConfig)
    ml: MLConfig = field(default_factory=MLConfig)
    principals: list = field(default_factory=default_principals)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base: Optional[Path] = None) -> "Config":
        d = dict(d)
        if "seed" not in d or not isinstance(d["seed"], int):
            raise ConfigError("config must set an integer 'seed'")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            d["security"] = SecurityConfig(**d.get("security", {}))
            d["ml"] = MLConfig(**d.get("ml", {}))
            d["domains"] = {k: DomainConfig(**v) for k, v in d.get("domains", {}).items()}
            if "principals" in d:
                d["principals"] = [PrincipalConfig(**p) for p in d["principals"]]
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls(**d)
        if base is not None:
            cfg._resolve(base)
        cfg.validate()
        return cfg

    def _resolve(self, base: Path) -> None:
        def rel(p):
            return None if p is None else str((base / p) if not Path(p).is_absolute() else Path(p))
        self.catalog = rel(self.catalog)
        self.store_dir = rel(self.store_dir)
        for dc in self.domains.values():
            dc.energy_trace = rel(dc.energy_trace)

    def validate(self) -> None:
        paths = [self.catalog] + [d.energy_trace for d in self.domains.values()]
        for p in paths:
            if p is not None and not Path(p).exists():
                raise ConfigError(f"referenced file does not exist: {p}")
        try:
            ScoringWeights().with_overrides(self.weights)
        except ValueError as exc:
            raise ConfigError(f"weights: {exc}") from None
        if self.reference_mode not in ("anchored", "centroid"):
            raise ConfigError(f"unknown reference_mode {self.reference_mode!r}")
        for d in self.domains.values():
            failure_policy(d.failure)

    def scoring_weights(self) -> ScoringWeights:
        return ScoringWeights().with_overrides(self.weights)


def failure_policy(text: str):
    kind, _, arg = text.partition(":")
    try:
        if kind == "never":
            return Never()
        if kind == "fail_nth":
            return FailNth(int(arg))
        if kind == "fail_type":
            return FailResourceType(ResourceType(arg))
    except ValueError as exc:
        raise ConfigError(f"bad failure policy {text!r}: {exc}") from None
    raise ConfigError(f"bad failure policy {text!r}")


def load_config(path: Union[str, Path]) -> Config:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return Config.from_dict(data, base=path.parent)


@dataclass
class System:
    """Everything one CLI invocation works with."""

    config: Config
    marketplace: Marketplace
    domains: dict[str, SimDomain]
    security: SecurityServices
    orchestrator: Orchestrator


def build_domains(cfg: Config, offers) -> dict[str, SimDomain]:
    traces = {name: load_energy_trace(d.energy_trace)
              for name, d in cfg.domains.items() if d.energy_trace}
    policies = {name: failure_policy(d.failure) for name, d in cfg.domains.items()}
    return default_federation(cfg.seed, offers, trace_length=cfg.ml.trace_length,
                              energy_traces=traces, failure_policies=policies)


def build_system(cfg: Config, persistent: bool = True) -> System:
    """Assemble marketplace, domains, security plane and orchestrator.

    With ``persistent`` the slice and security stores under ``store_dir`` are
    replayed first, so each invocation continues where the last one stopped.
    """
    offers = load_catalog(cfg.catalog) if cfg.catalog else default_offers()
    marketplace = Marketplace(offers)
    domains = build_domains(cfg, offers)
    security = SecurityServices.create(LogicalClock(), token_seed=cfg.seed,
                                       rate_limit=cfg.security.rate_limit,
                                       fail_closed=cfg.security.fail_closed)
    for p in cfg.principals:
        kind = PrincipalKind(p.kind)
        if kind is PrincipalKind.ARCHITECTURE_ELEMENT:
            security.register_element(p.id, p.secret, p.actions)
        else:
            security.iam.register(p.id, kind, p.secret, p.actions)
    slice_store = None
    if persistent:
        root = Path(cfg.store_dir)
        attach_security_store(security, SecurityStore(root / "security", cfg.snapshot_every))
        slice_store = SliceStore(root / "slices", cfg.snapshot_every)
    orch = Orchestrator(marketplace, domains, security, store=slice_store,
                        weights=cfg.scoring_weights(), hop_cost=cfg.hop_cost,
                        reference_mode=cfg.reference_mode)
    return System(cfg, marketplace, domains, security, orch)
