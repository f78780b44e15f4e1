"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 infeasible or domain failure, 4 security
denial, 5 data error (malformed input files, unknown ids).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .builder import Infeasible
from .config import Config, ConfigError, build_domains, build_system, load_config
from .core import SliceError
from .domains import DomainError, UnknownSlice, default_offers
from .experiments import run_ddos_experiment, run_energy_experiment
from .intentfile import load_intent
from .marketplace import (InsufficientCapacity, MarketplaceError, OfferFilter, ResourceType,
                          format_catalog, load_catalog)
from .ml.flows import FlowFormatError, make_synthetic_flows, read_flow_csv
from .ml.recurrent import SeriesTooShort, TrainingConfig
from .orchestrator import CREATE_ACTION, DECOMMISSION_ACTION, ORCHESTRATOR
from .scenarios import PLAN_HEADER, plan_rows, run_attack, run_demo
from .security import AttackCategory, SecurityError

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DENIED, EXIT_DATA = 0, 2, 3, 4, 5


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_USAGE
    if isinstance(exc, SecurityError):
        return EXIT_DENIED
    if isinstance(exc, (Infeasible, DomainError, InsufficientCapacity)):
        return EXIT_INFEASIBLE
    return EXIT_DATA


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells)


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config(seed=args.seed)
    if args.store:
        cfg.store_dir = args.store
    for item in args.weight or ():
        name, sep, value = item.partition("=")
        try:
            cfg.weights[name.strip()] = float(value)
        except ValueError:
            sep = ""
        if not sep:
            raise ConfigError(f"--weight expects NAME=VALUE, got {item!r}")
    if args.weight:
        cfg.validate()
    return cfg


def _secret(args) -> str:
    secret = args.secret or os.environ.get("SLICEKIT_SECRET")
    if secret is None:
        raise ConfigError("no secret given (use --secret or SLICEKIT_SECRET)")
    return secret


# --- commands ----------------------------------------------------------------------

def cmd_slice_create(args) -> int:
    intent = load_intent(args.intent)
    system = build_system(_config(args))
    iam = system.security.iam
    principal = iam.authenticate(args.user, _secret(args))
    token = iam.issue_token(principal, CREATE_ACTION, ORCHESTRATOR)
    sid = system.orchestrator.create_slice(intent, principal, token.token_id)
    print(sid)
    print(_table(PLAN_HEADER, plan_rows(system, sid)))
    return EXIT_OK


def cmd_slice_status(args) -> int:
    system = build_system(_config(args))
    rec = system.orchestrator.get(args.slice_id)
    print(f"slice {rec.slice_id}")
    print(f"phase {rec.phase.value}")
    print(f"tenant {rec.intent.tenant_id}")
    print(f"demands {','.join(str(q) for q in rec.demand_quantities)}")
    rows = [[a.domain_id, a.offer_id, a.amount, ",".join(g.handle for g in a.grants)]
            for a in rec.allocations]
    print(_table(["domain", "offer", "amount", "handles"], rows))
    for name, value in sorted(rec.kpi_snapshot.items()):
        print(f"kpi {name} {float(value)!r}")
    return EXIT_OK


def cmd_slice_decommission(args) -> int:
    system = build_system(_config(args))
    iam = system.security.iam
    principal = iam.authenticate(args.user, _secret(args))
    if args.slice_id not in {r.slice_id for r in system.orchestrator.slices()}:
        raise UnknownSlice(args.slice_id)
    token = iam.issue_token(principal, DECOMMISSION_ACTION, args.slice_id)
    system.orchestrator.decommission(args.slice_id, principal, token.token_id)
    print(f"{args.slice_id} Terminated")
    return EXIT_OK


def cmd_offers_list(args) -> int:
    system = build_system(_config(args))
    flt = OfferFilter(resource_type=ResourceType(args.type) if args.type else None,
                      renewable=args.renewable, max_pue=args.max_pue, max_price=args.max_price)
    offers = system.marketplace.query_offers(flt)
    if args.csv:
        sys.stdout.write(format_catalog(offers))
        return EXIT_OK
    rows = [[o.offer_id, o.resource_type.value, o.owner_domain, o.price_per_hour,
             "yes" if o.renewable else "no", o.pue, o.capacity_available, o.capacity_total]
            for o in offers]
    print(_table(["offer", "type", "domain", "price/h", "renewable", "pue", "available", "total"], rows))
    return EXIT_OK


def cmd_experiment_ddos(args) -> int:
    cfg = _config(args)
    if args.dataset:
        data = read_flow_csv(args.dataset)
        X, y = data.X, data.y
        if y is None:
            raise FlowFormatError(1, "dataset has no label column")
        if args.sample and args.sample < len(X):
            idx = np.sort(np.random.default_rng(cfg.seed).choice(len(X), args.sample, replace=False))
            X, y = X[idx], y[idx]
    else:
        X, y = make_synthetic_flows(seed=cfg.seed)
    k_max = args.k_max or cfg.ml.k_max
    repeats = args.repeats or cfg.ml.repeats
    report = run_ddos_experiment(X, y, args.out, k=args.k or cfg.ml.k, k_range=range(1, k_max + 1),
                                 repeats=repeats, seed=cfg.seed)
    print(f"best_k {report.best_k} mean_accuracy {report.cv.mean_accuracy[report.best_k]:.4f}")
    print(f"holdout_accuracy_at_k{report.k} {report.holdout_accuracy:.4f}")
    for name, path in sorted(report.files.items()):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_experiment_energy(args) -> int:
    cfg = _config(args)
    domains = build_domains(cfg, load_catalog(cfg.catalog) if cfg.catalog else default_offers())
    names = args.domains.split(",") if args.domains else sorted(domains)
    unknown = [n for n in names if n not in domains]
    if unknown:
        raise ConfigError(f"unknown domains: {', '.join(unknown)}")
    if len(names) < 2:
        raise ConfigError("federated training needs at least two domains")
    ml = cfg.ml
    tc = TrainingConfig(window=ml.window, hidden=ml.hidden, learning_rate=ml.learning_rate,
                        epochs=args.epochs or ml.epochs, seed=cfg.seed)
    horizon = ml.horizon if args.horizon is None else args.horizon
    report = run_energy_experiment({n: domains[n].energy_trace for n in names}, args.out, config=tc,
                                   rounds=args.rounds or ml.rounds, horizon=horizon,
                                   workers=cfg.workers, weighted=ml.weighted_fedavg)
    first, last = report.result.rounds[0], report.result.rounds[-1]
    for n in names:
        print(f"{n} mse round {first.round} {first.mse_normalized[n]:.6f} "
              f"round {last.round} {last.mse_normalized[n]:.6f}")
    for name, path in sorted(report.files.items()):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_audit(args) -> int:
    system = build_system(_config(args))
    for e in system.security.audit.query(category=args.category, phase=args.phase,
                                         principal=args.principal, slice_id=args.slice):
        print(e.to_line())
    return EXIT_OK


def cmd_simulate_attack(args) -> int:
    cfg = _config(args)
    outcome = run_attack(args.category, args.phase, seed=cfg.seed, config=cfg)
    print(f"{outcome.category.value} {outcome.phase.value} "
          f"{'applicable' if outcome.applicable else 'not-applicable'} {outcome.response}")
    for e in outcome.audit:
        print(e.to_line())
    return EXIT_OK if outcome.passed else EXIT_DATA


def cmd_simulate_demo(args) -> int:
    cfg = _config(args)
    result = run_demo(args.out, seed=cfg.seed, config=cfg)
    print(result.slice_id)
    for name, path in sorted(result.files.items()):
        print(f"wrote {path}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slicekit", description="Network slice orchestration toolkit")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, default=0, help="global seed when no config file is given")
    p.add_argument("--store", help="store directory (overrides the config)")
    p.add_argument("--weight", action="append", metavar="NAME=VALUE",
                   help="scoring weight override (pue, renewable, comm, price); repeatable")
    sub = p.add_subparsers(dest="command", required=True)

    sl = sub.add_parser("slice", help="create, inspect and decommission slices")
    slsub = sl.add_subparsers(dest="action", required=True)
    c = slsub.add_parser("create")
    c.add_argument("intent", help="intent file")
    c.add_argument("--user", required=True)
    c.add_argument("--secret")
    c.set_defaults(func=cmd_slice_create)
    s = slsub.add_parser("status")
    s.add_argument("slice_id")
    s.set_defaults(func=cmd_slice_status)
    d = slsub.add_parser("decommission")
    d.add_argument("slice_id")
    d.add_argument("--user", required=True)
    d.add_argument("--secret")
    d.set_defaults(func=cmd_slice_decommission)

    of = sub.add_parser("offers", help="marketplace catalog")
    ofsub = of.add_subparsers(dest="action", required=True)
    ls = ofsub.add_parser("list")
    ls.add_argument("--type", choices=[t.value for t in ResourceType])
    ls.add_argument("--renewable", action=argparse.BooleanOptionalAction, default=None)
    ls.add_argument("--max-pue", type=float)
    ls.add_argument("--max-price", type=float)
    ls.add_argument("--csv", action="store_true", help="print in catalog file format")
    ls.set_defaults(func=cmd_offers_list)

    ex = sub.add_parser("experiment", help="ML experiments")
    exsub = ex.add_subparsers(dest="action", required=True)
    dd = exsub.add_parser("ddos")
    src = dd.add_mutually_exclusive_group()
    src.add_argument("--dataset", help="flow feature CSV (FlowMeter-style columns accepted)")
    src.add_argument("--synthetic", action="store_true", help="use the seeded generator (default)")
    dd.add_argument("--k", type=int, help="k for the held-out model and the gate replay")
    dd.add_argument("--k-sweep", dest="k_max", type=int, help="sweep k = 1..N")
    dd.add_argument("--repeats", type=int)
    dd.add_argument("--sample", type=int, help="seeded subsample of the dataset rows")
    dd.add_argument("--out", default="reports/ddos")
    dd.set_defaults(func=cmd_experiment_ddos)
    en = exsub.add_parser("energy")
    en.add_argument("--rounds", type=int)
    en.add_argument("--horizon", type=int)
    en.add_argument("--epochs", type=int, help="local epochs per round")
    en.add_argument("--domains", help="comma-separated domain names (default: all)")
    en.add_argument("--out", default="reports/energy")
    en.set_defaults(func=cmd_experiment_energy)

    au = sub.add_parser("audit", help="print security audit entries")
    au.add_argument("--category")
    au.add_argument("--phase")
    au.add_argument("--principal")
    au.add_argument("--slice")
    au.set_defaults(func=cmd_audit)

    si = sub.add_parser("simulate", help="scripted scenarios")
    sisub = si.add_subparsers(dest="action", required=True)
    at = sisub.add_parser("attack")
    at.add_argument("--category", required=True, choices=[c.value for c in AttackCategory])
    at.add_argument("--phase", required=True,
                    choices=["Preparation", "Commissioning", "Operation", "Decommissioning"])
    at.set_defaults(func=cmd_simulate_attack)
    de = sisub.add_parser("demo", help="create -> attacks -> supervision -> decommission")
    de.add_argument("--out", default="reports/demo")
    de.set_defaults(func=cmd_simulate_demo)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SliceError, MarketplaceError, SeriesTooShort, ValueError, OSError) as exc:
        code = exit_code_for(exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
