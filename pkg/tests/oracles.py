"""Independent reference implementations used by the tests and the acceptance run."""

import math
import random

from slicekit.core import Demand, IntentDescriptor, SustainabilityConstraints
from slicekit.marketplace import ResourceOffer, ResourceType


def ref_score(offer, w, ref, hop_cost=1.0):
    dist = math.sqrt((offer.location[0] - ref[0]) ** 2 + (offer.location[1] - ref[1]) ** 2)
    comm = dist + hop_cost * offer.hops_to_core
    return (w["pue"] / offer.pue + w["renewable"] * (1 if offer.renewable else 0)
            + w["comm"] / (1 + comm) + w["price"] / (1 + offer.price_per_hour))


def admissible(offer, demand, intent):
    s = intent.sustainability
    return (offer.resource_type.value == demand.resource_type
            and (not s.require_renewable or offer.renewable)
            and (s.max_pue is None or offer.pue <= s.max_pue)
            and (intent.max_price_per_hour is None or offer.price_per_hour <= intent.max_price_per_hour))


def exhaustive_optimum(intent, catalog, weights):
    """Best total score over every feasible assignment, or None when none exists.

    Scores use the tenant location as the fixed reference point.
    """
    w = dict(pue=1.0, renewable=1.0, comm=1.0, price=1.0, **(weights or {}))
    w.update(intent.weight_overrides or {})
    score = {o.offer_id: ref_score(o, w, intent.location) for o in catalog}
    cap = {o.offer_id: o.capacity_available for o in catalog}
    best = [None]

    def splits(n, offers):
        if not offers:
            if n == 0:
                yield ()
            return
        for k in range(n + 1):
            for rest in splits(n - k, offers[1:]):
                yield (k,) + rest

    def rec(i, total):
        if i == len(intent.demands):
            if best[0] is None or total > best[0]:
                best[0] = total
            return
        d = intent.demands[i]
        offers = [o.offer_id for o in catalog if admissible(o, d, intent)]
        for split in splits(d.quantity, offers):
            need = {oid: k * d.unit_capacity for oid, k in zip(offers, split) if k}
            if all(cap[oid] >= v for oid, v in need.items()):
                for oid, v in need.items():
                    cap[oid] -= v
                rec(i + 1, total + sum(k * score[oid] for oid, k in zip(offers, split)))
                for oid, v in need.items():
                    cap[oid] += v

    rec(0, 0.0)
    return best[0]


def check_feasible(plan, intent, catalog, quantities=None):
    """Independent post-hoc validation; returns a list of violations (empty if fine)."""
    by_id = {o.offer_id: o for o in catalog}
    quantities = quantities or [d.quantity for d in intent.demands]
    problems = []
    covered = [0] * len(intent.demands)
    used = {}
    for a in plan.assignments:
        o = by_id.get(a.offer_id)
        d = intent.demands[a.demand_index]
        if o is None:
            problems.append(f"unknown offer {a.offer_id}")
            continue
        if a.amount < 1:
            problems.append(f"non-positive amount on {a.offer_id}")
        if not admissible(o, d, intent):
            problems.append(f"{a.offer_id} not admissible for demand {a.demand_index}")
        covered[a.demand_index] += a.amount
        used[a.offer_id] = used.get(a.offer_id, 0) + a.amount * d.unit_capacity
    for oid, n in used.items():
        if n > by_id[oid].capacity_available:
            problems.append(f"{oid} over capacity: {n} > {by_id[oid].capacity_available}")
    for i, q in enumerate(quantities):
        if covered[i] != q:
            problems.append(f"demand {i} covered {covered[i]} of {q}")
    return problems


TYPES = [ResourceType.VM, ResourceType.CONTAINER, ResourceType.IOT_DEVICE]


def random_instance(seed, max_offers=6, max_demands=3, max_units=3, unit_capacities=(1,),
                    catalog_types=0.0):
    """Seeded (intent, catalog) pair; ``catalog_types`` is the chance a demand asks for a
    type some offer provides, which raises the share of feasible instances."""
    rng = random.Random(seed)
    n_offers = rng.randint(1, max_offers)
    catalog = [
        ResourceOffer(f"o{i}", rng.choice(TYPES), f"d{rng.randint(1, 3)}",
                      round(rng.uniform(0, 3), 2), rng.random() < 0.5, round(rng.uniform(1.0, 2.5), 2),
                      (round(rng.uniform(-10, 10), 1), round(rng.uniform(-10, 10), 1)),
                      rng.randint(0, 5), rng.randint(0, 6))
        for i in range(n_offers)
    ]
    offered = sorted({o.resource_type.value for o in catalog})

    def demand_type():
        if catalog_types and rng.random() < catalog_types:
            return rng.choice(offered)
        return rng.choice(TYPES).value

    demands = tuple(Demand(demand_type(), rng.randint(1, max_units), rng.choice(unit_capacities))
                    for _ in range(rng.randint(1, max_demands)))
    sus = SustainabilityConstraints(rng.random() < 0.15, rng.choice([None, None, 2.0]))
    intent = IntentDescriptor("t", demands, sustainability=sus,
                              max_price_per_hour=rng.choice([None, None, 2.5]),
                              location=(round(rng.uniform(-5, 5), 1), round(rng.uniform(-5, 5), 1)))
    return intent, catalog


CLASS_ENUM = ["Benign", "DoS-DNS", "DoS-MSSQL", "DoS-NetBIOS", "DoS-SNMP", "DoS-UDP",
              "Syn", "TFTP", "UDP-lag"]


def brute_force_knn(train_X, train_y, query, k):
    """Full scan with plain Python arithmetic.

    Normalization: per-feature (x - min) / (max - min), constant features 0.5.
    Neighbours: all points sorted by (distance, training index); first k kept.
    Vote: most frequent class; ties by smallest fsum of distances, then class order.
    """
    d = len(train_X[0])
    lo = [min(row[j] for row in train_X) for j in range(d)]
    hi = [max(row[j] for row in train_X) for j in range(d)]

    def norm(row):
        return [0.5 if hi[j] == lo[j] else (row[j] - lo[j]) / (hi[j] - lo[j]) for j in range(d)]

    pts = [norm(r) for r in train_X]
    q = norm(query)
    dist = [math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(p, q))) for p in pts]
    order = sorted(range(len(pts)), key=lambda i: (dist[i], i))[:k]
    counts, sums = {}, {}
    for i in order:
        c = train_y[i]
        counts[c] = counts.get(c, 0) + 1
        sums.setdefault(c, []).append(dist[i])
    top = max(counts.values())
    tied = [c for c in counts if counts[c] == top]
    rank = {c: i for i, c in enumerate(CLASS_ENUM)}
    return min(tied, key=lambda c: (math.fsum(sums[c]), rank.get(c, len(rank)), c))
