"""Sustainability-aware offer scoring and greedy slice resource selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .core import Demand, IntentDescriptor, SliceError
from .marketplace import ResourceOffer, ResourceType

DEFAULT_HOP_COST = 1.0


class Infeasible(SliceError):
    NO_MATCHING_TYPE = "NoMatchingType"
    CAPACITY_EXHAUSTED = "CapacityExhausted"
    CONSTRAINT_UNSATISFIABLE = "ConstraintUnsatisfiable"

    def __init__(self, demand_index: int, reason: str):
        super().__init__(f"demand {demand_index} infeasible: {reason}")
        self.demand_index = demand_index
        self.reason = reason


@dataclass(frozen=True)
class ScoringWeights:
    pue: float = 1.0
    renewable: float = 1.0
    comm: float = 1.0
    price: float = 1.0

    def __post_init__(self):
        values = (self.pue, self.renewable, self.comm, self.price)
        if any(not (math.isfinite(w) and w >= 0) for w in values):
            raise ValueError("scoring weights must be finite and >= 0")
        if not any(w > 0 for w in values):
            raise ValueError("at least one scoring weight must be > 0")

    def scaled(self, c: float) -> "ScoringWeights":
        return ScoringWeights(self.pue * c, self.renewable * c, self.comm * c, self.price * c)

    def with_overrides(self, overrides: Optional[Mapping[str, float]]) -> "ScoringWeights":
        if not overrides:
            return self
        values = {"pue": self.pue, "renewable": self.renewable, "comm": self.comm, "price": self.price}
        for key, value in overrides.items():
            if key not in values:
                raise ValueError(f"unknown scoring weight {key!r}")
            values[key] = float(value)
        return ScoringWeights(**values)


@dataclass(frozen=True)
class Assignment:
    demand_index: int
    offer_id: str
    amount: int
    unit_score: float


@dataclass(frozen=True)
class AllocationPlan:
    assignments: tuple[Assignment, ...]
    # offer_id -> (renewable, owner_domain, pue), enough to re-derive the summary fields
    offer_facts: Mapping[str, tuple] = field(default_factory=dict)
    prices: Mapping[str, float] = field(default_factory=dict)

    @property
    def total_units(self) -> int:
        return sum(a.amount for a in self.assignments)

    @property
    def total_score(self) -> float:
        return math.fsum(a.amount * a.unit_score for a in self.assignments)

    @property
    def total_price_per_hour(self) -> float:
        return math.fsum(a.amount * self.prices[a.offer_id] for a in self.assignments)

    @property
    def renewable_fraction(self) -> float:
        total = self.total_units
        if total == 0:
            return 0.0
        renewable = sum(a.amount for a in self.assignments if self.offer_facts[a.offer_id][0])
        return renewable / total

    def units_for(self, demand_index: int) -> int:
        return sum(a.amount for a in self.assignments if a.demand_index == demand_index)

    def to_dict(self) -> dict:
        return {
            "assignments": [[a.demand_index, a.offer_id, a.amount, a.unit_score] for a in self.assignments],
            "offer_facts": {k: list(v) for k, v in sorted(self.offer_facts.items())},
            "prices": dict(sorted(self.prices.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AllocationPlan":
        return cls(
            assignments=tuple(Assignment(i, o, n, s) for i, o, n, s in d["assignments"]),
            offer_facts={k: tuple(v) for k, v in d["offer_facts"].items()},
            prices=dict(d["prices"]),
        )


def communication_cost(offer: ResourceOffer, reference_point: Sequence[float],
                       hop_cost: float = DEFAULT_HOP_COST) -> float:
    dx = offer.location[0] - reference_point[0]
    dy = offer.location[1] - reference_point[1]
    return math.hypot(dx, dy) + hop_cost * offer.hops_to_core


def score_offer(offer: ResourceOffer, weights: ScoringWeights, reference_point: Sequence[float],
                hop_cost: float = DEFAULT_HOP_COST) -> float:
    """Rate an offer; higher is better.

    Each criterion is mapped into (0, 1]: inverse PUE, a renewable indicator,
    and inverse-shifted communication cost and hourly price.
    """
    comm = communication_cost(offer, reference_point, hop_cost)
    return (
        weights.pue * (1.0 / offer.pue)
        + weights.renewable * (1.0 if offer.renewable else 0.0)
        + weights.comm * (1.0 / (1.0 + comm))
        + weights.price * (1.0 / (1.0 + offer.price_per_hour))
    )


def eligible_offers(demand: Demand, intent: IntentDescriptor,
                    catalog: Iterable[ResourceOffer]) -> tuple[list[ResourceOffer], Optional[str]]:
    """Offers usable for ``demand``; the second item names why the list is empty."""
    rtype = ResourceType(demand.resource_type)
    typed = [o for o in catalog if o.resource_type == rtype]
    if not typed:
        return [], Infeasible.NO_MATCHING_TYPE
    sus = intent.sustainability
    ok = [
        o for o in typed
        if (not sus.require_renewable or o.renewable)
        and (sus.max_pue is None or o.pue <= sus.max_pue)
        and (intent.max_price_per_hour is None or o.price_per_hour <= intent.max_price_per_hour)
    ]
    if not ok:
        return [], Infeasible.CONSTRAINT_UNSATISFIABLE
    return ok, None


def centroid(points: Sequence[Sequence[float]]) -> tuple[float, float]:
    n = len(points)
    return (math.fsum(p[0] for p in points) / n, math.fsum(p[1] for p in points) / n)


def reference_point_for(chosen: Sequence[ResourceOffer], origin: Sequence[float]) -> tuple[float, float]:
    """Centroid of the offers already chosen for the slice, or ``origin`` before any."""
    if not chosen:
        return (float(origin[0]), float(origin[1]))
    return centroid([o.location for o in chosen])


def select_resources(intent: IntentDescriptor, catalog: Sequence[ResourceOffer],
                     weights: Optional[ScoringWeights] = None, *,
                     hop_cost: float = DEFAULT_HOP_COST,
                     demand_quantities: Optional[Sequence[int]] = None,
                     seed_offers: Sequence[ResourceOffer] = (),
                     reference_mode: str = "anchored") -> AllocationPlan:
    """Greedy allocation plan for ``intent`` over ``catalog``.

    Demands are processed in order. For each one, eligible offers are ranked by
    score (descending, offer-id ascending on ties) and filled in that order.

    The communication-cost reference point is the centroid of ``seed_offers``
    (the slice's existing offers when scaling) or the tenant location when
    there are none. With ``reference_mode="anchored"`` it is fixed for the
    whole call, which makes unit scores independent of earlier picks and the
    greedy fill optimal. ``"centroid"`` re-centres it on every offer picked so
    far before each demand; that tracks slice compactness more closely but
    the greedy is then only a heuristic.
    """
    if reference_mode not in ("anchored", "centroid"):
        raise ValueError(f"unknown reference mode {reference_mode!r}")
    weights = (weights or ScoringWeights()).with_overrides(intent.weight_overrides)
    quantities = list(demand_quantities or [d.quantity for d in intent.demands])
    remaining = {o.offer_id: o.capacity_available for o in catalog}
    chosen: list[ResourceOffer] = list(seed_offers)
    chosen_ids = {o.offer_id for o in chosen}
    assignments: list[Assignment] = []
    used: dict[str, ResourceOffer] = {}
    ref = reference_point_for(chosen, intent.location)

    for idx, demand in enumerate(intent.demands):
        need = quantities[idx]
        if need == 0:
            continue
        offers, reason = eligible_offers(demand, intent, catalog)
        if reason is not None:
            raise Infeasible(idx, reason)
        if reference_mode == "centroid":
            ref = reference_point_for(chosen, intent.location)
        ranked = sorted(
            ((score_offer(o, weights, ref, hop_cost), o) for o in offers),
            key=lambda so: (-so[0], so[1].offer_id),
        )
        picked = []
        for score, offer in ranked:
            if need == 0:
                break
            units = min(need, remaining[offer.offer_id] // demand.unit_capacity)
            if units <= 0:
                continue
            remaining[offer.offer_id] -= units * demand.unit_capacity
            need -= units
            picked.append(Assignment(idx, offer.offer_id, units, score))
            used[offer.offer_id] = offer
        if need > 0:
            raise Infeasible(idx, Infeasible.CAPACITY_EXHAUSTED)
        assignments.extend(picked)
        for a in picked:
            if a.offer_id not in chosen_ids:
                chosen_ids.add(a.offer_id)
                chosen.append(used[a.offer_id])

    return AllocationPlan(
        assignments=tuple(assignments),
        offer_facts={k: (o.renewable, o.owner_domain, o.pue) for k, o in used.items()},
        prices={k: o.price_per_hour for k, o in used.items()},
    )
