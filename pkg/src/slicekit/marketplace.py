"""Resource marketplace: a registry of provider offers with two-phase reserve/release."""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .core import SliceError


class ResourceType(str, Enum):
    VM = "VM"
    CONTAINER = "Container"
    BARE_METAL = "BareMetal"
    SDN_SWITCH = "SDNSwitch"
    IOT_DEVICE = "IoTDevice"
    FIVEG_FUNCTION = "FiveGFunction"


class MarketplaceError(SliceError):
    pass


class DuplicateOffer(MarketplaceError):
    pass


class InvalidOffer(MarketplaceError):
    def __init__(self, field: str, message: str = ""):
        super().__init__(f"invalid offer field {field!r}" + (f": {message}" if message else ""))
        self.field = field


class UnknownOffer(MarketplaceError):
    pass


class UnknownReservation(MarketplaceError):
    pass


class InsufficientCapacity(MarketplaceError):
    pass


@dataclass(frozen=True)
class ResourceOffer:
    offer_id: str
    resource_type: ResourceType
    owner_domain: str
    price_per_hour: float
    renewable: bool
    pue: float
    location: tuple[float, float]
    hops_to_core: int
    capacity_total: int
    capacity_available: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "resource_type", ResourceType(self.resource_type))
        if self.capacity_available is None:
            object.__setattr__(self, "capacity_available", self.capacity_total)

    def validate(self) -> None:
        if not self.offer_id:
            raise InvalidOffer("offer_id", "empty")
        if not self.price_per_hour >= 0:
            raise InvalidOffer("price_per_hour", "must be >= 0")
        if not self.pue >= 1.0:
            raise InvalidOffer("pue", "must be >= 1.0")
        if self.hops_to_core < 0:
            raise InvalidOffer("hops_to_core", "must be >= 0")
        if self.capacity_total < 0:
            raise InvalidOffer("capacity_total", "must be >= 0")
        if not 0 <= self.capacity_available <= self.capacity_total:
            raise InvalidOffer("capacity_available", "must lie in [0, capacity_total]")


@dataclass(frozen=True)
class OfferFilter:
    resource_type: Optional[ResourceType] = None
    renewable: Optional[bool] = None
    max_pue: Optional[float] = None
    max_price: Optional[float] = None
    min_available: Optional[int] = None

    def matches(self, offer: ResourceOffer) -> bool:
        if self.resource_type is not None and offer.resource_type != ResourceType(self.resource_type):
            return False
        if self.renewable is not None and offer.renewable != self.renewable:
            return False
        if self.max_pue is not None and offer.pue > self.max_pue:
            return False
        if self.max_price is not None and offer.price_per_hour > self.max_price:
            return False
        if self.min_available is not None and offer.capacity_available < self.min_available:
            return False
        return True


@dataclass(frozen=True)
class Reservation:
    reservation_id: str
    offer_id: str
    amount: int
    holder: str


class Marketplace:
    """Single logical owner of the offer registry; all mutations take the lock."""

    def __init__(self, offers: Iterable[ResourceOffer] = ()):
        self._lock = threading.RLock()
        self._offers: dict[str, ResourceOffer] = {}
        self._reservations: dict[str, Reservation] = {}
        self._next_reservation = 1
        for offer in offers:
            self.register_offer(offer)

    def register_offer(self, offer: ResourceOffer) -> str:
        offer.validate()
        with self._lock:
            if offer.offer_id in self._offers:
                raise DuplicateOffer(offer.offer_id)
            self._offers[offer.offer_id] = offer
        return offer.offer_id

    def withdraw_offer(self, offer_id: str) -> None:
        with self._lock:
            if offer_id not in self._offers:
                raise UnknownOffer(offer_id)
            if any(r.offer_id == offer_id for r in self._reservations.values()):
                raise MarketplaceError(f"offer {offer_id} still has active reservations")
            del self._offers[offer_id]

    def get(self, offer_id: str) -> ResourceOffer:
        try:
            return self._offers[offer_id]
        except KeyError:
            raise UnknownOffer(offer_id) from None

    def query_offers(self, flt: Optional[OfferFilter] = None) -> list[ResourceOffer]:
        flt = flt or OfferFilter()
        with self._lock:
            offers = list(self._offers.values())
        return sorted((o for o in offers if flt.matches(o)), key=lambda o: o.offer_id)

    def reserve(self, offer_id: str, amount: int, holder: str,
                reservation_id: Optional[str] = None) -> Reservation:
        if amount < 1:
            raise MarketplaceError("reservation amount must be >= 1")
        with self._lock:
            offer = self.get(offer_id)
            if amount > offer.capacity_available:
                raise InsufficientCapacity(
                    f"{offer_id}: requested {amount}, available {offer.capacity_available}"
                )
            if reservation_id is None:
                reservation_id = f"R{self._next_reservation:06d}"
            if reservation_id in self._reservations:
                raise MarketplaceError(f"reservation id {reservation_id} already in use")
            self._next_reservation += 1
            res = Reservation(reservation_id, offer_id, amount, holder)
            self._offers[offer_id] = replace(offer, capacity_available=offer.capacity_available - amount)
            self._reservations[reservation_id] = res
            return res

    def release(self, reservation_id: str, amount: Optional[int] = None) -> None:
        """Return a reservation's capacity; ``amount`` shrinks it instead of closing it."""
        with self._lock:
            res = self._reservations.get(reservation_id)
            if res is None:
                raise UnknownReservation(reservation_id)
            if amount is None or amount == res.amount:
                amount = res.amount
                del self._reservations[reservation_id]
            elif 1 <= amount < res.amount:
                self._reservations[reservation_id] = replace(res, amount=res.amount - amount)
            else:
                raise MarketplaceError(f"cannot release {amount} of {res.amount} units")
            offer = self._offers[res.offer_id]
            self._offers[res.offer_id] = replace(
                offer, capacity_available=offer.capacity_available + amount
            )

    def reservations(self, holder: Optional[str] = None) -> list[Reservation]:
        with self._lock:
            rs = list(self._reservations.values())
        return sorted((r for r in rs if holder is None or r.holder == holder),
                      key=lambda r: r.reservation_id)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "available": {k: o.capacity_available for k, o in sorted(self._offers.items())},
                "reservations": [
                    [r.reservation_id, r.offer_id, r.amount, r.holder]
                    for r in sorted(self._reservations.values(), key=lambda r: r.reservation_id)
                ],
                "next_reservation": self._next_reservation,
            }

    def restore(self, snap: dict) -> None:
        """Load capacities and reservations saved by ``snapshot`` over the same offer set."""
        with self._lock:
            for oid, avail in snap["available"].items():
                self._offers[oid] = replace(self.get(oid), capacity_available=avail)
            self._reservations = {
                rid: Reservation(rid, oid, amount, holder)
                for rid, oid, amount, holder in snap["reservations"]
            }
            self._next_reservation = snap["next_reservation"]


CATALOG_HEADER = ["offer_id", "resource_type", "owner_domain", "price_per_hour",
                  "renewable", "pue", "x", "y", "hops", "capacity"]


class CatalogFormatError(MarketplaceError):
    def __init__(self, line: int, message: str):
        super().__init__(f"catalog line {line}: {message}")
        self.line = line


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def parse_catalog(text: str) -> list[ResourceOffer]:
    """Parse a catalog CSV. Floats written in shortest round-trip form echo bit-exactly."""
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != CATALOG_HEADER:
        raise CatalogFormatError(1, "header must be " + ",".join(CATALOG_HEADER))
    offers = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CATALOG_HEADER):
            raise CatalogFormatError(lineno, f"expected {len(CATALOG_HEADER)} fields, got {len(row)}")
        try:
            offer = ResourceOffer(
                offer_id=row[0],
                resource_type=ResourceType(row[1]),
                owner_domain=row[2],
                price_per_hour=float(row[3]),
                renewable=_parse_bool(row[4]),
                pue=float(row[5]),
                location=(float(row[6]), float(row[7])),
                hops_to_core=int(row[8]),
                capacity_total=int(row[9]),
            )
        except ValueError as exc:
            raise CatalogFormatError(lineno, str(exc)) from None
        offers.append(offer)
    return offers


def _fmt_float(x: float) -> str:
    return repr(float(x))


def format_catalog(offers: Iterable[ResourceOffer]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CATALOG_HEADER)
    for o in offers:
        writer.writerow([
            o.offer_id, o.resource_type.value, o.owner_domain, _fmt_float(o.price_per_hour),
            "true" if o.renewable else "false", _fmt_float(o.pue),
            _fmt_float(o.location[0]), _fmt_float(o.location[1]), o.hops_to_core, o.capacity_total,
        ])
    return out.getvalue()


def load_catalog(path: Path) -> list[ResourceOffer]:
    return parse_catalog(Path(path).read_text())
