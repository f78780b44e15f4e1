"""Flat key/value intent files with repeated ``[demand]`` and ``[kpp]`` stanzas.

Example (the packaged ``data/demo.intent`` is a fuller one)::

    tenant = alice
    location = 1.0, 2.0
    require_renewable = false

    [demand]
    type = VM
    quantity = 2

    [kpp]
    metric = latency_ms
    comparator = <=
    threshold = 25

Blank lines and ``#`` comments are ignored. Keys before the first stanza
describe the intent as a whole; ``weight.<name>`` overrides a scoring weight.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Union

from .core import (Comparator, Demand, IntentDescriptor, InvalidIntent, KppTarget,
                   SustainabilityConstraints)
from .marketplace import ResourceType


class IntentFormatError(InvalidIntent):
    def __init__(self, line: int, field: str, message: str):
        super().__init__(f"intent line {line}, field {field!r}: {message}")
        self.line = line
        self.field = field


def _bool(text: str) -> bool:
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _point(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated numbers")
    return float(parts[0]), float(parts[1])


def _rtype(text: str) -> str:
    return ResourceType(text).value


_HEADER_KEYS: dict[str, Callable[[str], object]] = {
    "tenant": str,
    "location": _point,
    "require_renewable": _bool,
    "max_pue": float,
    "max_price_per_hour": float,
}
_DEMAND_KEYS: dict[str, Callable[[str], object]] = {
    "type": _rtype, "quantity": int, "unit_capacity": int,
}
_KPP_KEYS: dict[str, Callable[[str], object]] = {
    "metric": str, "comparator": Comparator, "threshold": float, "elastic_demand": int,
}
_WEIGHTS = ("pue", "renewable", "comm", "price")


def parse_intent(text: str) -> IntentDescriptor:
    header: dict[str, object] = {}
    weights: dict[str, float] = {}
    # (section kind, first line, {key: (value, line)})
    stanzas: list[tuple[str, int, dict]] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            name = line.strip("[]").strip()
            if not line.endswith("]") or name not in ("demand", "kpp"):
                raise IntentFormatError(lineno, line, "unknown section (expected [demand] or [kpp])")
            current = (name, lineno, {})
            stanzas.append(current)
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise IntentFormatError(lineno, key or line, "expected key = value")
        if current is None:
            if key.startswith("weight."):
                name = key[len("weight."):]
                if name not in _WEIGHTS:
                    raise IntentFormatError(lineno, key, f"unknown weight (one of {', '.join(_WEIGHTS)})")
                parser = float
            elif key in _HEADER_KEYS:
                parser = _HEADER_KEYS[key]
            else:
                raise IntentFormatError(lineno, key, "unknown key")
            try:
                parsed = parser(value)
            except ValueError as exc:
                raise IntentFormatError(lineno, key, str(exc)) from None
            if key.startswith("weight."):
                weights[key[len("weight."):]] = parsed
            else:
                header[key] = parsed
            continue
        kind, _, fields = current
        allowed = _DEMAND_KEYS if kind == "demand" else _KPP_KEYS
        if key not in allowed:
            raise IntentFormatError(lineno, key, f"unknown key in [{kind}]")
        if key in fields:
            raise IntentFormatError(lineno, key, "repeated key")
        try:
            fields[key] = (allowed[key](value), lineno)
        except ValueError as exc:
            raise IntentFormatError(lineno, key, str(exc)) from None

    if "tenant" not in header:
        raise IntentFormatError(1, "tenant", "missing")
    demands, kpps = [], {}
    for kind, start, fields in stanzas:
        values = {k: v for k, (v, _) in fields.items()}
        required = ("type", "quantity") if kind == "demand" else ("metric", "comparator", "threshold")
        for key in required:
            if key not in values:
                raise IntentFormatError(start, key, f"missing in [{kind}]")
        if kind == "demand":
            if values["quantity"] < 1:
                raise IntentFormatError(fields["quantity"][1], "quantity", "must be >= 1")
            if values.get("unit_capacity", 1) < 1:
                raise IntentFormatError(fields["unit_capacity"][1], "unit_capacity", "must be >= 1")
            demands.append(Demand(values["type"], values["quantity"], values.get("unit_capacity", 1)))
        else:
            if values["metric"] in kpps:
                raise IntentFormatError(fields["metric"][1], "metric", "repeated metric")
            kpps[values["metric"]] = (KppTarget(values["threshold"], values["comparator"],
                                                values.get("elastic_demand")), fields)
    for name, (kpp, fields) in kpps.items():
        if kpp.elastic_demand is not None and not 0 <= kpp.elastic_demand < len(demands):
            raise IntentFormatError(fields["elastic_demand"][1], "elastic_demand",
                                    f"no demand with index {kpp.elastic_demand}")
    try:
        return IntentDescriptor(
            tenant_id=header["tenant"],
            demands=tuple(demands),
            kpp_targets={k: v for k, (v, _) in kpps.items()},
            sustainability=SustainabilityConstraints(header.get("require_renewable", False),
                                                     header.get("max_pue")),
            weight_overrides=weights or None,
            max_price_per_hour=header.get("max_price_per_hour"),
            location=header.get("location", (0.0, 0.0)),
        )
    except InvalidIntent as exc:
        raise IntentFormatError(1, "intent", str(exc)) from None


def load_intent(path: Union[str, Path]) -> IntentDescriptor:
    return parse_intent(Path(path).read_text())


def format_intent(intent: IntentDescriptor) -> str:
    """Inverse of ``parse_intent`` (comments and key order are not preserved)."""
    lines = [f"tenant = {intent.tenant_id}",
             f"location = {intent.location[0]!r}, {intent.location[1]!r}",
             f"require_renewable = {'true' if intent.sustainability.require_renewable else 'false'}"]
    if intent.sustainability.max_pue is not None:
        lines.append(f"max_pue = {intent.sustainability.max_pue!r}")
    if intent.max_price_per_hour is not None:
        lines.append(f"max_price_per_hour = {intent.max_price_per_hour!r}")
    for name, value in sorted((intent.weight_overrides or {}).items()):
        lines.append(f"weight.{name} = {float(value)!r}")
    for d in intent.demands:
        lines += ["", "[demand]", f"type = {d.resource_type}", f"quantity = {d.quantity}",
                  f"unit_capacity = {d.unit_capacity}"]
    for name, k in sorted(intent.kpp_targets.items()):
        lines += ["", "[kpp]", f"metric = {name}", f"comparator = {k.comparator.value}",
                  f"threshold = {k.threshold!r}"]
        if k.elastic_demand is not None:
            lines.append(f"elastic_demand = {k.elastic_demand}")
    return "\n".join(lines) + "\n"
