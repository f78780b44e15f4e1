"""Flow feature vectors, the DDoS traffic classes, synthetic datasets and CSV ingestion."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, TextIO, Union

import numpy as np

from ..core import SliceError


class TrafficClass(str, Enum):
    BENIGN = "Benign"
    DOS_DNS = "DoS-DNS"
    DOS_MSSQL = "DoS-MSSQL"
    DOS_NETBIOS = "DoS-NetBIOS"
    DOS_SNMP = "DoS-SNMP"
    DOS_UDP = "DoS-UDP"
    SYN = "Syn"
    TFTP = "TFTP"
    UDP_LAG = "UDP-lag"


CLASS_ORDER = [c.value for c in TrafficClass]

FEATURES = (
    "duration", "packets-fwd", "packets-bwd", "bytes-fwd", "bytes-bwd",
    "mean-inter-arrival", "std-inter-arrival", "mean-pkt-len", "std-pkt-len",
    "syn-count", "flows-per-src-window", "dst-port-entropy",
)

# closest FlowMeter (CICFlowMeter) columns for the default feature set; the last
# two have no direct counterpart and map to rate / port columns
FLOWMETER_COLUMNS = {
    "duration": "Flow Duration",
    "packets-fwd": "Total Fwd Packets",
    "packets-bwd": "Total Backward Packets",
    "bytes-fwd": "Total Length of Fwd Packets",
    "bytes-bwd": "Total Length of Bwd Packets",
    "mean-inter-arrival": "Flow IAT Mean",
    "std-inter-arrival": "Flow IAT Std",
    "mean-pkt-len": "Packet Length Mean",
    "std-pkt-len": "Packet Length Std",
    "syn-count": "SYN Flag Count",
    "flows-per-src-window": "Flow Packets/s",
    "dst-port-entropy": "Destination Port",
}

LABEL_ALIASES = {
    "benign": TrafficClass.BENIGN,
    "drdos_dns": TrafficClass.DOS_DNS,
    "drdos_mssql": TrafficClass.DOS_MSSQL,
    "drdos_netbios": TrafficClass.DOS_NETBIOS,
    "drdos_snmp": TrafficClass.DOS_SNMP,
    "drdos_udp": TrafficClass.DOS_UDP,
    "udplag": TrafficClass.UDP_LAG,
    "udp-lag": TrafficClass.UDP_LAG,
    "webddos": None,
}


def parse_label(text: str) -> Optional[TrafficClass]:
    """Map a dataset label to a TrafficClass; None for classes outside the nine."""
    text = text.strip()
    for c in TrafficClass:
        if text == c.value or text.lower() == c.value.lower():
            return c
    return LABEL_ALIASES.get(text.lower())


@dataclass(frozen=True)
class FlowFeatureVector:
    features: np.ndarray
    label: Optional[TrafficClass] = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 1:
            raise ValueError("flow features must be a 1-D vector")
        if not np.all(np.isfinite(f)):
            raise ValueError("flow features must be finite")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)
        if self.label is not None:
            object.__setattr__(self, "label", TrafficClass(self.label))


def as_flows(X: np.ndarray, y: Optional[Sequence] = None) -> list[FlowFeatureVector]:
    if y is None:
        return [FlowFeatureVector(row) for row in X]
    return [FlowFeatureVector(row, label) for row, label in zip(X, y)]


# --- synthetic data -----------------------------------------------------------

# per-class sample counts; imbalanced like real DDoS captures
DEFAULT_CLASS_SIZES = (220, 140, 110, 90, 70, 55, 45, 35, 25)

# affine map from standardized space to plausible physical units per feature
_FEATURE_OFFSET = np.array([5e5, 40, 30, 4e4, 3e4, 2e3, 1.5e3, 600, 300, 6, 50, 4.0])
_FEATURE_SCALE = np.array([1e5, 8, 6, 8e3, 6e3, 400, 300, 120, 60, 1.2, 10, 0.8])


def _codewords(n: int, dim: int, rng: np.random.Generator, min_hamming: int) -> np.ndarray:
    words: list[np.ndarray] = []
    while len(words) < n:
        w = rng.integers(0, 2, size=dim)
        if all(np.sum(w != v) >= min_hamming for v in words):
            words.append(w)
    return np.array(words, dtype=float)


def make_synthetic_flows(class_sizes: Sequence[int] = DEFAULT_CLASS_SIZES, *,
                         separation: float = 3.0, seed: int = 0,
                         n_features: int = len(FEATURES), min_hamming: int = 2):
    """Gaussian clusters, one per traffic class, with unit spread.

    Class centres are binary code words scaled by ``separation`` standard
    deviations, so each pair of centres differs by at least ``separation``
    along each of ``min_hamming`` or more features.
    Returns ``(X, y)`` with ``y`` as TrafficClass values.
    """
    if len(class_sizes) != len(TrafficClass):
        raise ValueError(f"need {len(TrafficClass)} class sizes")
    rng = np.random.default_rng(seed)
    centres = separation * _codewords(len(TrafficClass), n_features, rng, min_hamming)
    X, y = [], []
    for cls, centre, size in zip(TrafficClass, centres, class_sizes):
        X.append(centre + rng.standard_normal((size, n_features)))
        y.extend([cls.value] * size)
    X = np.vstack(X)
    if n_features == len(FEATURES):
        X = _FEATURE_OFFSET + _FEATURE_SCALE * X
    order = rng.permutation(len(y))
    return X[order], np.array(y, dtype=object)[order]


def train_test_split_indices(n: int, test_fraction: float = 0.2, seed: int = 0):
    """Seeded random 80/20 split; the test part has round(n * test_fraction) rows."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


# --- CSV ingestion --------------------------------------------------------------

class FlowFormatError(SliceError):
    def __init__(self, row: int, message: str):
        super().__init__(f"flow file row {row}: {message}")
        self.row = row


@dataclass
class FlowDataset:
    X: np.ndarray
    y: Optional[np.ndarray]
    feature_names: tuple[str, ...]
    dropped_nonfinite: int = 0
    dropped_unknown_label: int = 0


def read_flow_csv(source: Union[str, Path, TextIO], *,
                  columns: Optional[Mapping[str, str]] = None,
                  label_column: str = "label") -> FlowDataset:
    """Read a flow feature file and project it onto the configured feature list.

    ``columns`` maps each wanted feature to its column name in the file; by
    default a file whose header already names the features directly is used as-is,
    otherwise the FlowMeter column names are tried. Header names are compared
    with surrounding whitespace stripped and case folded. Rows with non-finite
    values in a selected column are dropped (FlowMeter emits Infinity/NaN
    rates), as are rows whose label is outside the nine classes. Unparseable
    cells raise FlowFormatError naming the 1-based file row.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_flow_csv(fh, columns=columns, label_column=label_column)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise FlowFormatError(1, "empty file") from None
    index = {name.strip().lower(): i for i, name in enumerate(header)}
    if columns is None:
        if all(f in index for f in FEATURES):
            columns = {f: f for f in FEATURES}
        else:
            columns = FLOWMETER_COLUMNS
    wanted = list(columns)
    try:
        cols = [index[columns[f].strip().lower()] for f in wanted]
    except KeyError as exc:
        raise FlowFormatError(1, f"missing column {exc.args[0]!r}") from None
    label_idx = index.get(label_column.strip().lower())

    X, y = [], []
    dropped_nonfinite = dropped_label = 0
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise FlowFormatError(rowno, f"expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(row[i]) for i in cols]
        except ValueError as exc:
            raise FlowFormatError(rowno, str(exc)) from None
        if not all(math.isfinite(v) for v in values):
            dropped_nonfinite += 1
            continue
        if label_idx is not None:
            label = parse_label(row[label_idx])
            if label is None:
                dropped_label += 1
                continue
            y.append(label.value)
        X.append(values)
    X = np.array(X, dtype=float).reshape(-1, len(wanted))
    return FlowDataset(X, np.array(y, dtype=object) if label_idx is not None else None,
                       tuple(wanted), dropped_nonfinite, dropped_label)


def write_flow_csv(fh: TextIO, X: np.ndarray, y: Optional[Iterable] = None,
                   feature_names: Sequence[str] = FEATURES) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(list(feature_names) + (["label"] if y is not None else []))
    labels = list(y) if y is not None else [None] * len(X)
    for row, label in zip(X, labels):
        writer.writerow([repr(float(v)) for v in row] + ([label] if label is not None else []))


def flow_csv_text(X: np.ndarray, y: Optional[Iterable] = None) -> str:
    buf = io.StringIO()
    write_flow_csv(buf, X, y)
    return buf.getvalue()
