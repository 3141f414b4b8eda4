"""Featurize bidirectional TCP flows into fixed-width size/direction vectors.

Each flow is reduced to the sizes of its first N data packets (post-handshake),
written into 2N alternating direction slots: client-to-server sizes occupy one
parity, server-to-client the other. Whenever two consecutive packets travel in
the same direction, a zero fills the skipped slot, so slot parity always
encodes direction. A strictly one-directional flow therefore interleaves its
sizes with zeros. The output CSV (columns ``p1..p2N`` plus ``flow_id`` and an
optional ``label``) is the same schema the null-model trainer and the detector
consume.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .data import DataBatch
from .errors import DataQualityError

logger = logging.getLogger(__name__)

CLIENT_TO_SERVER = "cs"
SERVER_TO_CLIENT = "sc"
_DIRECTIONS = (CLIENT_TO_SERVER, SERVER_TO_CLIENT)

DEFAULT_PACKET_COUNT = 10


@dataclass(frozen=True)
class FlowRecord:
    """One flow: ordered (size, direction) packets after handshake completion."""

    flow_id: str
    packets: tuple[tuple[int, str], ...]
    label: str | None = None

    def __post_init__(self) -> None:
        for size, direction in self.packets:
            if direction not in _DIRECTIONS:
                raise DataQualityError(
                    f"flow {self.flow_id!r}: direction must be one of {_DIRECTIONS}, "
                    f"got {direction!r}"
                )
            if not isinstance(size, int) or isinstance(size, bool) or size <= 0:
                raise DataQualityError(
                    f"flow {self.flow_id!r}: packet sizes must be positive integers, "
                    f"got {size!r}"
                )


@dataclass(frozen=True)
class FlowFeatureVector:
    """2N-slot vector; slot parity encodes packet direction."""

    values: tuple[float, ...]
    flow_id: str
    label: str | None = None

    def __post_init__(self) -> None:
        if len(self.values) % 2 != 0:
            raise DataQualityError("feature vector length must be even")
        if any(v < 0 for v in self.values):
            raise DataQualityError("packet size slots cannot be negative")


def featurize(
    flow: FlowRecord,
    n_packets: int = DEFAULT_PACKET_COUNT,
    first_direction: str = CLIENT_TO_SERVER,
) -> FlowFeatureVector:
    """Slot the first ``n_packets`` packet sizes into a 2N alternating vector.

    Slots alternate direction starting from ``first_direction``. A packet whose
    direction does not match the current slot leaves a zero behind and lands in
    the following slot; 2N slots always suffice for N packets. Flows shorter
    than N packets are zero-padded.
    """
    if n_packets < 1:
        raise ValueError("n_packets must be >= 1")
    if first_direction not in _DIRECTIONS:
        raise ValueError(f"first_direction must be one of {_DIRECTIONS}")
    if not flow.packets:
        logger.warning("flow %r has no packets; emitting all-zero vector", flow.flow_id)

    values = [0.0] * (2 * n_packets)
    slot = 0
    for size, direction in flow.packets[:n_packets]:
        if direction != _slot_direction(slot, first_direction):
            slot += 1  # zero marks the absent opposite-direction packet
        values[slot] = float(size)
        slot += 1
    return FlowFeatureVector(values=tuple(values), flow_id=flow.flow_id, label=flow.label)


def _slot_direction(slot: int, first_direction: str) -> str:
    if slot % 2 == 0:
        return first_direction
    return SERVER_TO_CLIENT if first_direction == CLIENT_TO_SERVER else CLIENT_TO_SERVER


def ingest_flows(path, strict: bool = False) -> list[FlowRecord]:
    """Read flows from JSONL: {"flow_id": str, "packets": [{"size", "dir"}], "label"?}.

    Malformed lines are logged with their line number and skipped; with
    ``strict=True`` the first malformed line aborts ingestion instead.
    """
    records: list[FlowRecord] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(_parse_flow_line(line))
            except (DataQualityError, ValueError, KeyError, TypeError) as exc:
                if strict:
                    raise DataQualityError(f"{path}:{lineno}: {exc}") from exc
                logger.warning("%s:%d: skipping malformed flow: %s", path, lineno, exc)
    return records


def _parse_flow_line(line: str) -> FlowRecord:
    row = json.loads(line)
    packets = tuple((packet["size"], packet["dir"]) for packet in row["packets"])
    return FlowRecord(
        flow_id=str(row["flow_id"]), packets=packets, label=row.get("label")
    )


def flows_to_batch(
    flows: list[FlowRecord],
    n_packets: int = DEFAULT_PACKET_COUNT,
    first_direction: str = CLIENT_TO_SERVER,
) -> DataBatch:
    """Featurize every flow and assemble the detector-ready batch."""
    if not flows:
        raise DataQualityError("no flows to featurize")
    vectors = [featurize(flow, n_packets, first_direction) for flow in flows]
    names = tuple(f"p{i + 1}" for i in range(2 * n_packets))
    labels = None
    if any(v.label is not None for v in vectors):
        labels = np.array(["" if v.label is None else v.label for v in vectors])
    return DataBatch(
        X=np.array([v.values for v in vectors], dtype=float),
        feature_names=names,
        labels=labels,
        ids=tuple(v.flow_id for v in vectors),
    )
