"""In-process partitioned publish/subscribe log.

Topics are split into partitions; a record's partition follows from a
stable hash of its key, so one key's records always land in one partition
and stay totally ordered there. Recording-mode topics retain everything and
are persisted to length-prefixed segment files that replay byte-identically;
streaming-mode topics keep a bounded ring per partition and drop the oldest
records under backpressure. Cross-partition ordering is unspecified; the
merged consume order is deterministic (t_ns, partition, offset) so replays
reproduce it.
"""

from __future__ import annotations

import json
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

MAX_PAYLOAD = 1 << 20  # 1 MiB
DEFAULT_PARTITIONS = 6
DEFAULT_TOPICS = ("gaze", "egoframes", "centralframes", "offsets", "annotations")

_RECORD_HEADER = struct.Struct(">IqH")  # payload length, t_ns, key length


@dataclass(frozen=True)
class Record:
    topic: str
    partition: int
    offset: int
    key: str
    t_ns: int
    payload: bytes


@dataclass(frozen=True)
class SessionAnnotation:
    label: str
    t_ref_ns: int

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("annotation label must be non-empty")


def partition_for(key: str, partitions: int) -> int:
    """Stable partition assignment: crc32(key) mod partitions."""
    return zlib.crc32(key.encode()) % partitions


class CorruptSegmentError(ValueError):
    """A persisted segment failed to decode; carries the first bad offset
    and the records that decoded cleanly before it."""

    def __init__(self, topic: str, partition: int, offset: int, records: list[Record]):
        super().__init__(f"corrupt segment {topic}/{partition} at offset {offset}")
        self.topic = topic
        self.partition = partition
        self.offset = offset
        self.records = records


class _Partition:
    def __init__(self, retention: int | None):
        self.retention = retention
        self.records: list[Record] = []
        self.base_offset = 0  # offset of records[0]
        self.next_offset = 0
        self.lock = threading.Lock()
        self.evicted = 0

    def append(self, record: Record) -> None:
        self.records.append(record)
        self.next_offset += 1
        if self.retention is not None and len(self.records) > self.retention:
            drop = len(self.records) - self.retention
            del self.records[:drop]
            self.base_offset += drop
            self.evicted += drop

    def snapshot_from(self, offset: int) -> list[Record]:
        with self.lock:
            start = max(offset, self.base_offset)
            return self.records[start - self.base_offset:]


class _Topic:
    def __init__(self, name: str, partitions: int, retention: int | None):
        if partitions < 1:
            raise ValueError("topic needs at least 1 partition")
        self.name = name
        self.partitions = [_Partition(retention) for _ in range(partitions)]
        self.last_seen: dict[str, int] = {}  # key -> last published t_ns


class StallMonitor:
    """Emits one alert when a key goes silent beyond max_silence, and one
    clear event when it resumes."""

    def __init__(self, max_silence_ms: float):
        self.max_silence_ns = int(max_silence_ms * 1e6)
        self.last_seen: dict[str, int] = {}
        self.alerting: set[str] = set()
        self._events: list[dict] = []
        self._lock = threading.Lock()

    def observe(self, key: str, t_ns: int) -> None:
        with self._lock:
            if key in self.alerting:
                self.alerting.discard(key)
                self._events.append({"type": "clear", "key": key, "t_ns": t_ns})
            prev = self.last_seen.get(key)
            self.last_seen[key] = t_ns if prev is None else max(prev, t_ns)

    def check(self, now_ns: int) -> list[dict]:
        """Evaluate silence against `now_ns` and drain pending events."""
        with self._lock:
            for key, last in self.last_seen.items():
                if key not in self.alerting and now_ns - last > self.max_silence_ns:
                    self.alerting.add(key)
                    self._events.append({"type": "alert", "key": key, "last_seen_ns": last})
            events, self._events = self._events, []
            return events


class StreamHub:
    """Multi-producer, multi-consumer partitioned log.

    mode "record" keeps unbounded partitions and, when a session directory
    is attached, makes every publish durable before returning. mode
    "stream" bounds each partition to `retention` records with drop-oldest
    eviction.
    """

    def __init__(self, mode: str = "record", session_dir: Path | str | None = None,
                 retention: int = 1000):
        if mode not in ("record", "stream"):
            raise ValueError(f"unknown hub mode: {mode}")
        self.mode = mode
        self.retention = retention if mode == "stream" else None
        self.topics: dict[str, _Topic] = {}
        self.monitors: dict[str, StallMonitor] = {}
        self._lock = threading.Lock()
        self._data_cond = threading.Condition(self._lock)
        self._files: dict[tuple[str, int], object] = {}
        self.session_dir = Path(session_dir) if session_dir else None
        if self.session_dir:
            self.session_dir.mkdir(parents=True, exist_ok=True)

    # -- topics ----------------------------------------------------------

    def create_topic(self, name: str, partitions: int = DEFAULT_PARTITIONS) -> None:
        with self._lock:
            if name not in self.topics:
                self.topics[name] = _Topic(name, partitions, self.retention)

    def create_default_topics(self, partitions: int = DEFAULT_PARTITIONS) -> None:
        for name in DEFAULT_TOPICS:
            self.create_topic(name, partitions)

    def _topic(self, name: str) -> _Topic:
        topic = self.topics.get(name)
        if topic is None:
            raise KeyError(f"unknown topic: {name}")
        return topic

    # -- publish / consume -------------------------------------------------

    def publish(self, topic: str, key: str, t_ns: int, payload: bytes) -> tuple[int, int]:
        if len(payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD} byte limit")
        t = self._topic(topic)
        pi = partition_for(key, len(t.partitions))
        part = t.partitions[pi]
        with part.lock:
            record = Record(topic=topic, partition=pi, offset=part.next_offset,
                            key=key, t_ns=t_ns, payload=payload)
            part.append(record)
            if self.session_dir is not None:
                self._persist(record)
        with self._lock:
            t.last_seen[key] = max(t.last_seen.get(key, t_ns), t_ns)
            monitor = self.monitors.get(topic)
            self._data_cond.notify_all()
        if monitor is not None:
            monitor.observe(key, t_ns)
        return pi, record.offset

    def publish_json(self, topic: str, key: str, t_ns: int, obj: dict) -> tuple[int, int]:
        return self.publish(topic, key, t_ns, json.dumps(obj, sort_keys=True).encode())

    def earliest_offset(self, topic: str, partition: int) -> int:
        return self._topic(topic).partitions[partition].base_offset

    def consume(self, topic: str, group: str = "default", from_offset: int = 0,
                timeout_s: float | None = None) -> Iterator[Record]:
        """Iterate records merged across partitions by (t_ns, partition, offset).

        Per-partition order always matches publish order. Independent groups
        each see the full stream. In streaming mode a timeout makes the
        iterator block for new data before finishing; without one it yields
        the current snapshot and stops.
        """
        del group  # groups are isolated by construction: no shared cursors
        t = self._topic(topic)
        positions = [max(from_offset, p.base_offset) for p in t.partitions]
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        while True:
            batch: list[Record] = []
            for pi, part in enumerate(t.partitions):
                fresh = part.snapshot_from(positions[pi])
                if fresh:
                    positions[pi] = fresh[-1].offset + 1
                    batch.extend(fresh)
            if batch:
                batch.sort(key=lambda r: (r.t_ns, r.partition, r.offset))
                yield from batch
                continue
            if deadline is None:
                return
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return
            with self._data_cond:
                self._data_cond.wait(timeout=remaining)

    # -- stall alerts --------------------------------------------------------

    def monitor(self, topic: str, max_silence_ms: float) -> StallMonitor:
        self._topic(topic)
        mon = StallMonitor(max_silence_ms)
        with self._lock:
            self.monitors[topic] = mon
            for key, t_ns in self.topics[topic].last_seen.items():
                mon.last_seen[key] = t_ns
        return mon

    # -- persistence --------------------------------------------------------

    def _persist(self, record: Record) -> None:
        fkey = (record.topic, record.partition)
        f = self._files.get(fkey)
        if f is None:
            d = self.session_dir / record.topic
            d.mkdir(parents=True, exist_ok=True)
            f = open(d / f"{record.partition}.log", "ab")
            self._files[fkey] = f
        key_bytes = record.key.encode()
        f.write(_RECORD_HEADER.pack(len(record.payload), record.t_ns, len(key_bytes)))
        f.write(key_bytes)
        f.write(record.payload)
        f.flush()

    def append_annotation(self, annotation: SessionAnnotation) -> None:
        self.publish("annotations", "operator", annotation.t_ref_ns,
                     json.dumps({"label": annotation.label, "t_ns": annotation.t_ref_ns},
                                sort_keys=True).encode())
        if self.session_dir is not None:
            with open(self.session_dir / "annotations.jsonl", "a", newline="\n") as f:
                f.write(json.dumps({"label": annotation.label, "t_ns": annotation.t_ref_ns},
                                   sort_keys=True) + "\n")

    def close(self) -> None:
        for f in self._files.values():
            f.close()
        self._files.clear()


def load_partition_log(path: Path | str, topic: str, partition: int) -> list[Record]:
    """Decode one segment file; raises CorruptSegmentError at the first bad record."""
    records: list[Record] = []
    data = Path(path).read_bytes()
    pos = 0
    offset = 0
    while pos < len(data):
        if pos + _RECORD_HEADER.size > len(data):
            raise CorruptSegmentError(topic, partition, offset, records)
        plen, t_ns, klen = _RECORD_HEADER.unpack_from(data, pos)
        pos += _RECORD_HEADER.size
        if pos + klen + plen > len(data):
            raise CorruptSegmentError(topic, partition, offset, records)
        key = data[pos:pos + klen].decode()
        pos += klen
        payload = data[pos:pos + plen]
        pos += plen
        records.append(Record(topic=topic, partition=partition, offset=offset,
                              key=key, t_ns=t_ns, payload=payload))
        offset += 1
    return records


def replay_session(session_dir: Path | str, topics: Sequence[str] | None = None) -> dict[str, list[Record]]:
    """Reload a persisted session; per topic, records come back in the same
    deterministic merge order consume() used live."""
    session_dir = Path(session_dir)
    out: dict[str, list[Record]] = {}
    topic_dirs = [d for d in sorted(session_dir.iterdir()) if d.is_dir()]
    for tdir in topic_dirs:
        if topics is not None and tdir.name not in topics:
            continue
        merged: list[Record] = []
        for seg in sorted(tdir.glob("*.log")):
            partition = int(seg.stem)
            merged.extend(load_partition_log(seg, tdir.name, partition))
        merged.sort(key=lambda r: (r.t_ns, r.partition, r.offset))
        out[tdir.name] = merged
    return out


def read_annotations(session_dir: Path | str) -> list[SessionAnnotation]:
    path = Path(session_dir) / "annotations.jsonl"
    if not path.exists():
        return []
    out = []
    with open(path) as f:
        for line in f:
            d = json.loads(line)
            out.append(SessionAnnotation(label=d["label"], t_ref_ns=int(d["t_ns"])))
    return out
