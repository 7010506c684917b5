"""Client-observed trace model: operations, transactions, sessions, hints.

A trace is the checker's sole input: every request to and response from the
database, grouped into transactions and sessions. Keys and values are opaque
byte strings; range order is lexicographic byte order.

The file format is UTF-8 JSON Lines. The first line is a header object
carrying the initial state and hints; each following line is one event.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

FORMAT_NAME = "isochk-trace"
FORMAT_VERSION = 1

# Sentinel carried in iterator results when the range is used up.
EXHAUSTED = None


class TraceError(Exception):
    """Base class for trace parsing failures."""


class MalformedRecord(TraceError):
    """A record has a missing, extra, or badly typed field."""


class InterleavedSession(TraceError):
    """Two transactions were open at once in a single session."""


class DanglingOp(TraceError):
    """An operation appeared outside its transaction's Begin..Commit/Abort span."""


class Status(Enum):
    COMMITTED = "committed"
    ABORTED = "aborted"
    ONGOING = "ongoing"


class RyowPolicy(Enum):
    """How a transaction's reads relate to its own earlier writes."""

    MUST_OWN = "must_own"
    MUST_EXTERNAL = "must_external"
    EITHER = "either"


@dataclass(frozen=True)
class Begin:
    pass


@dataclass(frozen=True)
class Commit:
    pass


@dataclass(frozen=True)
class Abort:
    pass


@dataclass(frozen=True)
class Put:
    key: bytes
    value: bytes


@dataclass(frozen=True)
class Get:
    key: bytes
    result: bytes | None  # None is a NULL read


@dataclass(frozen=True)
class Delete:
    key: bytes


@dataclass(frozen=True)
class Scan:
    start: bytes
    end: bytes  # exclusive
    # Result items are (key, value); value None marks a returned tombstone.
    results: tuple[tuple[bytes, bytes | None], ...]


@dataclass(frozen=True)
class IterOpen:
    iter_id: int
    start: bytes
    end: bytes


@dataclass(frozen=True)
class IterNext:
    iter_id: int
    result: tuple[bytes, bytes | None] | None  # None is EXHAUSTED


Op = Union[Begin, Commit, Abort, Put, Get, Delete, Scan, IterOpen, IterNext]


@dataclass
class Hints:
    """Side information supplied with a trace.

    version_order entries are (key, earlier_txn, later_txn). version_sets maps
    a predicate query, addressed as (txn_id, op_index), to the exact set of
    (key, writer_txn) versions it observed.
    """

    unique_values: bool = False
    tombstones: bool = False
    session_order: bool = False
    real_time: bool = False
    version_order: frozenset[tuple[bytes, int, int]] = frozenset()
    version_sets: dict[tuple[int, int], frozenset[tuple[bytes, int]]] = field(
        default_factory=dict
    )
    ryow: RyowPolicy = RyowPolicy.EITHER


@dataclass
class Transaction:
    txn_id: int
    session_id: int
    ops: tuple[Op, ...]
    status: Status = Status.COMMITTED
    ts_begin: int | None = None
    ts_commit: int | None = None


@dataclass
class Trace:
    transactions: dict[int, Transaction] = field(default_factory=dict)
    sessions: dict[int, list[int]] = field(default_factory=dict)
    hints: Hints = field(default_factory=Hints)
    initial_state: dict[bytes, bytes] = field(default_factory=dict)

    def committed(self) -> list[Transaction]:
        return [t for t in self.transactions.values() if t.status is Status.COMMITTED]


@dataclass(frozen=True)
class Violation:
    """One well-formedness breach found by validate_trace."""

    rule: str
    txn_id: int | None
    detail: str = ""


def _b64e(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


def _b64d(s) -> bytes:
    if not isinstance(s, str):
        raise MalformedRecord(f"expected base64 string, got {type(s).__name__}")
    try:
        return base64.b64decode(s.encode("ascii"), validate=True)
    except Exception as exc:
        raise MalformedRecord(f"bad base64: {s!r}") from exc


def _hints_to_json(h: Hints) -> dict:
    return {
        "unique_values": h.unique_values,
        "tombstones": h.tombstones,
        "session_order": h.session_order,
        "real_time": h.real_time,
        "version_order": [
            [_b64e(k), a, b] for k, a, b in sorted(h.version_order)
        ],
        "version_sets": [
            [t, q, [[_b64e(k), w] for k, w in sorted(vs)]]
            for (t, q), vs in sorted(h.version_sets.items())
        ],
        "ryow": h.ryow.value,
    }


def _hints_from_json(obj) -> Hints:
    if not isinstance(obj, dict):
        raise MalformedRecord("hints must be an object")
    try:
        return Hints(
            unique_values=bool(obj.get("unique_values", False)),
            tombstones=bool(obj.get("tombstones", False)),
            session_order=bool(obj.get("session_order", False)),
            real_time=bool(obj.get("real_time", False)),
            version_order=frozenset(
                (_b64d(k), int(a), int(b)) for k, a, b in obj.get("version_order", [])
            ),
            version_sets={
                (int(t), int(q)): frozenset((_b64d(k), int(w)) for k, w in vs)
                for t, q, vs in obj.get("version_sets", [])
            },
            ryow=RyowPolicy(obj.get("ryow", "either")),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad hints: {exc}") from exc


def _item_to_json(item: tuple[bytes, bytes | None]) -> list:
    k, v = item
    return [_b64e(k), None if v is None else _b64e(v)]


def _item_from_json(obj) -> tuple[bytes, bytes | None]:
    if not (isinstance(obj, list) and len(obj) == 2):
        raise MalformedRecord(f"result item must be a [key, value] pair: {obj!r}")
    k, v = obj
    return _b64d(k), None if v is None else _b64d(v)


def _op_to_event(op: Op, txn: Transaction) -> dict:
    ev: dict = {}
    if isinstance(op, Begin):
        ev["op"] = "begin"
        if txn.ts_begin is not None:
            ev["ts"] = txn.ts_begin
    elif isinstance(op, Commit):
        ev["op"] = "commit"
        if txn.ts_commit is not None:
            ev["ts"] = txn.ts_commit
    elif isinstance(op, Abort):
        ev["op"] = "abort"
    elif isinstance(op, Put):
        ev["op"] = "put"
        ev["k"] = _b64e(op.key)
        ev["v"] = _b64e(op.value)
    elif isinstance(op, Get):
        ev["op"] = "get"
        ev["k"] = _b64e(op.key)
        ev["res"] = None if op.result is None else _b64e(op.result)
    elif isinstance(op, Delete):
        ev["op"] = "del"
        ev["k"] = _b64e(op.key)
    elif isinstance(op, Scan):
        ev["op"] = "scan"
        ev["k"] = _b64e(op.start)
        ev["k2"] = _b64e(op.end)
        ev["res"] = [_item_to_json(it) for it in op.results]
    elif isinstance(op, IterOpen):
        ev["op"] = "iter_open"
        ev["it"] = op.iter_id
        ev["k"] = _b64e(op.start)
        ev["k2"] = _b64e(op.end)
    elif isinstance(op, IterNext):
        ev["op"] = "iter_next"
        ev["it"] = op.iter_id
        ev["res"] = "EXHAUSTED" if op.result is None else _item_to_json(op.result)
    else:
        raise TypeError(f"unknown op {op!r}")
    return ev


def _op_from_event(ev: dict) -> Op:
    kind = ev.get("op")
    if kind == "begin":
        return Begin()
    if kind == "commit":
        return Commit()
    if kind == "abort":
        return Abort()
    if kind == "put":
        return Put(_b64d(ev.get("k")), _b64d(ev.get("v")))
    if kind == "get":
        res = ev.get("res")
        return Get(_b64d(ev.get("k")), None if res is None else _b64d(res))
    if kind == "del":
        return Delete(_b64d(ev.get("k")))
    if kind == "scan":
        res = ev.get("res")
        if not isinstance(res, list):
            raise MalformedRecord("scan res must be a list")
        return Scan(
            _b64d(ev.get("k")),
            _b64d(ev.get("k2")),
            tuple(_item_from_json(it) for it in res),
        )
    if kind == "iter_open":
        return IterOpen(_int_field(ev, "it"), _b64d(ev.get("k")), _b64d(ev.get("k2")))
    if kind == "iter_next":
        res = ev.get("res")
        if res == "EXHAUSTED":
            return IterNext(_int_field(ev, "it"), None)
        return IterNext(_int_field(ev, "it"), _item_from_json(res))
    raise MalformedRecord(f"unknown op kind {kind!r}")


def _int_field(ev: dict, name: str) -> int:
    val = ev.get(name)
    if not isinstance(val, int) or isinstance(val, bool):
        raise MalformedRecord(f"field {name!r} must be an integer, got {val!r}")
    return val


def serialize_trace(t: Trace) -> bytes:
    """Encode a trace as JSON Lines; parse_trace inverts this exactly."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "initial": {_b64e(k): _b64e(v) for k, v in sorted(t.initial_state.items())},
        "hints": _hints_to_json(t.hints),
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    q = 0
    for sid in sorted(t.sessions):
        for tid in t.sessions[sid]:
            txn = t.transactions[tid]
            for op in txn.ops:
                ev = {"s": sid, "t": tid, "q": q}
                ev.update(_op_to_event(op, txn))
                lines.append(json.dumps(ev, separators=(",", ":")))
                q += 1
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_trace(data: bytes) -> Trace:
    """Decode a JSON Lines trace file.

    Raises MalformedRecord for structural problems, InterleavedSession when a
    session has two open transactions, and DanglingOp for operations outside
    a Begin..Commit/Abort span.
    """
    text = data.decode("utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return Trace()
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"bad header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise MalformedRecord("missing isochk-trace header")
    if header.get("version") != FORMAT_VERSION:
        raise MalformedRecord(f"unsupported version {header.get('version')!r}")
    initial = {
        _b64d(k): _b64d(v) for k, v in header.get("initial", {}).items()
    }
    hints = _hints_from_json(header.get("hints", {}))

    trace = Trace(hints=hints, initial_state=initial)
    open_in_session: dict[int, int] = {}
    ops_acc: dict[int, list[Op]] = {}
    meta: dict[int, Transaction] = {}
    last_q = None
    for ln in lines[1:]:
        try:
            ev = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"bad event: {exc}") from exc
        if not isinstance(ev, dict):
            raise MalformedRecord(f"event must be an object: {ln!r}")
        sid = _int_field(ev, "s")
        tid = _int_field(ev, "t")
        q = _int_field(ev, "q")
        if last_q is not None and q <= last_q:
            raise MalformedRecord(f"op sequence must increase: {q} after {last_q}")
        last_q = q
        op = _op_from_event(ev)
        ts = ev.get("ts")
        if ts is not None and (not isinstance(ts, int) or isinstance(ts, bool)):
            raise MalformedRecord(f"ts must be an integer: {ts!r}")

        if isinstance(op, Begin):
            if tid in meta:
                raise DanglingOp(f"txn {tid} began twice")
            if sid in open_in_session:
                raise InterleavedSession(
                    f"session {sid}: txn {tid} began while {open_in_session[sid]} open"
                )
            open_in_session[sid] = tid
            meta[tid] = Transaction(tid, sid, (), Status.ONGOING, ts_begin=ts)
            ops_acc[tid] = [op]
            trace.sessions.setdefault(sid, []).append(tid)
            continue
        if tid not in meta or meta[tid].session_id != sid:
            raise DanglingOp(f"txn {tid} op before begin")
        if open_in_session.get(sid) != tid:
            raise DanglingOp(f"txn {tid} op after termination")
        ops_acc[tid].append(op)
        if isinstance(op, Commit):
            meta[tid].status = Status.COMMITTED
            meta[tid].ts_commit = ts
            del open_in_session[sid]
        elif isinstance(op, Abort):
            meta[tid].status = Status.ABORTED
            del open_in_session[sid]

    for tid, txn in meta.items():
        txn.ops = tuple(ops_acc[tid])
        trace.transactions[tid] = txn
    return trace


def _scan_violations(txn: Transaction, op, idx: int, out: list[Violation]) -> None:
    prev = None
    for k, _v in op.results:
        if not (op.start <= k < op.end):
            out.append(
                Violation("ScanRangeViolation", txn.txn_id, f"op {idx}: key {k!r}")
            )
        if prev is not None and k <= prev:
            out.append(
                Violation("ScanOrderViolation", txn.txn_id, f"op {idx}: key {k!r}")
            )
        prev = k


def validate_trace(t: Trace) -> list[Violation]:
    """Check type invariants; an empty list means the trace is well formed.

    Violations are data, not exceptions: each one names the transaction and
    the rule it breaks.
    """
    out: list[Violation] = []
    for tid, txn in t.transactions.items():
        if tid != txn.txn_id:
            out.append(Violation("TxnIdMismatch", tid))
        if not txn.ops or not isinstance(txn.ops[0], Begin):
            out.append(Violation("BeginMissing", tid))
        for op in txn.ops[1:]:
            if isinstance(op, Begin):
                out.append(Violation("DuplicateBegin", tid))
        terminators = [i for i, op in enumerate(txn.ops) if isinstance(op, (Commit, Abort))]
        if txn.status is Status.ONGOING:
            if terminators:
                out.append(Violation("TerminatorMismatch", tid, "ongoing txn has terminator"))
        else:
            want = Commit if txn.status is Status.COMMITTED else Abort
            if len(terminators) != 1 or terminators[0] != len(txn.ops) - 1:
                out.append(Violation("TerminatorMismatch", tid))
            elif not isinstance(txn.ops[-1], want):
                out.append(Violation("TerminatorMismatch", tid, "status disagrees with last op"))
        if txn.ts_begin is not None and txn.ts_commit is not None:
            if txn.ts_commit < txn.ts_begin:
                out.append(Violation("ClockViolation", tid))
        iter_ranges: dict[int, tuple[bytes, bytes]] = {}
        iter_last: dict[int, bytes] = {}
        for idx, op in enumerate(txn.ops):
            if isinstance(op, Scan):
                _scan_violations(txn, op, idx, out)
            elif isinstance(op, IterOpen):
                iter_ranges[op.iter_id] = (op.start, op.end)
                iter_last.pop(op.iter_id, None)
            elif isinstance(op, IterNext):
                if op.iter_id not in iter_ranges:
                    out.append(Violation("IterWithoutOpen", tid, f"op {idx}"))
                    continue
                if op.result is EXHAUSTED:
                    continue
                k, _v = op.result
                lo, hi = iter_ranges[op.iter_id]
                if not (lo <= k < hi):
                    out.append(Violation("IterRangeViolation", tid, f"op {idx}: key {k!r}"))
                last = iter_last.get(op.iter_id)
                if last is not None and k <= last:
                    out.append(Violation("IterOrderViolation", tid, f"op {idx}: key {k!r}"))
                iter_last[op.iter_id] = k

    listed: list[int] = []
    for sid, tids in t.sessions.items():
        for tid in tids:
            listed.append(tid)
            txn = t.transactions.get(tid)
            if txn is None or txn.session_id != sid:
                out.append(Violation("SessionPartitionViolation", tid, f"session {sid}"))
    if len(listed) != len(set(listed)) or set(listed) != set(t.transactions):
        out.append(Violation("SessionPartitionViolation", None, "sessions do not partition txns"))

    writers: dict[bytes, set[int]] = {}
    for txn in t.committed():
        for op in txn.ops:
            if isinstance(op, (Put, Delete)):
                writers.setdefault(op.key, set()).add(txn.txn_id)
    for k, a, b in t.hints.version_order:
        for tid in (a, b):
            if tid not in writers.get(k, set()):
                out.append(
                    Violation("VersionOrderHintViolation", tid, f"not a writer of {k!r}")
                )
    return out
