"""Abstract semantic graph: known edges, write history, and read lineage.

Building the ASG is the structural half of checking: it indexes every write
and delete, resolves each observed read to its candidate writers, applies
read-your-own-write policy, and fails fast on data-integrity violations
(values nobody committed). Ambiguities that need constraint solving are left
as multi-candidate lineage entries and phantom markers for the IR passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .levels import (
    INIT_TXN,
    INTRA,
    REALTIME,
    SESSION,
    WR,
    WW,
    Edge,
    IsolationSpec,
    Node,
    rewrite_edge,
)
from .trace import (
    Delete,
    Get,
    Hints,
    IterNext,
    IterOpen,
    Put,
    RyowPolicy,
    Scan,
    Status,
    Trace,
    validate_trace,
)


class _Tombstone:
    """Sentinel write value recorded for deletes."""

    def __repr__(self):
        return "TOMBSTONE"


TOMBSTONE = _Tombstone()

# Lineage value for reads that returned NULL.
ABSENT = None


class IntegrityViolation(Exception):
    """A read observed a value no committed transaction (or the initial state) wrote."""

    def __init__(self, detail: str, txn_id: int | None = None, key: bytes | None = None):
        super().__init__(detail)
        self.detail = detail
        self.txn_id = txn_id
        self.key = key


class IteratorProtocolError(Exception):
    """IterNext without a matching IterOpen."""


class VersionSetMismatch(Exception):
    """A version-set hint contradicts what the query returned."""


class NoExplanation(Exception):
    """An in-range key is missing from a query result and nothing can explain it."""

    def __init__(self, detail: str, txn_id: int | None = None, key: bytes | None = None):
        super().__init__(detail)
        self.detail = detail
        self.txn_id = txn_id
        self.key = key


class UniqueValueContradiction(Exception):
    """The unique-values hint is asserted but a value has several writers."""


@dataclass(frozen=True)
class WriteEvent:
    txn_id: int
    op_index: int
    value: object  # bytes or TOMBSTONE


@dataclass
class KeyHistory:
    w_set: list[WriteEvent] = field(default_factory=list)
    ver_order: set[tuple[int, int]] = field(default_factory=set)


@dataclass(frozen=True)
class LineageEntry:
    reader: int
    op_index: int
    cand_ws: frozenset[int]
    kind: str  # "read" | "scan" | "iter"
    ver_set: frozenset[int] | None = None


@dataclass(frozen=True)
class Phantom:
    """An in-range key a predicate query did not return.

    candidates holds the transactions whose deletion (or the initial absence,
    as INIT_TXN) could explain the miss; empty means no explanation exists.
    """

    txn_id: int
    op_index: int
    key: bytes
    candidates: frozenset[int]
    kind: str  # "scan" | "iter"


@dataclass
class ASG:
    spec: IsolationSpec
    nodes: list[Node] = field(default_factory=list)
    # edge -> provenance tag; insertion order is deterministic
    known: dict[Edge, str] = field(default_factory=dict)
    write_history: dict[bytes, KeyHistory] = field(default_factory=dict)
    read_lineage: dict[tuple[bytes, object], list[LineageEntry]] = field(
        default_factory=dict
    )
    phantoms: list[Phantom] = field(default_factory=list)
    txn_ids: list[int] = field(default_factory=list)  # committed, sorted
    initial_state: dict[bytes, bytes] = field(default_factory=dict)
    init_txn: int = INIT_TXN

    def add_known(self, src_txn: int, dst_txn: int, etype: str, provenance: str) -> None:
        edge = rewrite_edge(self.spec, src_txn, dst_txn, etype)
        self.known.setdefault(edge, provenance)

    def final_writes(self, key: bytes) -> dict[int, object]:
        """Committed txn -> its last written value for key."""
        out: dict[int, object] = {}
        for ev in self.write_history.get(key, KeyHistory()).w_set:
            out[ev.txn_id] = ev.value
        return out

    def writers(self, key: bytes) -> set[int]:
        return {ev.txn_id for ev in self.write_history.get(key, KeyHistory()).w_set}


@dataclass
class _TxnScratch:
    """Per-transaction walk state: own pending writes and iterator bookkeeping."""

    pending: dict[bytes, object] = field(default_factory=dict)
    iter_range: dict[int, tuple[bytes, bytes]] = field(default_factory=dict)
    iter_open_idx: dict[int, int] = field(default_factory=dict)
    iter_pending_at_open: dict[int, dict[bytes, object]] = field(default_factory=dict)


def committed_subtrace(t: Trace) -> Trace:
    """Drop aborted and ongoing transactions, keeping sessions and hints."""
    keep = {tid for tid, txn in t.transactions.items() if txn.status is Status.COMMITTED}
    hints = replace(
        t.hints,
        version_order=frozenset(
            (k, a, b) for k, a, b in t.hints.version_order if a in keep and b in keep
        ),
        version_sets={
            (tid, q): vs for (tid, q), vs in t.hints.version_sets.items() if tid in keep
        },
    )
    return Trace(
        transactions={tid: t.transactions[tid] for tid in sorted(keep)},
        sessions={
            sid: [tid for tid in tids if tid in keep] for sid, tids in t.sessions.items()
        },
        hints=hints,
        initial_state=dict(t.initial_state),
    )


def real_time_pairs(t: Trace) -> list[tuple[int, int]]:
    """Transitive reduction of the commits-before-begins relation.

    Sweeps begin/commit events in time order keeping a frontier of maximal
    committed transactions; the emitted pairs reach every (commit < begin)
    pair through transitivity.
    """
    txns = [
        txn
        for txn in t.committed()
        if txn.ts_begin is not None and txn.ts_commit is not None
    ]
    events = []  # begins sort before commits at equal timestamps
    for txn in txns:
        events.append((txn.ts_begin, 0, txn.txn_id, txn))
        events.append((txn.ts_commit, 1, txn.txn_id, txn))
    events.sort(key=lambda e: e[:3])
    frontier: list = []
    pairs: list[tuple[int, int]] = []
    for _ts, kind, _tid, txn in events:
        if kind == 0:
            for prev in frontier:
                pairs.append((prev.txn_id, txn.txn_id))
        else:
            frontier = [p for p in frontier if p.ts_commit >= txn.ts_begin]
            frontier.append(txn)
    return pairs


def session_pairs(t: Trace) -> list[tuple[int, int]]:
    """Consecutive committed transactions per session, in issue order."""
    pairs = []
    for sid in sorted(t.sessions):
        prev = None
        for tid in t.sessions[sid]:
            txn = t.transactions[tid]
            if txn.status is not Status.COMMITTED:
                continue
            if prev is not None:
                pairs.append((prev, tid))
            prev = tid
    return pairs


def _own_matches(own: object, observed: bytes | None) -> bool:
    if own is TOMBSTONE:
        return observed is None
    return isinstance(own, bytes) and own == observed


class _Resolver:
    """Shared candidate-writer computation over the committed write set."""

    def __init__(self, t: Trace, spec: IsolationSpec, hints: Hints, asg: ASG):
        self.t = t
        self.spec = spec
        self.hints = hints
        self.asg = asg
        self.initial = t.initial_state
        self.final: dict[bytes, dict[int, object]] = {}
        self.deleters: dict[bytes, set[int]] = {}
        self.by_value: dict[tuple[bytes, bytes], set[int]] = {}

    def compute_indexes(self) -> None:
        for key, hist in self.asg.write_history.items():
            finals: dict[int, object] = {}
            for ev in hist.w_set:  # op order within a txn; last one wins
                finals[ev.txn_id] = ev.value
            self.final[key] = finals
            for tid, val in finals.items():
                if val is TOMBSTONE:
                    self.deleters.setdefault(key, set()).add(tid)
                else:
                    self.by_value.setdefault((key, val), set()).add(tid)
        for key, val in self.initial.items():
            self.final.setdefault(key, {})[INIT_TXN] = val
            self.by_value.setdefault((key, val), set()).add(INIT_TXN)

    def external_candidates(self, key: bytes, observed: bytes | None, self_id: int):
        if observed is None:
            cands = set(self.deleters.get(key, set()))
            if key not in self.initial:
                cands.add(INIT_TXN)
        else:
            cands = set(self.by_value.get((key, observed), set()))
        cands.discard(self_id)
        return cands

    def record_read(self, txn_id: int, idx: int, key: bytes, observed, kind: str,
                    own, ver_set=None) -> None:
        """Resolve one observed (key, value) against policy and writers."""
        policy = self.hints.ryow
        if own is not None:
            if policy is RyowPolicy.MUST_OWN:
                if _own_matches(own, observed):
                    return
                raise IntegrityViolation(
                    f"txn {txn_id} must read its own write of {key!r} but observed "
                    f"{observed!r}", txn_id, key)
            if policy is RyowPolicy.EITHER and _own_matches(own, observed):
                return
        cands = self.external_candidates(key, observed, txn_id)
        if ver_set is not None:
            cands &= set(ver_set)
        if not cands:
            what = "NULL" if observed is None else repr(observed)
            raise IntegrityViolation(
                f"txn {txn_id} read {what} for key {key!r} with no committed writer",
                txn_id, key)
        if self.hints.unique_values and observed is not None and len(cands) > 1:
            raise UniqueValueContradiction(
                f"value {observed!r} for key {key!r} has writers {sorted(cands)}")
        entry = LineageEntry(txn_id, idx, frozenset(cands), kind,
                             frozenset(ver_set) if ver_set is not None else None)
        self.asg.read_lineage.setdefault((key, observed), []).append(entry)
        if kind == "read" and len(cands) == 1:
            (w,) = cands
            self.asg.add_known(w, txn_id, WR, "read_dep")


def build_asg(t: Trace, spec: IsolationSpec, hints: Hints | None = None) -> ASG:
    """Construct the ASG for a validated trace.

    Raises IntegrityViolation when a read cannot be attributed to any
    committed writer, and IteratorProtocolError for malformed iterator use.
    """
    hints = hints if hints is not None else t.hints
    problems = validate_trace(t)
    if problems:
        raise ValueError(f"trace fails validation: {problems[0]}")

    asg = ASG(spec=spec, initial_state=dict(t.initial_state))
    res = _Resolver(t, spec, hints, asg)
    committed = sorted(t.committed(), key=lambda txn: txn.txn_id)
    asg.txn_ids = [txn.txn_id for txn in committed]

    for tid in [INIT_TXN] + asg.txn_ids:
        asg.nodes.extend(spec.nodes_for(tid))
        if spec.node_model == "bc":
            asg.add_known(tid, tid, INTRA, "intra")

    for txn in committed:
        for idx, op in enumerate(txn.ops):
            if isinstance(op, Put):
                asg.write_history.setdefault(op.key, KeyHistory()).w_set.append(
                    WriteEvent(txn.txn_id, idx, op.value))
            elif isinstance(op, Delete):
                asg.write_history.setdefault(op.key, KeyHistory()).w_set.append(
                    WriteEvent(txn.txn_id, idx, TOMBSTONE))
    res.compute_indexes()

    for key, a, b in sorted(hints.version_order):
        asg.write_history[key].ver_order.add((a, b))
        asg.add_known(a, b, WW, "ver_order")
    if hints.session_order and spec.admits(SESSION):
        for a, b in session_pairs(t):
            asg.add_known(a, b, SESSION, "session")
    if hints.real_time and spec.admits(REALTIME):
        for a, b in real_time_pairs(t):
            asg.add_known(a, b, REALTIME, "real_time")

    for txn in committed:
        scratch = _TxnScratch()
        for idx, op in enumerate(txn.ops):
            if isinstance(op, Put):
                scratch.pending[op.key] = op.value
            elif isinstance(op, Delete):
                scratch.pending[op.key] = TOMBSTONE
            elif isinstance(op, Get):
                own = scratch.pending.get(op.key)
                res.record_read(txn.txn_id, idx, op.key, op.result, "read", own)
            elif isinstance(op, IterOpen):
                scratch.iter_range[op.iter_id] = (op.start, op.end)
            elif isinstance(op, IterNext):
                if op.iter_id not in scratch.iter_range:
                    raise IteratorProtocolError(
                        f"txn {txn.txn_id}: iter {op.iter_id} next before open")
    # Scan/IterNext results and phantoms are handled by resolve_predicate_reads.
    return asg


def resolve_predicate_reads(asg: ASG, t: Trace, hints: Hints | None = None) -> ASG:
    """Attach predicate-read lineage and phantom markers for scans and iterators."""
    hints = hints if hints is not None else t.hints
    res = _Resolver(t, asg.spec, hints, asg)
    res.compute_indexes()

    for txn in sorted(t.committed(), key=lambda txn: txn.txn_id):
        scratch = _TxnScratch()
        iter_returned: dict[int, list[bytes]] = {}
        iter_exhausted: dict[int, bool] = {}
        for idx, op in enumerate(txn.ops):
            if isinstance(op, Put):
                scratch.pending[op.key] = op.value
            elif isinstance(op, Delete):
                scratch.pending[op.key] = TOMBSTONE
            elif isinstance(op, Scan):
                pending = dict(scratch.pending)
                for k, v in op.results:
                    _resolve_item(res, txn.txn_id, idx, k, v, pending.get(k), "scan",
                                  _hinted_writer(hints, txn.txn_id, idx, k))
                _resolve_misses(res, txn.txn_id, idx, op.start, op.end,
                                [k for k, _ in op.results], None, pending, "scan", hints)
            elif isinstance(op, IterOpen):
                scratch.iter_range[op.iter_id] = (op.start, op.end)
                scratch.iter_open_idx[op.iter_id] = idx
                scratch.iter_pending_at_open[op.iter_id] = dict(scratch.pending)
                iter_returned[op.iter_id] = []
                iter_exhausted[op.iter_id] = False
            elif isinstance(op, IterNext):
                if op.iter_id not in scratch.iter_range:
                    raise IteratorProtocolError(
                        f"txn {txn.txn_id}: iter {op.iter_id} next before open")
                if op.result is None:
                    iter_exhausted[op.iter_id] = True
                else:
                    k, v = op.result
                    iter_returned[op.iter_id].append(k)
                    open_idx = scratch.iter_open_idx[op.iter_id]
                    _resolve_item(res, txn.txn_id, idx, k, v,
                                  scratch.iter_pending_at_open[op.iter_id].get(k),
                                  "iter", _hinted_writer(hints, txn.txn_id, open_idx, k))
        for iid in sorted(scratch.iter_range):
            lo, hi = scratch.iter_range[iid]
            open_idx = scratch.iter_open_idx[iid]
            returned = iter_returned.get(iid, [])
            if iter_exhausted.get(iid):
                bound = None  # the whole range was observed empty past the items
            elif returned:
                bound = returned[-1]
            else:
                continue  # nothing returned, nothing exhausted: no constraints
            _resolve_misses(res, txn.txn_id, open_idx, lo, hi, returned, bound,
                            scratch.iter_pending_at_open[iid], "iter", hints)
    return asg


def _hinted_writer(hints: Hints, txn_id: int, op_index: int, key: bytes):
    """Writer named by a version-set hint, -2 when the hint omits the key."""
    vs = hints.version_sets.get((txn_id, op_index))
    if vs is None:
        return None
    for k, w in vs:
        if k == key:
            return w
    return -2


def _resolve_item(res: _Resolver, txn_id: int, idx: int, key: bytes, value,
                  own, kind: str, hinted) -> None:
    """One returned (key, value) pair from a scan or iterator."""
    if hinted == -2:
        raise VersionSetMismatch(
            f"txn {txn_id} returned {key!r} absent from its version set")
    if value is None:
        # Tombstone item: the query read the deleted version.
        policy = res.hints.ryow
        if own is TOMBSTONE and policy in (RyowPolicy.MUST_OWN, RyowPolicy.EITHER):
            return
        if policy is RyowPolicy.MUST_OWN and own is not None:
            raise IntegrityViolation(
                f"txn {txn_id} query must observe own write of {key!r}", txn_id, key)
        cands = set(res.deleters.get(key, set()))
        cands.discard(txn_id)
        if hinted is not None:
            if hinted not in cands:
                raise VersionSetMismatch(
                    f"version set names {hinted} for {key!r} but it is not a deleter")
            cands = {hinted}
        if not cands:
            raise IntegrityViolation(
                f"txn {txn_id} observed a tombstone for {key!r} nobody wrote",
                txn_id, key)
        res.asg.read_lineage.setdefault((key, TOMBSTONE), []).append(
            LineageEntry(txn_id, idx, frozenset(cands), kind))
        return
    ver_set = None
    if hinted is not None:
        if res.final.get(key, {}).get(hinted) != value:
            raise VersionSetMismatch(
                f"version set says txn {hinted} wrote {key!r}={value!r}, trace disagrees")
        ver_set = {hinted}
    res.record_read(txn_id, idx, key, value, kind, own, ver_set)


def _resolve_misses(res: _Resolver, txn_id: int, idx: int, lo: bytes, hi: bytes,
                    returned: list[bytes], bound: bytes | None, pending,
                    kind: str, hints: Hints) -> None:
    """Phantom markers for in-range keys the query did not return.

    bound limits the constrained region for iterators that never exhausted:
    only keys at or below the last returned key are accounted for.
    """
    returned_set = set(returned)
    universe = {k for k in res.final if lo <= k < hi}
    policy = hints.ryow
    for key in sorted(universe):
        if key in returned_set:
            continue
        if bound is not None and key > bound:
            continue
        own = pending.get(key)
        if own is not None:
            if own is TOMBSTONE and policy in (RyowPolicy.MUST_OWN, RyowPolicy.EITHER):
                continue  # hidden by the txn's own delete
            if policy is RyowPolicy.MUST_OWN:
                raise IntegrityViolation(
                    f"txn {txn_id} query missed its own write of {key!r}", txn_id, key)
        hinted = _hinted_writer(hints, txn_id, idx, key)
        if hinted is not None and hinted != -2:
            if hinted in res.deleters.get(key, set()):
                res.asg.phantoms.append(
                    Phantom(txn_id, idx, key, frozenset({hinted}), kind))
                continue
            raise VersionSetMismatch(
                f"version set names a live version of {key!r} but the query missed it")
        if hints.tombstones:
            # Deleted keys would have come back as tombstones, so the only
            # explanation left is that the key never existed at query time.
            cands = set() if key in res.initial else {INIT_TXN}
        else:
            cands = set(res.deleters.get(key, set()))
            cands.discard(txn_id)
            if key not in res.initial:
                cands.add(INIT_TXN)
        res.asg.phantoms.append(Phantom(txn_id, idx, key, frozenset(cands), kind))
