"""Workload harness: reference store, trace generator, anomaly injector, oracle.

The generator executes transactions one at a time against an in-process map
store, so every produced trace has a serial explanation by construction. The
oracle goes the other way: it searches over serial orders of committed
transactions, replaying each prefix with full operation semantics, and
accepts iff some order reproduces every observed result. Both sides share
the same visibility rules, which makes them usable as ground truth for the
checker.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .asg import TOMBSTONE
from .trace import (
    Begin,
    Commit,
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
    Transaction,
)


class TooLarge(Exception):
    """The oracle's permutation search is capped at 10 committed transactions."""


class KeyspaceExhausted(Exception):
    """The anomaly injector found no usable key in the base trace."""


@dataclass(frozen=True)
class OpMix:
    """Percentages per operation slot; must sum to 100."""

    read: int = 0
    write: int = 0
    delete: int = 0
    scan: int = 0
    iterator: int = 0
    rmw: int = 0

    def total(self) -> int:
        return self.read + self.write + self.delete + self.scan + self.iterator + self.rmw


@dataclass(frozen=True)
class ValueSpace:
    kind: str  # "unique" | "duplicate_heavy"
    cardinality: int = 0


UNIQUE = ValueSpace("unique")


def duplicate_heavy(cardinality: int = 4) -> ValueSpace:
    return ValueSpace("duplicate_heavy", cardinality)


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    num_txns: int
    num_keys: int
    ops_per_txn: int
    op_mix: OpMix
    value_space: ValueSpace = UNIQUE
    scan_span_max: int = 8
    iter_k_max: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.op_mix.total() != 100:
            raise ValueError(f"op mix sums to {self.op_mix.total()}, not 100")
        for name in ("num_txns", "num_keys", "ops_per_txn", "scan_span_max", "iter_k_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def profile_to_json(p: WorkloadProfile) -> dict:
    vs = "unique" if p.value_space.kind == "unique" else {
        "kind": "duplicate_heavy", "cardinality": p.value_space.cardinality}
    return {
        "name": p.name,
        "numTxns": p.num_txns,
        "numKeys": p.num_keys,
        "opsPerTxn": p.ops_per_txn,
        "opMix": {
            "read": p.op_mix.read, "write": p.op_mix.write, "delete": p.op_mix.delete,
            "scan": p.op_mix.scan, "iterator": p.op_mix.iterator, "rmw": p.op_mix.rmw,
        },
        "valueSpace": vs,
        "scanSpanMax": p.scan_span_max,
        "iterKMax": p.iter_k_max,
        "seed": p.seed,
    }


def profile_from_json(obj: dict) -> WorkloadProfile:
    vs = obj.get("valueSpace", "unique")
    space = UNIQUE if vs == "unique" else ValueSpace("duplicate_heavy", int(vs["cardinality"]))
    mix = obj.get("opMix", {})
    p = WorkloadProfile(
        name=obj["name"],
        num_txns=int(obj["numTxns"]),
        num_keys=int(obj["numKeys"]),
        ops_per_txn=int(obj["opsPerTxn"]),
        op_mix=OpMix(**{k: int(v) for k, v in mix.items()}),
        value_space=space,
        scan_span_max=int(obj.get("scanSpanMax", 8)),
        iter_k_max=int(obj.get("iterKMax", 5)),
        seed=int(obj.get("seed", 0)),
    )
    p.validate()
    return p


_PRESET_MIXES = {
    # 50/50 blind reads and writes, unique values.
    "blindw": (OpMix(read=50, write=50), UNIQUE),
    # The full operation set with non-unique values.
    "randombench": (OpMix(read=25, write=25, delete=5, scan=10, iterator=10, rmw=25),
                    duplicate_heavy(4)),
    "randomrange": (OpMix(read=25, write=25, delete=5, scan=20, rmw=25),
                    duplicate_heavy(4)),
}


def preset(name: str, num_txns: int = 100, num_keys: int = 50, ops_per_txn: int = 8,
           seed: int = 0, **overrides) -> WorkloadProfile:
    if name not in _PRESET_MIXES:
        raise ValueError(f"unknown workload {name!r}; known: {sorted(_PRESET_MIXES)}")
    mix, space = _PRESET_MIXES[name]
    p = WorkloadProfile(name=name, num_txns=num_txns, num_keys=num_keys,
                        ops_per_txn=ops_per_txn, op_mix=mix, value_space=space,
                        seed=seed, **overrides)
    p.validate()
    return p


# --- shared visibility rules ------------------------------------------------


def _routes(policy: RyowPolicy, own, ext):
    """Visible values along the routes the policy admits.

    own/ext are bytes, TOMBSTONE, or None (absent). A transaction that wrote
    the key must use its own view under MUST_OWN; EITHER admits both.
    """
    if own is not None:
        if policy is RyowPolicy.MUST_OWN:
            return (own,)
        if policy is RyowPolicy.EITHER:
            return (own, ext)
    return (ext,)


def _value_visible(routes, value: bytes) -> bool:
    return any(isinstance(r, bytes) and r == value for r in routes)


def _tombstone_visible(routes) -> bool:
    return any(r is TOMBSTONE for r in routes)


def _absence_ok(routes, tombstones_hint: bool) -> bool:
    for r in routes:
        if r is None:
            return True
        if r is TOMBSTONE and not tombstones_hint:
            return True  # physical deletion: the key simply is not there
    return False


def _null_ok(routes) -> bool:
    # Point reads return NULL for both absent and deleted keys.
    return any(r is None or r is TOMBSTONE for r in routes)


class _Replay:
    """Checks one transaction's observations against a store state."""

    def __init__(self, store: dict, hints: Hints):
        self.store = store
        self.hints = hints
        self.pending: dict[bytes, object] = {}
        self.iters: dict[int, dict] = {}

    def _routes_for(self, key: bytes, pending: dict | None = None):
        pending = self.pending if pending is None else pending
        return _routes(self.hints.ryow, pending.get(key), self.store.get(key))

    def _universe(self, lo: bytes, hi: bytes, pending: dict) -> list[bytes]:
        keys = {k for k in self.store if lo <= k < hi}
        keys |= {k for k in pending if lo <= k < hi}
        return sorted(keys)

    def _span_absent(self, keys, lo_excl, hi_excl, pending) -> bool:
        for k in keys:
            if lo_excl is not None and k <= lo_excl:
                continue
            if k >= hi_excl:
                break
            if not _absence_ok(self._routes_for(k, pending), self.hints.tombstones):
                return False
        return True

    def _item_ok(self, key: bytes, value, pending) -> bool:
        routes = self._routes_for(key, pending)
        if value is None:  # tombstone result item
            return _tombstone_visible(routes)
        return _value_visible(routes, value)

    def step(self, op) -> bool:
        if isinstance(op, (Begin, Commit)):
            return True
        if isinstance(op, Put):
            self.pending[op.key] = op.value
            return True
        if isinstance(op, Delete):
            self.pending[op.key] = TOMBSTONE
            return True
        if isinstance(op, Get):
            routes = self._routes_for(op.key)
            if op.result is None:
                return _null_ok(routes)
            return _value_visible(routes, op.result)
        if isinstance(op, Scan):
            pending = self.pending
            returned = {k for k, _ in op.results}
            for k, v in op.results:
                if not self._item_ok(k, v, pending):
                    return False
            for k in self._universe(op.start, op.end, pending):
                if k in returned:
                    continue
                if not _absence_ok(self._routes_for(k, pending), self.hints.tombstones):
                    return False
            return True
        if isinstance(op, IterOpen):
            self.iters[op.iter_id] = {
                "range": (op.start, op.end),
                "pending": dict(self.pending),
                "last": None,
                "done": False,
            }
            return True
        if isinstance(op, IterNext):
            st = self.iters.get(op.iter_id)
            if st is None or st["done"]:
                return st is not None and op.result is None
            lo, hi = st["range"]
            pending = st["pending"]
            universe = self._universe(lo, hi, pending)
            if op.result is None:
                st["done"] = True
                return self._span_absent(universe, st["last"], hi, pending)
            k, v = op.result
            if not self._span_absent(universe, st["last"], k, pending):
                return False
            if not self._item_ok(k, v, pending):
                return False
            st["last"] = k
            return True
        return True

    def commit(self) -> dict:
        new = dict(self.store)
        new.update(self.pending)
        return new


def replay_txn(store: dict, txn: Transaction, hints: Hints) -> dict | None:
    """Replay one committed transaction; None when an observation mismatches."""
    rp = _Replay(store, hints)
    for op in txn.ops:
        if isinstance(op, (Begin, Commit)):
            continue
        if not rp.step(op):
            return None
    return rp.commit()


def replay_order(t: Trace, order: list[int]) -> bool:
    """True iff replaying committed txns in this serial order explains the trace."""
    store: dict = dict(t.initial_state)
    for tid in order:
        nxt = replay_txn(store, t.transactions[tid], t.hints)
        if nxt is None:
            return False
        store = nxt
    return True


@dataclass
class OracleVerdict:
    accepted: bool
    order: list[int] | None = None


def serializability_oracle(t: Trace) -> OracleVerdict:
    """Exhaustive search over serial orders of the committed transactions.

    Prunes order prefixes whose replay already mismatches and memoizes
    (remaining set, store state) pairs; both keep the verdict exact.
    """
    committed = sorted(t.committed(), key=lambda txn: txn.txn_id)
    if len(committed) > 10:
        raise TooLarge(f"{len(committed)} committed transactions (max 10)")
    txns = {txn.txn_id: txn for txn in committed}
    base = dict(t.initial_state)
    order: list[int] = []
    memo: set = set()

    def dfs(store: dict, remaining: frozenset) -> bool:
        if not remaining:
            return True
        key = (remaining, frozenset(store.items()))
        if key in memo:
            return False
        for tid in sorted(remaining):
            nxt = replay_txn(store, txns[tid], t.hints)
            if nxt is not None:
                order.append(tid)
                if dfs(nxt, remaining - {tid}):
                    return True
                order.pop()
        memo.add(key)
        return False

    if dfs(base, frozenset(txns)):
        return OracleVerdict(True, list(order))
    return OracleVerdict(False)


# --- trace generation --------------------------------------------------------


@dataclass
class GroundTruth:
    """Generator-side facts that deliberately stay out of the trace."""

    serial_order: list[int] = field(default_factory=list)
    iter_limits: dict[tuple[int, int], int] = field(default_factory=dict)


def _key_name(i: int, width: int) -> bytes:
    return f"k{i:0{width}d}".encode()


class _GenStore:
    def __init__(self, initial: dict, policy: RyowPolicy, tombstones: bool):
        self.data = dict(initial)
        self.policy = policy
        self.tombstones = tombstones

    def visible(self, key: bytes, pending: dict) -> bytes | None:
        if self.policy is not RyowPolicy.MUST_EXTERNAL and key in pending:
            v = pending[key]
            return None if v is TOMBSTONE else v
        v = self.data.get(key)
        return None if v is None or v is TOMBSTONE else v

    def range_items(self, lo: bytes, hi: bytes, pending: dict):
        """Merged view the store would return for [lo, hi)."""
        keys = {k for k in self.data if lo <= k < hi}
        overlay = self.policy is not RyowPolicy.MUST_EXTERNAL
        if overlay:
            keys |= {k for k in pending if lo <= k < hi}
        out = []
        for k in sorted(keys):
            if overlay and k in pending:
                v = pending[k]
                if v is not TOMBSTONE:
                    out.append((k, v))
                continue  # own deletes stay hidden even with tombstones on
            v = self.data.get(k)
            if v is TOMBSTONE:
                if self.tombstones:
                    out.append((k, None))
            elif v is not None:
                out.append((k, v))
        return out

    def apply(self, pending: dict) -> None:
        self.data.update(pending)


def generate_with_truth(
    p: WorkloadProfile,
    interleaving: int = 0,
    num_sessions: int = 8,
    ryow: RyowPolicy = RyowPolicy.EITHER,
    tombstones: bool = False,
    session_hint: bool = True,
    real_time_hint: bool = True,
    initial_fraction: float = 0.5,
) -> tuple[Trace, GroundTruth]:
    """Execute the profile serially against a reference store."""
    p.validate()
    rng = random.Random(f"{p.name}|{p.seed}|{interleaving}")
    width = len(str(p.num_keys))
    keys = [_key_name(i, width) for i in range(p.num_keys)]
    initial = {
        k: b"i" + k for i, k in enumerate(keys) if i % max(1, round(1 / initial_fraction)) == 0
    } if initial_fraction > 0 else {}
    store = _GenStore(initial, ryow, tombstones)
    truth = GroundTruth()

    counter = 0

    def fresh_value() -> bytes:
        nonlocal counter
        counter += 1
        if p.value_space.kind == "unique":
            return b"v%d" % counter
        return b"d%d" % rng.randrange(p.value_space.cardinality)

    mix = p.op_mix
    slots = (["read"] * mix.read + ["write"] * mix.write + ["delete"] * mix.delete
             + ["scan"] * mix.scan + ["iterator"] * mix.iterator + ["rmw"] * mix.rmw)
    trace = Trace(
        hints=Hints(
            unique_values=(p.value_space.kind == "unique"),
            tombstones=tombstones,
            session_order=session_hint,
            real_time=real_time_hint,
            ryow=ryow,
        ),
        initial_state=dict(initial),
    )
    sessions = min(num_sessions, p.num_txns)
    ts = 1_000_000
    for tid in range(1, p.num_txns + 1):
        sid = rng.randrange(sessions) + 1
        ops: list = [Begin()]
        pending: dict[bytes, object] = {}
        iter_id = 0
        for _ in range(p.ops_per_txn):
            kind = rng.choice(slots)
            key = rng.choice(keys)
            if kind == "read":
                ops.append(Get(key, store.visible(key, pending)))
            elif kind == "write":
                ops.append(Put(key, fresh_value()))
                pending[key] = ops[-1].value
            elif kind == "delete":
                ops.append(Delete(key))
                pending[key] = TOMBSTONE
            elif kind == "rmw":
                ops.append(Get(key, store.visible(key, pending)))
                ops.append(Put(key, fresh_value()))
                pending[key] = ops[-1].value
            elif kind in ("scan", "iterator"):
                i0 = rng.randrange(p.num_keys)
                span = rng.randint(1, p.scan_span_max)
                lo = keys[i0]
                hi = _key_name(min(i0 + span, p.num_keys), width)
                items = store.range_items(lo, hi, pending)
                if kind == "scan":
                    ops.append(Scan(lo, hi, tuple(items)))
                else:
                    iter_id += 1
                    limit = rng.randint(1, p.iter_k_max)
                    truth.iter_limits[(tid, iter_id)] = limit
                    ops.append(IterOpen(iter_id, lo, hi))
                    for j in range(limit):
                        if j < len(items):
                            ops.append(IterNext(iter_id, items[j]))
                        else:
                            ops.append(IterNext(iter_id, None))
                            break
        ops.append(Commit())
        store.apply(pending)
        trace.transactions[tid] = Transaction(
            tid, sid, tuple(ops), Status.COMMITTED, ts_begin=ts, ts_commit=ts + 1000)
        ts += 2000
        trace.sessions.setdefault(sid, []).append(tid)
        truth.serial_order.append(tid)
    return trace, truth


def generate_valid_trace(p: WorkloadProfile, interleaving: int = 0, **kwargs) -> Trace:
    trace, _truth = generate_with_truth(p, interleaving, **kwargs)
    return trace


# --- anomaly injection --------------------------------------------------------

ANOMALY_KINDS = (
    "lost_update",
    "read_skew",
    "g1c",
    "dirty_write",
    "fractured_read",
    "time_inversion",
)


@dataclass(frozen=True)
class AnomalySpec:
    kind: str
    count: int = 1
    seed: int = 0


class _Injector:
    def __init__(self, t: Trace, seed: int):
        self.rng = random.Random(f"inject|{seed}")
        self.trace = Trace(
            transactions=dict(t.transactions),
            sessions={sid: list(tids) for sid, tids in t.sessions.items()},
            hints=replace(t.hints, version_sets=dict(t.hints.version_sets)),
            initial_state=dict(t.initial_state),
        )
        written = set()
        for txn in t.transactions.values():
            for op in txn.ops:
                if isinstance(op, (Put, Delete)):
                    written.add(op.key)
        self.free_initial = [k for k in sorted(t.initial_state) if k not in written]
        self.written = written
        self.next_tid = max(t.transactions, default=0) + 1
        self.next_sid = max(t.sessions, default=0) + 1
        all_ts = [x for txn in t.transactions.values()
                  for x in (txn.ts_begin, txn.ts_commit) if x is not None]
        self.ts = max(all_ts, default=1_000_000) + 100_000
        self.synth_counter = 0
        self.value_counter = 0

    def take_initial_key(self) -> bytes:
        if not self.free_initial:
            raise KeyspaceExhausted("no initial-state key is free of writes")
        return self.free_initial.pop(0)

    def synth_key(self) -> bytes:
        while True:
            self.synth_counter += 1
            k = b"zz-anom-%04d" % self.synth_counter
            if k not in self.written and k not in self.trace.initial_state:
                return k

    def value(self, tag: str) -> bytes:
        self.value_counter += 1
        return f"a:{tag}:{self.value_counter}".encode()

    def add_txn(self, ops: list, ts_begin: int, ts_commit: int) -> int:
        tid = self.next_tid
        self.next_tid += 1
        sid = self.next_sid
        self.next_sid += 1
        self.trace.transactions[tid] = Transaction(
            tid, sid, tuple([Begin()] + ops + [Commit()]),
            Status.COMMITTED, ts_begin=ts_begin, ts_commit=ts_commit)
        self.trace.sessions[sid] = [tid]
        return tid

    def overlapping_pair(self, ops_a: list, ops_b: list) -> tuple[int, int]:
        # Concurrent interval stamps: neither commits before the other begins.
        base = self.ts
        self.ts += 40_000
        a = self.add_txn(ops_a, base, base + 20_000)
        b = self.add_txn(ops_b, base + 10_000, base + 30_000)
        return a, b

    def inject_one(self, kind: str) -> None:
        if kind == "lost_update":
            k = self.take_initial_key()
            v0 = self.trace.initial_state[k]
            self.overlapping_pair(
                [Get(k, v0), Put(k, self.value("lu1"))],
                [Get(k, v0), Put(k, self.value("lu2"))])
        elif kind in ("read_skew", "fractured_read"):
            x = self.take_initial_key()
            y = self.take_initial_key()
            y0 = self.trace.initial_state[y]
            vx, vy = self.value("w1"), self.value("w2")
            self.overlapping_pair(
                [Put(x, vx), Put(y, vy)],
                [Get(x, vx), Get(y, y0)])
        elif kind == "g1c":
            x = self.synth_key()
            y = self.synth_key()
            vx, vy = self.value("g1"), self.value("g2")
            self.overlapping_pair(
                [Put(x, vx), Get(y, vy)],
                [Put(y, vy), Get(x, vx)])
        elif kind == "dirty_write":
            x = self.synth_key()
            y = self.synth_key()
            a, b = self.overlapping_pair(
                [Put(x, self.value("d1")), Put(y, self.value("d2"))],
                [Put(x, self.value("d3")), Put(y, self.value("d4"))])
            self.trace.hints = replace(
                self.trace.hints,
                version_order=self.trace.hints.version_order
                | {(x, a, b), (y, b, a)})
        elif kind == "time_inversion":
            k = self.synth_key()
            base = self.ts
            self.ts += 40_000
            self.add_txn([Put(k, self.value("ti"))], base, base + 1_000)
            self.add_txn([Get(k, None)], base + 10_000, base + 11_000)
            self.trace.hints = replace(self.trace.hints, real_time=True)
        else:
            raise ValueError(f"unknown anomaly kind {kind!r}")
        self.written |= {
            op.key for txn in self.trace.transactions.values()
            for op in txn.ops if isinstance(op, (Put, Delete))}


def inject_anomaly(t: Trace, spec: AnomalySpec) -> Trace:
    """Append transactions realizing the requested anomaly instances."""
    if spec.count < 1:
        raise ValueError("anomaly count must be >= 1")
    if spec.kind not in ANOMALY_KINDS:
        raise ValueError(f"unknown anomaly kind {spec.kind!r}")
    inj = _Injector(t, spec.seed)
    for _ in range(spec.count):
        inj.inject_one(spec.kind)
    return inj.trace
