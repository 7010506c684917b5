"""Isolation level table: node model, admissible edges, acceptance condition.

Every shipped level is decided by acyclicity of its dependency graph. The
snapshot-isolation graph splits each transaction into a begin node and a
commit node; all other levels use one node per transaction.

Node encoding: (txn_id, phase) with phase 0 for whole-transaction nodes,
1 for begin and 2 for commit events. The abstract initial transaction is
txn id -1 and precedes everything.
"""

from __future__ import annotations

from dataclasses import dataclass

INIT_TXN = -1

# Edge types. RW and PRW are always derived, never read off a trace.
WR = "wr"
WW = "ww"
RW = "rw"
PWR = "pwr"
PRW = "prw"
SESSION = "session"
REALTIME = "realtime"
INTRA = "intra"

PHASE_TXN = 0
PHASE_BEGIN = 1
PHASE_COMMIT = 2

Node = tuple[int, int]
Edge = tuple[Node, Node, str]

_PHASE_LABEL = {PHASE_TXN: "t", PHASE_BEGIN: "b", PHASE_COMMIT: "c"}


def node_label(node: Node) -> str:
    tid, phase = node
    if tid == INIT_TXN and phase == PHASE_TXN:
        return "init"
    return f"{_PHASE_LABEL[phase]}{tid}"


class UnsupportedLevel(Exception):
    pass


class EdgeTypeExcluded(Exception):
    pass


@dataclass(frozen=True)
class IsolationSpec:
    level: str
    node_model: str  # "txn" | "bc"
    edge_types: frozenset[str]
    condition: str = "acyclic"

    def nodes_for(self, txn_id: int) -> list[Node]:
        if self.node_model == "bc":
            return [(txn_id, PHASE_BEGIN), (txn_id, PHASE_COMMIT)]
        return [(txn_id, PHASE_TXN)]

    def admits(self, etype: str) -> bool:
        return etype in self.edge_types


_COMMON = frozenset({WR, WW, RW, PWR, PRW, SESSION})

_SPECS = {
    "ser": IsolationSpec("ser", "txn", _COMMON),
    "sser": IsolationSpec("sser", "txn", _COMMON | {REALTIME}),
    # SI intentionally leaves real-time edges out: they belong to the strict
    # variants, and the rewrite below still maps them for custom modules.
    "si": IsolationSpec("si", "bc", _COMMON | {INTRA}),
    # Repeatable read keeps item anti-dependencies and predicate reads but
    # drops predicate anti-dependencies (phantoms allowed).
    "rr": IsolationSpec("rr", "txn", frozenset({WR, WW, RW, PWR, SESSION})),
    "rc": IsolationSpec("rc", "txn", frozenset({WR, WW, PWR, SESSION})),
}

LEVELS = tuple(sorted(_SPECS))


def spec_for(level: str) -> IsolationSpec:
    """Look up the immutable spec row for a CLI level name."""
    try:
        return _SPECS[level]
    except KeyError:
        raise UnsupportedLevel(f"unsupported isolation level {level!r}") from None


# Under the begin/commit node model a logical dependency maps to one edge
# between event nodes; (src_phase, dst_phase) per logical type. Write
# dependencies land on the successor's begin: conflicting writers must not
# overlap (first committer wins), which is what separates this model from
# plain serialization graphs.
_BC_REWRITE = {
    WR: (PHASE_COMMIT, PHASE_BEGIN),
    PWR: (PHASE_COMMIT, PHASE_BEGIN),
    WW: (PHASE_COMMIT, PHASE_BEGIN),
    RW: (PHASE_BEGIN, PHASE_COMMIT),
    PRW: (PHASE_BEGIN, PHASE_COMMIT),
    SESSION: (PHASE_COMMIT, PHASE_BEGIN),
    REALTIME: (PHASE_COMMIT, PHASE_BEGIN),
    INTRA: (PHASE_BEGIN, PHASE_COMMIT),
}


def rewrite_edge(spec: IsolationSpec, src_txn: int, dst_txn: int, etype: str) -> Edge:
    """Map a logical dependency between transactions onto node-model endpoints."""
    if etype not in spec.edge_types and not (
        spec.node_model == "bc" and etype in _BC_REWRITE
    ):
        raise EdgeTypeExcluded(f"{etype} not admitted by {spec.level}")
    if spec.node_model == "bc":
        sp, dp = _BC_REWRITE[etype]
        return ((src_txn, sp), (dst_txn, dp), etype)
    if etype == INTRA:
        raise EdgeTypeExcluded("intra edges exist only in the begin/commit model")
    return ((src_txn, PHASE_TXN), (dst_txn, PHASE_TXN), etype)
