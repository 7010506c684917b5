"""Lowering the ASG to the low-level IR: graph, expressions, superpositions.

Each dependency pass walks the ASG and either adds a known edge (the trace
pins the dependency down) or a superposition listing the mutually exclusive
ways the dependency could go. Anti-dependencies are never guessed directly:
they arrive as implications over read and write dependency variables.
User modules run after the built-in passes and may only add information.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .asg import ASG, NoExplanation, UniqueValueContradiction
from .levels import (
    INIT_TXN,
    PRW,
    PWR,
    REALTIME,
    RW,
    SESSION,
    WR,
    WW,
    IsolationSpec,
    Node,
    node_label,
    rewrite_edge,
)
from .trace import Hints, Trace


class VerOrderCycle(Exception):
    """A hinted version order contradicts itself."""


class ModuleContractViolation(Exception):
    """A user module removed a known edge."""


# --- LogicExpr AST (used for dumps and the public IR view) ---------------


@dataclass(frozen=True)
class Const:
    value: bool

    def __str__(self):
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Var:
    var_id: int

    def __str__(self):
        return f"e{self.var_id}"


@dataclass(frozen=True)
class Not:
    expr: object

    def __str__(self):
        return f"!{self.expr}"


@dataclass(frozen=True)
class And:
    items: tuple

    def __str__(self):
        return "(" + " & ".join(str(x) for x in self.items) + ")"


@dataclass(frozen=True)
class Or:
    items: tuple

    def __str__(self):
        return "(" + " | ".join(str(x) for x in self.items) + ")"


@dataclass(frozen=True)
class Implies:
    antecedent: object
    consequent: object

    def __str__(self):
        return f"{self.antecedent} => {self.consequent}"


def _conj_expr(var_ids: tuple[int, ...]):
    if len(var_ids) == 1:
        return Var(var_ids[0])
    return And(tuple(Var(v) for v in var_ids))


@dataclass(frozen=True)
class Superposition:
    """Ordered possibilities, exactly one of which holds in the real execution."""

    origin: str
    possibilities: tuple[tuple[int, ...], ...]  # each a conjunction of edge vars

    def as_exprs(self):
        return tuple(_conj_expr(p) for p in self.possibilities)


@dataclass(frozen=True)
class Implication:
    antecedent: tuple[int, ...]
    consequent: int
    origin: str

    def as_expr(self):
        return Implies(_conj_expr(self.antecedent), Var(self.consequent))


@dataclass
class IR:
    """Solver input: dense nodes, edge variables, knowns, constraints."""

    spec: IsolationSpec
    nodes: list[Node]
    node_index: dict[Node, int]
    edges: list[tuple[int, int, str]]  # var id -> (src idx, dst idx, type)
    var_index: dict[tuple[int, int, str], int]
    var_source: list[str]
    known_vars: dict[int, str]  # var id -> provenance, forced true
    superpositions: list[Superposition]
    implications: list[Implication]

    def expressions(self) -> list[Implies]:
        return [imp.as_expr() for imp in self.implications]

    def edge_label(self, var_id: int) -> str:
        u, v, etype = self.edges[var_id]
        return f"{node_label(self.nodes[u])}->{node_label(self.nodes[v])}:{etype}"


class _State:
    """Mutable build state shared by the pass facades."""

    def __init__(self, asg: ASG, spec: IsolationSpec, hints: Hints):
        self.asg = asg
        self.spec = spec
        self.hints = hints
        self.nodes = list(asg.nodes)
        self.node_index = {n: i for i, n in enumerate(self.nodes)}
        self.edges: list[tuple[int, int, str]] = []
        self.var_index: dict[tuple[int, int, str], int] = {}
        self.var_source: list[str] = []
        self.known_vars: dict[int, str] = {}
        self.supp: list[Superposition] = []
        self.impl: list[Implication] = []
        self._supp_seen: set = set()
        self._impl_seen: set = set()
        # (a, b) with a < b -> ("fixed", src, dst) | ("var", var_ab, var_ba)
        self.ww_pairs: dict[tuple[int, int], tuple] = {}
        for edge, prov in asg.known.items():
            self.known_vars[self._var_for_nodes(edge, prov)] = prov

    def _var_for_nodes(self, edge, source: str) -> int:
        u = self.node_index[edge[0]]
        v = self.node_index[edge[1]]
        key = (u, v, edge[2])
        var = self.var_index.get(key)
        if var is None:
            var = len(self.edges)
            self.var_index[key] = var
            self.edges.append(key)
            self.var_source.append(source)
        return var

    def var(self, src_txn: int, dst_txn: int, etype: str, source: str) -> int:
        return self._var_for_nodes(
            rewrite_edge(self.spec, src_txn, dst_txn, etype), source
        )

    def add_known(self, src_txn: int, dst_txn: int, etype: str, source: str) -> int:
        var = self.var(src_txn, dst_txn, etype, source)
        self.known_vars.setdefault(var, source)
        return var

    def add_supp(self, possibilities: tuple[tuple[int, ...], ...], origin: str) -> bool:
        if possibilities in self._supp_seen:
            return False
        self._supp_seen.add(possibilities)
        self.supp.append(Superposition(origin, possibilities))
        return True

    def add_impl(self, antecedent: tuple[int, ...], consequent: int, origin: str) -> bool:
        key = (tuple(sorted(antecedent)), consequent)
        if key in self._impl_seen:
            return False
        self._impl_seen.add(key)
        self.impl.append(Implication(antecedent, consequent, origin))
        return True


# --- pass facades: the (g, supp, exp) triple handed to user modules ------


class KnownGraph:
    def __init__(self, state: _State):
        self._state = state

    @property
    def nodes(self):
        return tuple(self._state.nodes)

    @property
    def edges(self):
        """Known edges as (src node, dst node, type) triples."""
        st = self._state
        return tuple(
            (st.nodes[st.edges[v][0]], st.nodes[st.edges[v][1]], st.edges[v][2])
            for v in st.known_vars
        )

    def add_edge(self, src_txn: int, dst_txn: int, etype: str, source: str = "user"):
        self._state.add_known(src_txn, dst_txn, etype, source)


class SuppSet:
    def __init__(self, state: _State):
        self._state = state

    def __len__(self):
        return len(self._state.supp)

    def __iter__(self):
        return iter(self._state.supp)

    def add(self, possibilities, origin: str = "user"):
        """possibilities: list of lists of (src_txn, dst_txn, etype) conjunctions."""
        st = self._state
        packed = tuple(
            tuple(st.var(s, d, e, f"supp:{origin}") for s, d, e in poss)
            for poss in possibilities
        )
        st.add_supp(packed, origin)


class ExprSet:
    def __init__(self, state: _State):
        self._state = state

    def __len__(self):
        return len(self._state.impl)

    def __iter__(self):
        return iter(self._state.impl)

    def add_implication(self, antecedent, consequent, origin: str = "user"):
        st = self._state
        ante = tuple(st.var(s, d, e, f"impl:{origin}") for s, d, e in antecedent)
        cons = st.var(*consequent, f"impl:{origin}")
        st.add_impl(ante, cons, origin)


# --- built-in dependency passes -------------------------------------------


def gen_read_dep(asg: ASG, g: KnownGraph, supp: SuppSet, exp: ExprSet):
    """Point reads: unique writer becomes a known edge, otherwise a superposition."""
    st = g._state
    for (key, _value), entries in asg.read_lineage.items():
        for entry in entries:
            if entry.kind != "read":
                continue
            origin = f"read_dep t{entry.reader} op{entry.op_index}"
            if len(entry.cand_ws) == 1:
                (w,) = entry.cand_ws
                st.add_known(w, entry.reader, WR, "read_dep")
            else:
                poss = tuple(
                    (st.var(w, entry.reader, WR, origin),)
                    for w in sorted(entry.cand_ws)
                )
                st.add_supp(poss, origin)
    return g, supp, exp


def _ver_closure(pairs: set[tuple[int, int]]) -> set[tuple[int, int]]:
    """Transitive closure of a (small, per-key) version order; cycles rejected."""
    succ: dict[int, set[int]] = {}
    for a, b in pairs:
        succ.setdefault(a, set()).add(b)
    closed: set[tuple[int, int]] = set()
    for start in succ:
        seen: set[int] = set()
        stack = list(succ[start])
        while stack:
            x = stack.pop()
            if x == start:
                raise VerOrderCycle(f"version order cycles through txn {start}")
            if x in seen:
                continue
            seen.add(x)
            stack.extend(succ.get(x, ()))
        closed.update((start, x) for x in seen)
    return closed


def gen_write_dep(asg: ASG, g: KnownGraph, supp: SuppSet, exp: ExprSet):
    """Order conflicting writers: hinted pairs are known, the rest superpose."""
    st = g._state
    ver_by_pair: dict[tuple[int, int], tuple[int, int]] = {}
    for key in sorted(asg.write_history):
        hist = asg.write_history[key]
        for a, b in _ver_closure(hist.ver_order):
            ver_by_pair.setdefault((min(a, b), max(a, b)), (a, b))
    for key in sorted(asg.write_history):
        writers = sorted(asg.writers(key))
        if key in asg.initial_state:
            for w in writers:
                st.add_known(INIT_TXN, w, WW, "write_dep")
        for i, a in enumerate(writers):
            for b in writers[i + 1:]:
                pair = (a, b)
                if pair in st.ww_pairs:
                    continue
                fixed = ver_by_pair.get(pair)
                if fixed is not None:
                    st.ww_pairs[pair] = ("fixed", fixed[0], fixed[1])
                    continue
                origin = f"write_dep {a},{b}"
                v_ab = st.var(a, b, WW, origin)
                v_ba = st.var(b, a, WW, origin)
                st.add_supp(((v_ab,), (v_ba,)), origin)
                st.ww_pairs[pair] = ("var", v_ab, v_ba)
    return g, supp, exp


def _ww_between(st: _State, w: int, p: int):
    """Status of the write order w -> p: ("true", None), ("false", None) or ("var", id)."""
    if w == INIT_TXN:
        return ("true", None)
    if p == INIT_TXN:
        return ("false", None)
    a, b = (w, p) if w < p else (p, w)
    stt = st.ww_pairs.get((a, b))
    if stt is None:
        return ("false", None)  # not conflicting on any key
    if stt[0] == "fixed":
        return ("true", None) if (stt[1], stt[2]) == (w, p) else ("false", None)
    return ("var", stt[1] if (a, b) == (w, p) else stt[2])


def _emit_anti_triples(st: _State, reader: int, op_index: int, key: bytes,
                       cands, read_type: str, anti_type: str,
                       read_known: bool) -> None:
    """Implications deriving anti edges from (candidate writer, conflicting writer)."""
    conflicts = sorted(st.asg.writers(key) - {reader})
    origin = f"{'predicate' if anti_type == PRW else 'anti'}_dep t{reader} op{op_index}"
    for w in sorted(cands):
        if read_known:
            rvar = None
        else:
            rvar = st.var(w, reader, read_type, origin)
        for p in conflicts:
            if p == w:
                continue
            status, wvar = _ww_between(st, w, p)
            if status == "false":
                continue
            avar = st.var(reader, p, anti_type, origin)
            if status == "true":
                if read_known:
                    st.known_vars.setdefault(avar, origin)
                else:
                    st.add_impl((rvar,), avar, origin)
            else:
                if read_known:
                    st.add_impl((wvar,), avar, origin)
                else:
                    st.add_impl((wvar, rvar), avar, origin)


def gen_anti_dep(asg: ASG, g: KnownGraph, supp: SuppSet, exp: ExprSet):
    """Item anti-dependencies, one implication per (reader, writer, overwriter)."""
    st = g._state
    if not st.spec.admits(RW):
        return g, supp, exp
    for (key, _value), entries in asg.read_lineage.items():
        for entry in entries:
            if entry.kind != "read":
                continue
            _emit_anti_triples(st, entry.reader, entry.op_index, key,
                               entry.cand_ws, WR, RW, len(entry.cand_ws) == 1)
    return g, supp, exp


def gen_predicate_dep(asg: ASG, g: KnownGraph, supp: SuppSet, exp: ExprSet):
    """Predicate reads and phantoms; PRW implications mirror the item pass."""
    st = g._state
    emit_prw = st.spec.admits(PRW)
    for (key, _value), entries in asg.read_lineage.items():
        for entry in entries:
            if entry.kind == "read":
                continue
            origin = f"predicate_dep t{entry.reader} op{entry.op_index}"
            if len(entry.cand_ws) == 1:
                (w,) = entry.cand_ws
                st.add_known(w, entry.reader, PWR, "predicate_dep")
            else:
                poss = tuple(
                    (st.var(w, entry.reader, PWR, origin),)
                    for w in sorted(entry.cand_ws)
                )
                st.add_supp(poss, origin)
            if emit_prw:
                _emit_anti_triples(st, entry.reader, entry.op_index, key,
                                   entry.cand_ws, PWR, PRW, len(entry.cand_ws) == 1)
    for ph in asg.phantoms:
        if not ph.candidates:
            raise NoExplanation(
                f"txn {ph.txn_id} query missed key {ph.key!r} which was never deleted",
                ph.txn_id, ph.key)
        origin = f"predicate_dep phantom t{ph.txn_id} op{ph.op_index}"
        if len(ph.candidates) == 1:
            (c,) = ph.candidates
            st.add_known(c, ph.txn_id, PWR, "predicate_dep")
        else:
            poss = tuple(
                (st.var(c, ph.txn_id, PWR, origin),) for c in sorted(ph.candidates)
            )
            st.add_supp(poss, origin)
        if emit_prw:
            _emit_anti_triples(st, ph.txn_id, ph.op_index, ph.key,
                               ph.candidates, PWR, PRW, len(ph.candidates) == 1)
    return g, supp, exp


# --- user modules ----------------------------------------------------------


def session_order(g, supp, exp, ctx):
    for a, b in ctx["session"]:
        g.add_edge(a, b, SESSION, "session")
    return g, supp, exp


def real_time_order(g, supp, exp, ctx):
    for a, b in ctx["real_time"]:
        g.add_edge(a, b, REALTIME, "real_time")
    return g, supp, exp


def unique_value(g, supp, exp, ctx):
    """Assert every written value identifies its writer; error if the trace disagrees."""
    asg = ctx["asg"]
    for (key, value), entries in asg.read_lineage.items():
        if value is None:
            continue
        for entry in entries:
            if len(entry.cand_ws) > 1:
                raise UniqueValueContradiction(
                    f"key {key!r} value has candidate writers {sorted(entry.cand_ws)}")
    return g, supp, exp


_USER_MODULES: list = []


def register_user_module(f) -> None:
    """Append a (g, supp, exp, ctx) -> (g, supp, exp) transformation."""
    _USER_MODULES.append(f)


def registered_modules() -> list:
    return list(_USER_MODULES)


def clear_user_modules() -> None:
    _USER_MODULES.clear()


# --- orchestration ---------------------------------------------------------


def gen_ir(asg: ASG, spec: IsolationSpec, modules=None, hints: Hints | None = None,
           trace: Trace | None = None) -> IR:
    """Run the dependency passes, then user modules, and assemble the IR."""
    from .asg import real_time_pairs, session_pairs

    hints = hints if hints is not None else Hints()
    st = _State(asg, spec, hints)
    g, supp, exp = KnownGraph(st), SuppSet(st), ExprSet(st)
    g, supp, exp = gen_read_dep(asg, g, supp, exp)
    g, supp, exp = gen_write_dep(asg, g, supp, exp)
    g, supp, exp = gen_anti_dep(asg, g, supp, exp)
    g, supp, exp = gen_predicate_dep(asg, g, supp, exp)

    ctx = {
        "asg": asg,
        "hints": hints,
        "session": session_pairs(trace) if trace is not None else [],
        "real_time": real_time_pairs(trace) if trace is not None else [],
    }
    for f in (modules if modules is not None else registered_modules()):
        before = set(st.known_vars)
        g, supp, exp = f(g, supp, exp, ctx)
        if not before <= set(st.known_vars):
            raise ModuleContractViolation(
                f"module {getattr(f, '__name__', f)!r} removed known edges")

    return IR(
        spec=spec,
        nodes=st.nodes,
        node_index=st.node_index,
        edges=st.edges,
        var_index=st.var_index,
        var_source=st.var_source,
        known_vars=st.known_vars,
        superpositions=st.supp,
        implications=st.impl,
    )


def dump_ir(ir: IR) -> str:
    """Diagnostic text listing: KNOWN edges, SUPP blocks, IMPL lines."""
    lines = []
    for var in sorted(ir.known_vars):
        u, v, etype = ir.edges[var]
        lines.append(
            f"KNOWN {node_label(ir.nodes[u])} {node_label(ir.nodes[v])} {etype}")
    for i, sp in enumerate(ir.superpositions):
        body = "; ".join(str(e) for e in sp.as_exprs())
        lines.append(f"SUPP {i}: [{body}]")
    for i, imp in enumerate(ir.implications):
        lines.append(f"IMPL {i}: {_conj_expr(imp.antecedent)} => e{imp.consequent}")
    return "\n".join(lines) + ("\n" if lines else "")
