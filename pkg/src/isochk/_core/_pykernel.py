"""Pure-Python graph kernels: bitset reachability and dynamic topological order.

These are the hot primitives behind reachability pruning and the solver's
incremental acyclicity check. A compiled twin lives in _kernel.pyx; both
expose the same API and isochk._core picks one at import time.
"""

from __future__ import annotations

BACKEND = "python"


def topological_order(n: int, edges) -> tuple[list[int] | None, list[int] | None]:
    """Kahn's algorithm over nodes 0..n-1.

    Returns (order, None) for a DAG, or (None, cycle) where cycle is a node
    sequence [v0, v1, ..., vk] with vi -> vi+1 edges and vk -> v0 closing it.
    """
    succ = [[] for _ in range(n)]
    indeg = [0] * n
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1
    ready = [u for u in range(n) if indeg[u] == 0]
    order = []
    while ready:
        u = ready.pop()
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    if len(order) == n:
        return order, None
    # Residual nodes all lie on or feed a cycle; walk successors with
    # positive in-degree until a node repeats.
    start = next(u for u in range(n) if indeg[u] > 0)
    seen = {}
    path = []
    u = start
    while u not in seen:
        seen[u] = len(path)
        path.append(u)
        u = next(v for v in succ[u] if indeg[v] > 0)
    return None, path[seen[u]:]


class BitClosure:
    """Transitive reachability over a DAG, one int bitset per node.

    reach(u, v) is True iff a nonempty path u ~> v exists. add_edge extends
    the closure in place by propagating v's descendant set to u and every
    ancestor of u.
    """

    def __init__(self, n: int):
        self.n = n
        self.rows = [0] * n

    def build(self, edges, order: list[int]) -> None:
        """Populate the closure given any topological order of the edges."""
        succ = [[] for _ in range(self.n)]
        for u, v in edges:
            succ[u].append(v)
        rows = self.rows
        for u in reversed(order):
            acc = 0
            for v in succ[u]:
                acc |= rows[v] | (1 << v)
            rows[u] = acc

    def reach(self, u: int, v: int) -> bool:
        return (self.rows[u] >> v) & 1 == 1

    def add_edge(self, u: int, v: int) -> int:
        """Extend the closure with edge u -> v. Returns 0 if already implied."""
        rows = self.rows
        if (rows[u] >> v) & 1:
            return 0
        delta = rows[v] | (1 << v)
        rows[u] |= delta
        ubit = 1 << u
        for x in range(self.n):
            if rows[x] & ubit:
                rows[x] |= delta
        return 1


class TopoGraph:
    """Simple digraph with a dynamically maintained topological order.

    add_edge either inserts the edge keeping the order valid (Pearce-Kelly
    reordering of the affected region) or refuses it and records the cycle
    it would close. Edge removal never invalidates the order.
    """

    def __init__(self, n: int):
        self.n = n
        self.succ = [set() for _ in range(n)]
        self.pred = [set() for _ in range(n)]
        self.ord = list(range(n))
        self.pos = list(range(n))
        self._cycle: list[int] = []

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.succ[u]

    def add_edge(self, u: int, v: int) -> bool:
        """Insert u -> v. Returns False (and keeps the graph unchanged) on a cycle."""
        if u == v:
            self._cycle = [u]
            return False
        lb, ub = self.ord[v], self.ord[u]
        if lb > ub:
            self.succ[u].add(v)
            self.pred[v].add(u)
            return True
        # Affected region is [lb, ub]; search forward from v for u.
        parent = {v: -1}
        stack = [v]
        delta_f = []
        found = False
        while stack:
            w = stack.pop()
            delta_f.append(w)
            if w == u:
                found = True
                break
            for x in self.succ[w]:
                if self.ord[x] <= ub and x not in parent:
                    parent[x] = w
                    stack.append(x)
        if found:
            path = [u]
            w = u
            while parent[w] != -1:
                w = parent[w]
                path.append(w)
            path.reverse()  # v ... u; closing edge u -> v supplied by caller
            self._cycle = path
            return False
        # Backward from u within the region.
        seen_b = {u}
        stack = [u]
        delta_b = []
        while stack:
            w = stack.pop()
            delta_b.append(w)
            for x in self.pred[w]:
                if self.ord[x] >= lb and x not in seen_b:
                    seen_b.add(x)
                    stack.append(x)
        self._reorder(delta_b, delta_f)
        self.succ[u].add(v)
        self.pred[v].add(u)
        return True

    def _reorder(self, delta_b: list[int], delta_f: list[int]) -> None:
        delta_b.sort(key=self.ord.__getitem__)
        delta_f.sort(key=self.ord.__getitem__)
        nodes = delta_b + delta_f
        slots = sorted(self.ord[w] for w in nodes)
        for w, i in zip(nodes, slots):
            self.ord[w] = i
            self.pos[i] = w

    def remove_edge(self, u: int, v: int) -> None:
        self.succ[u].discard(v)
        self.pred[v].discard(u)

    def last_cycle(self) -> list[int]:
        """Node path [v, ..., u] of the most recent rejected insert u -> v."""
        return list(self._cycle)

    def order(self) -> list[int]:
        return list(self.pos)
