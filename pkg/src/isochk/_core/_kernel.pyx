# distutils: language = c++
# cython: boundscheck=False, wraparound=False
"""Compiled graph kernels: bitset reachability and dynamic topological order.

Mirrors the API of _pykernel; see that module for the semantics.
"""

from libc.stdint cimport uint64_t
from libc.stdlib cimport calloc, free
from libcpp.algorithm cimport sort as cpp_sort
from libcpp.pair cimport pair
from libcpp.vector cimport vector

BACKEND = "compiled"


cdef class BitClosure:
    cdef Py_ssize_t n
    cdef Py_ssize_t words
    cdef uint64_t* rows

    def __cinit__(self, Py_ssize_t n):
        self.n = n
        self.words = (n + 63) >> 6
        if self.words == 0:
            self.words = 1
        self.rows = <uint64_t*>calloc(max(n, 1) * self.words, sizeof(uint64_t))
        if self.rows == NULL:
            raise MemoryError()

    def __dealloc__(self):
        if self.rows != NULL:
            free(self.rows)

    def build(self, edges, order):
        cdef vector[vector[int]] succ = vector[vector[int]](self.n)
        cdef int u, v
        cdef Py_ssize_t i, w
        cdef uint64_t* ru
        cdef uint64_t* rv
        for e in edges:
            u = e[0]
            v = e[1]
            succ[u].push_back(v)
        for i in range(len(order) - 1, -1, -1):
            u = order[i]
            ru = self.rows + u * self.words
            for v in succ[u]:
                rv = self.rows + v * self.words
                for w in range(self.words):
                    ru[w] |= rv[w]
                ru[v >> 6] |= (<uint64_t>1) << (v & 63)

    def reach(self, Py_ssize_t u, Py_ssize_t v):
        return (self.rows[u * self.words + (v >> 6)] >> (v & 63)) & 1 == 1

    def add_edge(self, Py_ssize_t u, Py_ssize_t v):
        cdef uint64_t* ru = self.rows + u * self.words
        cdef uint64_t* rv
        cdef uint64_t* rx
        cdef uint64_t ubit = (<uint64_t>1) << (u & 63)
        cdef Py_ssize_t uw = u >> 6
        cdef Py_ssize_t w, x
        if (ru[v >> 6] >> (v & 63)) & 1:
            return 0
        rv = self.rows + v * self.words
        for w in range(self.words):
            ru[w] |= rv[w]
        ru[v >> 6] |= (<uint64_t>1) << (v & 63)
        for x in range(self.n):
            if x == u:
                continue
            rx = self.rows + x * self.words
            if rx[uw] & ubit:
                for w in range(self.words):
                    rx[w] |= rv[w]
                rx[v >> 6] |= (<uint64_t>1) << (v & 63)
        return 1


cdef class TopoGraph:
    cdef Py_ssize_t n
    cdef vector[vector[int]] succ
    cdef vector[vector[int]] pred
    cdef vector[int] ord_
    cdef vector[int] pos_
    cdef vector[int] stamp
    cdef vector[int] parent
    cdef int epoch
    cdef list _cycle

    def __cinit__(self, Py_ssize_t n):
        cdef Py_ssize_t i
        self.n = n
        self.succ.resize(n)
        self.pred.resize(n)
        self.ord_.resize(n)
        self.pos_.resize(n)
        self.stamp.resize(n)
        self.parent.resize(n)
        for i in range(n):
            self.ord_[i] = i
            self.pos_[i] = i
            self.stamp[i] = 0
        self.epoch = 0
        self._cycle = []

    def has_edge(self, int u, int v):
        cdef size_t i
        for i in range(self.succ[u].size()):
            if self.succ[u][i] == v:
                return True
        return False

    def add_edge(self, int u, int v):
        cdef int lb, ub, w, x, ep
        cdef size_t i
        cdef vector[int] stack
        cdef vector[int] delta_f
        cdef vector[int] delta_b
        cdef bint found = False
        cdef list path
        if u == v:
            self._cycle = [u]
            return False
        lb = self.ord_[v]
        ub = self.ord_[u]
        if lb > ub:
            self.succ[u].push_back(v)
            self.pred[v].push_back(u)
            return True
        self.epoch += 1
        ep = self.epoch
        self.stamp[v] = ep
        self.parent[v] = -1
        stack.push_back(v)
        while stack.size() > 0:
            w = stack.back()
            stack.pop_back()
            delta_f.push_back(w)
            if w == u:
                found = True
                break
            for i in range(self.succ[w].size()):
                x = self.succ[w][i]
                if self.ord_[x] <= ub and self.stamp[x] != ep:
                    self.stamp[x] = ep
                    self.parent[x] = w
                    stack.push_back(x)
        if found:
            path = [u]
            w = u
            while self.parent[w] != -1:
                w = self.parent[w]
                path.append(w)
            path.reverse()
            self._cycle = path
            return False
        self.epoch += 1
        ep = self.epoch
        stack.clear()
        self.stamp[u] = ep
        stack.push_back(u)
        while stack.size() > 0:
            w = stack.back()
            stack.pop_back()
            delta_b.push_back(w)
            for i in range(self.pred[w].size()):
                x = self.pred[w][i]
                if self.ord_[x] >= lb and self.stamp[x] != ep:
                    self.stamp[x] = ep
                    stack.push_back(x)
        self._reorder(delta_b, delta_f)
        self.succ[u].push_back(v)
        self.pred[v].push_back(u)
        return True

    cdef void _reorder(self, vector[int]& delta_b, vector[int]& delta_f):
        cdef vector[pair[int, int]] tagged_b
        cdef vector[pair[int, int]] tagged_f
        cdef vector[int] slots
        cdef size_t i, k
        cdef int w
        for i in range(delta_b.size()):
            w = delta_b[i]
            tagged_b.push_back(pair[int, int](self.ord_[w], w))
            slots.push_back(self.ord_[w])
        for i in range(delta_f.size()):
            w = delta_f[i]
            tagged_f.push_back(pair[int, int](self.ord_[w], w))
            slots.push_back(self.ord_[w])
        cpp_sort(tagged_b.begin(), tagged_b.end())
        cpp_sort(tagged_f.begin(), tagged_f.end())
        cpp_sort(slots.begin(), slots.end())
        k = 0
        for i in range(tagged_b.size()):
            w = tagged_b[i].second
            self.ord_[w] = slots[k]
            self.pos_[slots[k]] = w
            k += 1
        for i in range(tagged_f.size()):
            w = tagged_f[i].second
            self.ord_[w] = slots[k]
            self.pos_[slots[k]] = w
            k += 1

    def remove_edge(self, int u, int v):
        cdef size_t i
        for i in range(self.succ[u].size()):
            if self.succ[u][i] == v:
                self.succ[u][i] = self.succ[u].back()
                self.succ[u].pop_back()
                break
        for i in range(self.pred[v].size()):
            if self.pred[v][i] == u:
                self.pred[v][i] = self.pred[v].back()
                self.pred[v].pop_back()
                break

    def last_cycle(self):
        return list(self._cycle)

    def order(self):
        cdef Py_ssize_t i
        return [self.pos_[i] for i in range(self.n)]
