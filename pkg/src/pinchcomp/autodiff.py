"""Reverse-mode automatic differentiation on a flat scalar tape.

Every node is a real scalar with at most two parents; the tape is an
append-only DAG stored as parallel numpy buffers (opcode, parent indices,
constant payload, value), so insertion order is already a topological order.

Two backward modes:

* :func:`backward` - plain reverse sweep producing float adjoints for the
  whole tape (used for optimizer gradients and the per-epoch network update).
  A numba kernel handles the sweep when available; a pure-Python loop with
  identical accumulation order is the fallback.
* :func:`grad_vars` - backward that *emits tape nodes* for the adjoints, so a
  gradient can itself be differentiated later (needed when a learned update
  consumes a gradient and the training loss is differentiated through it).

Complex quantities are represented as (re, im) scalar pairs by the callers;
gradients follow the real-pair convention.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

try:
    from numba import njit as _njit
    _HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a hard dep but keep a fallback
    _HAVE_NUMBA = False

# opcodes
LEAF = 0
ADD = 1
SUB = 2
MUL = 3
DIV = 4
NEG = 5
ADDC = 6    # x + aux
MULC = 7    # x * aux
CDIV = 8    # aux / x
SIN = 9
COS = 10
SQRT = 11
LOG = 12
EXP = 13
RELU = 14
ABS = 15

_INIT_CAP = 1 << 16


class Tape:
    """Append-only scalar computation graph."""

    __slots__ = ("op", "pa", "pb", "aux", "val", "n")

    def __init__(self, capacity: int = _INIT_CAP):
        self.op = np.zeros(capacity, dtype=np.int8)
        self.pa = np.zeros(capacity, dtype=np.int32)
        self.pb = np.zeros(capacity, dtype=np.int32)
        self.aux = np.zeros(capacity, dtype=np.float64)
        self.val = np.zeros(capacity, dtype=np.float64)
        self.n = 0

    def __len__(self) -> int:
        return self.n

    def reset(self):
        """Drop all nodes but keep the allocated capacity."""
        self.n = 0

    def _grow(self, need: int):
        cap = len(self.val)
        while cap < need:
            cap *= 2
        for name in ("op", "pa", "pb", "aux", "val"):
            old = getattr(self, name)
            new = np.zeros(cap, dtype=old.dtype)
            new[: self.n] = old[: self.n]
            setattr(self, name, new)

    def emit(self, op: int, a: int, b: int, aux: float, v: float) -> int:
        i = self.n
        if i >= len(self.val):
            self._grow(i + 1)
        self.op[i] = op
        self.pa[i] = a
        self.pb[i] = b
        self.aux[i] = aux
        self.val[i] = v
        self.n = i + 1
        return i

    def emit_block(self, ops, pas, pbs, auxs, vals) -> int:
        """Bulk-append a precomputed block of nodes; returns the base index.

        Parent indices in ``pas``/``pbs`` must already be absolute.
        """
        m = len(vals)
        i = self.n
        if i + m > len(self.val):
            self._grow(i + m)
        self.op[i:i + m] = ops
        self.pa[i:i + m] = pas
        self.pb[i:i + m] = pbs
        if auxs is not None:
            self.aux[i:i + m] = auxs
        self.val[i:i + m] = vals
        self.n = i + m
        return i

    # -- node constructors -------------------------------------------------

    def record(self, value: float) -> "Var":
        """Fresh leaf node (an input the graph can be differentiated against)."""
        return Var(self, self.emit(LEAF, -1, -1, 0.0, float(value)))

    def record_many(self, values) -> list["Var"]:
        return [self.record(v) for v in np.asarray(values, dtype=float).ravel()]

    const = record  # constants and leaves share storage; naming is intent

    def values(self, lo: int = 0, hi: int | None = None) -> np.ndarray:
        return self.val[lo:(self.n if hi is None else hi)]


class Var:
    """Handle to one tape node."""

    __slots__ = ("t", "i")

    def __init__(self, tape: Tape, index: int):
        self.t = tape
        self.i = index

    @property
    def value(self) -> float:
        return float(self.t.val[self.i])

    def __repr__(self):
        return f"Var({self.i}, {self.value:.6g})"

    # arithmetic -------------------------------------------------------------

    def __add__(self, other):
        t = self.t
        if isinstance(other, Var):
            return Var(t, t.emit(ADD, self.i, other.i, 0.0, t.val[self.i] + t.val[other.i]))
        return Var(t, t.emit(ADDC, self.i, -1, other, t.val[self.i] + other))

    __radd__ = __add__

    def __sub__(self, other):
        t = self.t
        if isinstance(other, Var):
            return Var(t, t.emit(SUB, self.i, other.i, 0.0, t.val[self.i] - t.val[other.i]))
        return Var(t, t.emit(ADDC, self.i, -1, -other, t.val[self.i] - other))

    def __rsub__(self, other):
        t = self.t
        j = t.emit(NEG, self.i, -1, 0.0, -t.val[self.i])
        return Var(t, t.emit(ADDC, j, -1, other, t.val[j] + other))

    def __mul__(self, other):
        t = self.t
        if isinstance(other, Var):
            return Var(t, t.emit(MUL, self.i, other.i, 0.0, t.val[self.i] * t.val[other.i]))
        return Var(t, t.emit(MULC, self.i, -1, other, t.val[self.i] * other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        t = self.t
        if isinstance(other, Var):
            return Var(t, t.emit(DIV, self.i, other.i, 0.0, t.val[self.i] / t.val[other.i]))
        return Var(t, t.emit(MULC, self.i, -1, 1.0 / other, t.val[self.i] / other))

    def __rtruediv__(self, other):
        t = self.t
        return Var(t, t.emit(CDIV, self.i, -1, other, other / t.val[self.i]))

    def __neg__(self):
        t = self.t
        return Var(t, t.emit(NEG, self.i, -1, 0.0, -t.val[self.i]))


def sin(x: Var) -> Var:
    t = x.t
    return Var(t, t.emit(SIN, x.i, -1, 0.0, math.sin(t.val[x.i])))


def cos(x: Var) -> Var:
    t = x.t
    return Var(t, t.emit(COS, x.i, -1, 0.0, math.cos(t.val[x.i])))


def sqrt(x: Var) -> Var:
    t = x.t
    return Var(t, t.emit(SQRT, x.i, -1, 0.0, math.sqrt(t.val[x.i])))


def log(x: Var) -> Var:
    t = x.t
    return Var(t, t.emit(LOG, x.i, -1, 0.0, math.log(t.val[x.i])))


def exp(x: Var) -> Var:
    t = x.t
    return Var(t, t.emit(EXP, x.i, -1, 0.0, math.exp(t.val[x.i])))


def relu(x: Var) -> Var:
    t = x.t
    v = t.val[x.i]
    return Var(t, t.emit(RELU, x.i, -1, 0.0, v if v > 0.0 else 0.0))


def absval(x: Var) -> Var:
    t = x.t
    return Var(t, t.emit(ABS, x.i, -1, 0.0, abs(t.val[x.i])))


def log2(x: Var) -> Var:
    return log(x) * (1.0 / math.log(2.0))


# -- plain backward ----------------------------------------------------------

def _backward_python(op, pa, pb, aux, val, adj, start):
    for i in range(start, -1, -1):
        g = adj[i]
        if g == 0.0:
            continue
        o = op[i]
        if o == ADD:
            adj[pa[i]] += g
            adj[pb[i]] += g
        elif o == MUL:
            adj[pa[i]] += g * val[pb[i]]
            adj[pb[i]] += g * val[pa[i]]
        elif o == ADDC:
            adj[pa[i]] += g
        elif o == MULC:
            adj[pa[i]] += g * aux[i]
        elif o == RELU:
            if val[pa[i]] > 0.0:
                adj[pa[i]] += g
        elif o == SUB:
            adj[pa[i]] += g
            adj[pb[i]] -= g
        elif o == DIV:
            adj[pa[i]] += g / val[pb[i]]
            adj[pb[i]] -= g * val[i] / val[pb[i]]
        elif o == NEG:
            adj[pa[i]] -= g
        elif o == CDIV:
            adj[pa[i]] -= g * val[i] / val[pa[i]]
        elif o == SIN:
            adj[pa[i]] += g * math.cos(val[pa[i]])
        elif o == COS:
            adj[pa[i]] -= g * math.sin(val[pa[i]])
        elif o == SQRT:
            adj[pa[i]] += g * 0.5 / val[i]
        elif o == LOG:
            adj[pa[i]] += g / val[pa[i]]
        elif o == EXP:
            adj[pa[i]] += g * val[i]
        elif o == ABS:
            if val[pa[i]] > 0.0:
                adj[pa[i]] += g
            elif val[pa[i]] < 0.0:
                adj[pa[i]] -= g


if _HAVE_NUMBA:
    _backward_kernel = _njit(fastmath=False)(_backward_python)
else:  # pragma: no cover
    _backward_kernel = _backward_python


class Gradients:
    """Adjoint array for a whole tape, indexed by Var or raw node index."""

    __slots__ = ("adj",)

    def __init__(self, adj: np.ndarray):
        self.adj = adj

    def __getitem__(self, v) -> float:
        if isinstance(v, Var):
            return float(self.adj[v.i])
        return float(self.adj[v])

    def block(self, lo: int, hi: int) -> np.ndarray:
        return self.adj[lo:hi]


def backward(out: Var, seed: float = 1.0) -> Gradients:
    """Reverse accumulation from a scalar output over the full tape."""
    t = out.t
    adj = np.zeros(t.n, dtype=np.float64)
    adj[out.i] = seed
    _backward_kernel(t.op, t.pa, t.pb, t.aux, t.val, adj, out.i)
    return Gradients(adj)


# -- graph-emitting backward (for gradients that feed further computation) ---

def grad_vars(out: Var, targets: list[Var]) -> list[Var]:
    """Adjoints of ``targets`` w.r.t. ``out`` as new tape nodes.

    The adjoint computation is recorded on the same tape, so a later
    :func:`backward` differentiates through it (reverse-over-reverse).
    ``None`` adjoint seeds are treated as the constant 1 without emitting a
    node.  Targets must not be ancestors of one another.
    """
    t = out.t
    op, pa, pb, aux, val = t.op, t.pa, t.pb, t.aux, t.val
    lo = min(v.i for v in targets)
    # pending[i] is the accumulated adjoint of node i: a Var, or None meaning
    # the literal constant 1.0 (the seed before any arithmetic touches it).
    pending: dict[int, Var | None] = {out.i: None}
    heap = [-out.i]
    target_idx = {v.i for v in targets}

    def acc(node: int, contrib: Var | None):
        if node < lo:
            return
        if node in pending:
            prev = pending[node]
            if prev is None:
                prev = t.record(1.0)  # materialize the unit seed -- rare
            if contrib is None:
                contrib = t.record(1.0)
            pending[node] = prev + contrib
        else:
            pending[node] = contrib
            heapq.heappush(heap, -node)

    def times_g(g: Var | None, v: Var) -> Var:
        return v if g is None else g * v

    while heap:
        i = -heapq.heappop(heap)
        g = pending.pop(i)
        if i in target_idx:
            pending[i] = g  # final adjoint; do not propagate past a target
            continue
        o = op[i]
        if o == LEAF:
            continue
        a = pa[i]
        if o == ADD:
            acc(a, g)
            acc(pb[i], g)
        elif o == SUB:
            acc(a, g)
            acc(pb[i], -g if g is not None else t.record(-1.0))
        elif o == MUL:
            b = pb[i]
            if a == b:
                acc(a, times_g(g, Var(t, a) * 2.0))
            else:
                acc(a, times_g(g, Var(t, b)))
                acc(b, times_g(g, Var(t, a)))
        elif o == DIV:
            b = pb[i]
            acc(a, (g / Var(t, b)) if g is not None else 1.0 / Var(t, b))
            acc(b, -(times_g(g, Var(t, i)) / Var(t, b)))
        elif o == NEG:
            acc(a, -g if g is not None else t.record(-1.0))
        elif o == ADDC:
            acc(a, g)
        elif o == MULC:
            c = aux[i]
            acc(a, (g * c) if g is not None else t.record(c))
        elif o == CDIV:
            acc(a, -(times_g(g, Var(t, i)) / Var(t, a)))
        elif o == SIN:
            acc(a, times_g(g, cos(Var(t, a))))
        elif o == COS:
            acc(a, -times_g(g, sin(Var(t, a))))
        elif o == SQRT:
            acc(a, (g * 0.5) / Var(t, i) if g is not None else 0.5 / Var(t, i))
        elif o == LOG:
            acc(a, (g / Var(t, a)) if g is not None else 1.0 / Var(t, a))
        elif o == EXP:
            acc(a, times_g(g, Var(t, i)))
        elif o == RELU:
            if val[a] > 0.0:
                acc(a, g)
        elif o == ABS:
            if val[a] > 0.0:
                acc(a, g)
            elif val[a] < 0.0:
                acc(a, -g if g is not None else t.record(-1.0))

    out_vars = []
    for v in targets:
        if v.i in pending:
            g = pending[v.i]
            out_vars.append(t.record(1.0) if g is None else g)
        else:
            out_vars.append(t.record(0.0))
    return out_vars


# -- finite differences -------------------------------------------------------

def finite_diff_check(function, point, step: float = 1e-6,
                      abs_floor: float = 1e-12) -> float:
    """Worst relative disagreement between tape gradients and central differences.

    ``function`` maps a list of Vars (recorded on a fresh tape) to a scalar
    Var.  The step is scaled per coordinate by max(1, |x|).
    """
    point = np.asarray(point, dtype=float)

    def value_at(p):
        t = Tape()
        xs = [t.record(v) for v in p]
        return function(xs).value

    t = Tape()
    xs = [t.record(v) for v in point]
    out = function(xs)
    g = backward(out)
    ad = np.array([g[x] for x in xs])

    worst = 0.0
    for j in range(point.size):
        h = step * max(1.0, abs(point[j]))
        p_hi = point.copy()
        p_hi[j] += h
        p_lo = point.copy()
        p_lo[j] -= h
        fd = (value_at(p_hi) - value_at(p_lo)) / (2.0 * h)
        rel = abs(ad[j] - fd) / max(abs(fd), abs(ad[j]), abs_floor)
        worst = max(worst, rel)
    return worst
