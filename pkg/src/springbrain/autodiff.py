"""Reverse-mode automatic differentiation on an append-only tape.

A ``Tape`` records every primitive operation of a forward computation as a
node ``(op, parent ids, vjp)``; nodes are appended in execution order, so
parents always precede children and a single reverse sweep propagates
adjoints to every reachable leaf.  Values are held as float64 numpy arrays
(a scalar is a 0-d array), which lets one recorded node cover a whole batch
of identical scalar operations without changing the differentiation
semantics.

Leaves registered via :meth:`Tape.parameter` are the trainable quantities;
:meth:`Tape.backward` returns a :class:`GradMap` with one gradient per
registered slot (exactly zero for slots the loss does not reach).

``NullTape`` executes the same primitives without recording, so a value-only
evaluation follows bit-for-bit the same floating-point path as a recorded
one.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tape",
    "NullTape",
    "Var",
    "GradMap",
    "DomainError",
    "GradientOverflowError",
    "DeterminismError",
    "check_gradient",
]


class DomainError(ValueError):
    """A primitive was evaluated outside its domain (divide by zero, sqrt of
    a negative, log of a non-positive, zero-length direction vector)."""

    def __init__(self, op, node_id, detail=""):
        self.op = op
        self.node_id = node_id
        super().__init__(f"domain error in op '{op}' at node {node_id}: {detail}")


class GradientOverflowError(ArithmeticError):
    """A non-finite adjoint appeared during the backward sweep."""

    def __init__(self, op, node_id):
        self.op = op
        self.node_id = node_id
        super().__init__(f"non-finite adjoint at node {node_id} (op '{op}')")


class DeterminismError(RuntimeError):
    """Two evaluations of a supposedly deterministic function disagreed."""


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """A value recorded on a tape.  ``idx`` is None for constants."""

    __slots__ = ("value", "tape", "idx")

    def __init__(self, value, tape=None, idx=None):
        self.value = value
        self.tape = tape
        self.idx = idx

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(value={self.value!r}, idx={self.idx})"

    # Arithmetic sugar; constants on either side are lifted automatically.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class _Node:
    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op, parents, vjp):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class GradMap:
    """Gradients of one scalar loss, keyed by parameter-slot name."""

    def __init__(self, grads):
        self._grads = dict(grads)

    def __getitem__(self, slot):
        return self._grads[slot]

    def __contains__(self, slot):
        return slot in self._grads

    def __iter__(self):
        return iter(self._grads)

    def __len__(self):
        return len(self._grads)

    def items(self):
        return self._grads.items()

    def keys(self):
        return self._grads.keys()

    def as_dict(self):
        return dict(self._grads)

    def __add__(self, other):
        if set(self._grads) != set(other._grads):
            raise KeyError("cannot merge GradMaps with different slots")
        return GradMap({k: self._grads[k] + other._grads[k] for k in self._grads})


class Tape:
    """Append-only record of one differentiable computation."""

    recording = True

    def __init__(self):
        self._nodes = []
        self._slots = {}  # slot name -> node id

    def __len__(self):
        return len(self._nodes)

    def _record(self, op, value, parents, vjp):
        idx = len(self._nodes)
        self._nodes.append(_Node(op, parents, vjp))
        return Var(value, self, idx)

    def leaf(self, value):
        """Record an untracked leaf (inputs, frozen values)."""
        value = np.asarray(value, dtype=float)
        return self._record("leaf", value, (), None)

    def parameter(self, value, slot):
        """Register a trainable leaf under a unique slot name."""
        if slot in self._slots:
            raise ValueError(f"parameter slot '{slot}' already registered")
        var = self.leaf(value)
        self._slots[slot] = (var.idx, var.value.shape)
        return var

    def parameters(self, values, prefix=""):
        """Register a dict of arrays; returns matching dict of Vars."""
        return {k: self.parameter(v, prefix + k) for k, v in values.items()}

    def backward(self, loss):
        """Adjoint sweep from a scalar ``loss``; returns a :class:`GradMap`.

        The seed adjoint is 1.  Nodes unreachable from the loss keep a None
        adjoint, so unreached parameter slots report exactly zero.
        """
        if loss.tape is not self:
            raise ValueError("loss does not belong to this tape")
        if np.ndim(loss.value) != 0:
            raise ValueError("loss must be scalar")
        nodes = self._nodes
        adj = [None] * len(nodes)
        adj[loss.idx] = np.asarray(1.0)
        with np.errstate(over="ignore", invalid="ignore"):
            for nid in range(loss.idx, -1, -1):
                a = adj[nid]
                if a is None:
                    continue
                node = nodes[nid]
                if not np.all(np.isfinite(a)):
                    raise GradientOverflowError(node.op, nid)
                if node.vjp is None:
                    continue
                for pid, g in zip(node.parents, node.vjp(a)):
                    if adj[pid] is None:
                        adj[pid] = g
                    else:
                        adj[pid] = adj[pid] + g
        grads = {}
        for slot, (nid, shape) in self._slots.items():
            g = adj[nid]
            if g is None:
                g = np.zeros(shape)
            grads[slot] = np.asarray(g, dtype=float)
        return GradMap(grads)


class NullTape(Tape):
    """Executes primitives without recording; same numeric path as Tape."""

    recording = False

    def _record(self, op, value, parents, vjp):
        return Var(value, self, None)

    def backward(self, loss):
        raise RuntimeError("NullTape records nothing; backward is unavailable")


def _tape_of(*vars_):
    for v in vars_:
        if isinstance(v, Var) and v.tape is not None:
            return v.tape
    raise ValueError("no tape found among operands")


def _lift(tape, x):
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=float), None, None)


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _binary(op, a, b, fwd, vjp_builder):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    out = fwd(a.value, b.value)
    if not tape.recording:
        return Var(out, tape, None)
    parents, sides = [], []
    if a.idx is not None:
        parents.append(a.idx)
        sides.append(0)
    if b.idx is not None:
        parents.append(b.idx)
        sides.append(1)
    if not parents:
        return tape.leaf(out)
    full = vjp_builder(a.value, b.value, out)

    def vjp(g):
        gs = full(g)
        return tuple(gs[s] for s in sides)

    return tape._record(op, out, tuple(parents), vjp)


def _unary(op, x, fwd, vjp_builder):
    tape = _tape_of(x)
    out = fwd(x.value)
    if not tape.recording or x.idx is None:
        return Var(out, tape, None) if not tape.recording else tape.leaf(out)
    vjp = vjp_builder(x.value, out)
    return tape._record(op, out, (x.idx,), lambda g: (vjp(g),))


# ----------------------------------------------------------------------
# Primitive ops
# ----------------------------------------------------------------------

def add(a, b):
    return _binary(
        "+", a, b, lambda x, y: x + y,
        lambda x, y, o: lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
    )


def sub(a, b):
    return _binary(
        "-", a, b, lambda x, y: x - y,
        lambda x, y, o: lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
    )


def mul(a, b):
    return _binary(
        "*", a, b, lambda x, y: x * y,
        lambda x, y, o: lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
    )


def div(a, b):
    tape = _tape_of(a, b)
    bval = _val(b)
    if np.any(bval == 0.0):
        raise DomainError("/", len(tape._nodes), "division by zero")
    return _binary(
        "/", a, b, lambda x, y: x / y,
        lambda x, y, o: lambda g: (
            _unbroadcast(g / y, x.shape),
            _unbroadcast(-g * x / (y * y), y.shape),
        ),
    )


def neg(x):
    return _unary("negate", x, lambda v: -v, lambda v, o: lambda g: -g)


def sqrt(x):
    tape = _tape_of(x)
    if np.any(_val(x) < 0.0):
        raise DomainError("sqrt", len(tape._nodes), "sqrt of negative value")
    return _unary("sqrt", x, np.sqrt, lambda v, o: lambda g: g * (0.5 / o))


def sin(x):
    return _unary("sin", x, np.sin, lambda v, o: lambda g: g * np.cos(v))


def cos(x):
    return _unary("cos", x, np.cos, lambda v, o: lambda g: -g * np.sin(v))


def exp(x):
    return _unary("exp", x, np.exp, lambda v, o: lambda g: g * o)


def log(x):
    tape = _tape_of(x)
    if np.any(_val(x) <= 0.0):
        raise DomainError("ln", len(tape._nodes), "log of non-positive value")
    return _unary("ln", x, np.log, lambda v, o: lambda g: g / v)


def relu(x):
    """max(x, 0); the subgradient at exactly 0 is 0."""
    return _unary(
        "max0", x, lambda v: np.maximum(v, 0.0),
        lambda v, o: lambda g: g * (v > 0.0),
    )


def inv_norm2(d):
    """Reciprocal Euclidean norm of 2-vectors along the last axis.

    Fused so the direction term d/:math:`\\lVert d\\rVert` differentiates
    through one node (``d * inv_norm2(d)``) instead of a sqrt/divide chain
    that cancels catastrophically near coincident endpoints.
    """
    tape = _tape_of(d)
    v = d.value
    sq = np.einsum("...i,...i->...", v, v)
    if np.any(sq == 0.0):
        raise DomainError("inv-norm2", len(tape._nodes), "zero-length 2-vector")
    out = 1.0 / np.sqrt(sq)
    if not tape.recording or d.idx is None:
        return Var(out, tape, None) if not tape.recording else tape.leaf(out)

    def vjp(g):
        # d(1/||d||)/dd = -d / ||d||^3
        return (-(g * out ** 3)[..., None] * v,)

    return tape._record("inv-norm2", out, (d.idx,), vjp)


def matmul(x, w):
    """x @ w for x of ndim 1 or 2 and 2-d w."""
    tape = _tape_of(x, w)
    x, w = _lift(tape, x), _lift(tape, w)
    out = x.value @ w.value
    if not tape.recording:
        return Var(out, tape, None)
    parents, sides = [], []
    if x.idx is not None:
        parents.append(x.idx)
        sides.append(0)
    if w.idx is not None:
        parents.append(w.idx)
        sides.append(1)
    if not parents:
        return tape.leaf(out)
    xv, wv = x.value, w.value

    def vjp(g):
        g = np.asarray(g)
        gx = g @ wv.T
        gw = np.outer(xv, g) if xv.ndim == 1 else xv.T @ g
        full = (gx, gw)
        return tuple(full[s] for s in sides)

    return tape._record("matmul", out, tuple(parents), vjp)


def lincomb(m, x):
    """Apply a constant matrix along axis -2: out[..., a, c] = sum_n m[a, n] x[..., n, c].

    Covers spring-endpoint differences, per-point force accumulation, and
    row selection, all with the transpose map as the exact adjoint.
    """
    tape = _tape_of(x)
    m = np.asarray(m, dtype=float)
    out = np.moveaxis(np.tensordot(m, x.value, axes=(1, -2)), 0, -2)
    if not tape.recording or x.idx is None:
        return Var(out, tape, None) if not tape.recording else tape.leaf(out)
    mt = m.T

    def vjp(g):
        return (np.moveaxis(np.tensordot(mt, g, axes=(1, -2)), 0, -2),)

    return tape._record("lincomb", out, (x.idx,), vjp)


def sum_(x, axis=None, keepdims=False):
    tape = _tape_of(x)
    out = np.sum(x.value, axis=axis, keepdims=keepdims)
    if not tape.recording or x.idx is None:
        return Var(out, tape, None) if not tape.recording else tape.leaf(out)
    shape = x.value.shape

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a % len(shape) for a in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return tape._record("sum", out, (x.idx,), vjp)


def mean(x, axis=None, keepdims=False):
    n = x.value.size if axis is None else (
        np.prod([x.value.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    )
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def square(x):
    return mul(x, x)


def reshape(x, shape):
    tape = _tape_of(x)
    out = x.value.reshape(shape)
    if not tape.recording or x.idx is None:
        return Var(out, tape, None) if not tape.recording else tape.leaf(out)
    orig = x.value.shape
    return tape._record("reshape", out, (x.idx,), lambda g: (np.asarray(g).reshape(orig),))


def concat(vars_, axis=-1):
    tape = _tape_of(*vars_)
    vals = [v.value for v in vars_]
    out = np.concatenate(vals, axis=axis)
    if not tape.recording:
        return Var(out, tape, None)
    tracked = [(i, v.idx) for i, v in enumerate(vars_) if v.idx is not None]
    if not tracked:
        return tape.leaf(out)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        g = np.asarray(g)
        pieces = []
        for i, _ in tracked:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return tape._record("concat", out, tuple(idx for _, idx in tracked), vjp)


def stack(vars_, axis=0):
    tape = _tape_of(*vars_)
    out = np.stack([v.value for v in vars_], axis=axis)
    if not tape.recording:
        return Var(out, tape, None)
    tracked = [(i, v.idx) for i, v in enumerate(vars_) if v.idx is not None]
    if not tracked:
        return tape.leaf(out)

    def vjp(g):
        g = np.asarray(g)
        return tuple(np.take(g, i, axis=axis) for i, _ in tracked)

    return tape._record("stack", out, tuple(idx for _, idx in tracked), vjp)


def index_last(x, i):
    """Select component ``i`` along the last axis."""
    tape = _tape_of(x)
    out = x.value[..., i]
    if not tape.recording or x.idx is None:
        return Var(out, tape, None) if not tape.recording else tape.leaf(out)
    shape = x.value.shape

    def vjp(g):
        full = np.zeros(shape)
        full[..., i] = g
        return (full,)

    return tape._record("index-last", out, (x.idx,), vjp)


def pack_last(a, b):
    """Stack two equal-shape arrays into 2-vectors along a new last axis."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    out = np.stack([a.value, b.value], axis=-1)
    if not tape.recording:
        return Var(out, tape, None)
    parents, sides = [], []
    if a.idx is not None:
        parents.append(a.idx)
        sides.append(0)
    if b.idx is not None:
        parents.append(b.idx)
        sides.append(1)
    if not parents:
        return tape.leaf(out)

    def vjp(g):
        g = np.asarray(g)
        full = (g[..., 0], g[..., 1])
        return tuple(full[s] for s in sides)

    return tape._record("pack-last", out, tuple(parents), vjp)


def clip_max(x, cap):
    """min(x, cap) with zero gradient beyond the cap (via the ReLU kink)."""
    return sub(float(cap), relu(sub(float(cap), x)))


def clip_abs(x, cap):
    """Clamp to [-cap, cap], composed from two ReLU kinks."""
    return neg(clip_max(neg(clip_max(x, cap)), cap))


def tanh(x):
    """tanh composed from primitives, with the exponent clamped so the
    saturated tails stay finite (their true slope is ~0 there anyway)."""
    e = exp(clip_abs(mul(x, 2.0), 40.0))
    return div(sub(e, 1.0), add(e, 1.0))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    logits: Var (batch, n_classes); labels: int array (batch,).
    """
    labels = np.asarray(labels)
    shift = logits.value.max(axis=-1, keepdims=True)  # constant shift, exact
    z = sub(logits, shift)
    lse = log(sum_(exp(z), axis=-1))
    onehot = np.zeros(logits.value.shape)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    picked = sum_(mul(z, onehot), axis=-1)
    return mean(sub(lse, picked))


# ----------------------------------------------------------------------
# Finite-difference validation
# ----------------------------------------------------------------------

def check_gradient(build_loss, params, h=None, max_entries=None, rng=None):
    """Compare tape gradients against central finite differences.

    ``build_loss(tape, vars)`` must construct the scalar loss from the dict
    of parameter Vars, deterministically.  Returns
    ``{slot: {"max_rel_err", "checked", "worst_entry"}}`` where the relative
    error is |g_ad - g_fd| / max(|g_fd|, 1e-12).  ``h`` defaults to
    1e-6 * max(1, |theta|) per entry.  ``max_entries`` caps the number of
    finite-difference probes per parameter (sampled with ``rng``).
    """
    params = {k: np.asarray(v, dtype=float) for k, v in params.items()}

    tape = Tape()
    loss = build_loss(tape, tape.parameters(params))
    grads = tape.backward(loss)
    base = float(loss.value)

    def value_at(p):
        t = NullTape()
        return float(build_loss(t, t.parameters(p)).value)

    if value_at(params) != base:
        raise DeterminismError("loss function is not deterministic: repeated "
                               "evaluation at the same parameters differs")

    rng = rng or np.random.default_rng(0)
    report = {}
    for slot, theta in params.items():
        g_ad = np.broadcast_to(np.asarray(grads[slot]), theta.shape).reshape(-1)
        flat = theta.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        worst, worst_entry = 0.0, -1
        for j in entries:
            step = h if h is not None else 1e-6 * max(1.0, abs(flat[j]))
            bumped = dict(params)
            plus = theta.copy().reshape(-1)
            plus[j] += step
            bumped[slot] = plus.reshape(theta.shape)
            f_plus = value_at(bumped)
            minus = theta.copy().reshape(-1)
            minus[j] -= step
            bumped[slot] = minus.reshape(theta.shape)
            f_minus = value_at(bumped)
            g_fd = (f_plus - f_minus) / (2.0 * step)
            rel = abs(g_ad[j] - g_fd) / max(abs(g_fd), 1e-12)
            if rel > worst:
                worst, worst_entry = rel, int(j)
        report[slot] = {
            "max_rel_err": worst,
            "checked": len(entries),
            "worst_entry": worst_entry,
        }
    return report
