"""Reverse-mode automatic differentiation over dense array operations.

The tape records array-level primitives (affine maps, elementwise nonlinearities,
row/column rearrangements, weighted reductions) — enough to train a handful of
small fully-connected networks together with trainable ODE coefficient matrices,
in float64 throughout. It is deliberately not a general autodiff system: no
broadcasting rules beyond what the ops below define, no higher-order derivatives.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, StateError

__all__ = [
    "ParamStore",
    "Tape",
    "Var",
    "affine",
    "matmul",
    "tanh",
    "cos",
    "add",
    "sub",
    "mul",
    "scale",
    "concat_cols",
    "slice_cols",
    "repeat_cols",
    "stack_rows",
    "slice_rows",
    "repeat_rows",
    "gather_rows",
    "weighted_sse",
    "sum_squares",
    "weighted_sum",
    "finite_difference_check",
]


def _as64(x):
    return np.asarray(x, dtype=np.float64)


class ParamStore:
    """Named parameter blocks with matching gradient buffers.

    Block names are unique; gradients always have the shape of their block.
    Evaluation after training only reads blocks, so concurrent readers are safe;
    gradient accumulation happens on the single training thread.
    """

    def __init__(self):
        self._blocks: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._blocks:
            raise StateError(f"parameter block {name!r} already exists")
        arr = _as64(value).copy()
        self._blocks[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def __contains__(self, name):
        return name in self._blocks

    def __getitem__(self, name) -> np.ndarray:
        return self._blocks[name]

    def set(self, name, value):
        block = self._blocks[name]
        if np.shape(value) != block.shape:
            raise ShapeError(f"block {name!r} has shape {block.shape}, got {np.shape(value)}")
        block[...] = value

    __setitem__ = set

    def grad(self, name) -> np.ndarray:
        return self._grads[name]

    def names(self):
        return list(self._blocks)

    def zero_grads(self):
        for g in self._grads.values():
            g[...] = 0.0

    def n_parameters(self) -> int:
        return sum(b.size for b in self._blocks.values())

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, block in self._blocks.items():
            other.add(name, block)
        return other

    def state_arrays(self) -> dict[str, np.ndarray]:
        return dict(self._blocks)


class Var:
    """A node on a tape: forward value plus backward bookkeeping."""

    __slots__ = ("tape", "value", "grad", "_index", "_backward", "_forward")

    def __init__(self, tape, value, index, backward=None, forward=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self._index = index
        self._backward = backward
        self._forward = forward

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Single-writer: ops append in topological order, so replaying forward values
    or walking backward is deterministic. With ``record=False`` the ops still
    compute values but keep no backward closures (cheap inference).
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._nodes: list[Var] = []
        self._param_leaves: dict[tuple[int, str], tuple[ParamStore, Var]] = {}
        self._n_ops = 0

    def leaf(self, value) -> Var:
        var = Var(self, _as64(value), len(self._nodes))
        self._nodes.append(var)
        return var

    def param(self, store: ParamStore, name: str) -> Var:
        """Leaf bound to a parameter block; cached so reuse shares gradients."""
        key = (id(store), name)
        entry = self._param_leaves.get(key)
        if entry is None:
            entry = (store, self.leaf(store[name]))
            self._param_leaves[key] = entry
        return entry[1]

    def _push(self, value, backward, forward) -> Var:
        self._n_ops += 1
        if not self.record:
            return Var(self, value, -1)
        var = Var(self, value, len(self._nodes), backward, forward)
        self._nodes.append(var)
        return var

    def backward(self, out: Var, seed=1.0):
        """Accumulate d(out)/d(block) into the stores' gradient buffers.

        ``seed`` multiplies the output adjoint; gradients of every parameter
        block reachable from ``out`` are added (not assigned), so callers zero
        the store first. Leaves that are not parameters keep their adjoint on
        ``Var.grad`` for inspection.
        """
        if self._n_ops == 0:
            raise StateError("backward called before any forward op was recorded")
        if not self.record:
            raise StateError("backward on a non-recording tape")
        if out.tape is not self or out._index < 0:
            raise StateError("output var does not belong to this tape")
        for node in self._nodes:
            node.grad = None
        out.grad = np.asarray(seed, dtype=np.float64) * np.ones_like(out.value)
        for node in reversed(self._nodes[: out._index + 1]):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        for (_, name), (store, leaf) in self._param_leaves.items():
            if leaf.grad is not None:
                store._grads[name] += leaf.grad

    def replay(self):
        """Recompute every forward value in recorded order (determinism check)."""
        for node in self._nodes:
            if node._forward is not None:
                node.value = node._forward()


def _accum(var: Var, g):
    if var._index < 0:
        return
    var.grad = g if var.grad is None else var.grad + g


def _same_tape(*vars_):
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise StateError("ops cannot mix vars from different tapes")
    return tape


def affine(x: Var, w: Var, b: Var, label: str = "affine") -> Var:
    """x @ W.T + b with W of shape (out, in); accepts 1-d or 2-d x."""
    tape = _same_tape(x, w, b)
    xv, wv, bv = x.value, w.value, b.value
    if xv.shape[-1] != wv.shape[1]:
        raise ShapeError(
            f"layer {label}: input width {xv.shape[-1]} does not match weight columns {wv.shape[1]}"
        )
    if wv.shape[0] != bv.shape[0]:
        raise ShapeError(f"layer {label}: bias length {bv.shape[0]} != weight rows {wv.shape[0]}")

    def forward():
        return x.value @ w.value.T + b.value

    value = forward()

    def backward(g):
        if xv.ndim == 1:
            _accum(w, np.outer(g, x.value))
            _accum(b, g)
            _accum(x, g @ w.value)
        else:
            _accum(w, g.T @ x.value)
            _accum(b, g.sum(axis=0))
            _accum(x, g @ w.value)

    return tape._push(value, backward, forward)


def matmul(x: Var, p: Var) -> Var:
    """x @ P with P of shape (in, out)."""
    tape = _same_tape(x, p)
    if x.value.shape[-1] != p.value.shape[0]:
        raise ShapeError(
            f"matmul: inner dims {x.value.shape[-1]} vs {p.value.shape[0]} do not match"
        )

    def forward():
        return x.value @ p.value

    def backward(g):
        if x.value.ndim == 1:
            _accum(p, np.outer(x.value, g))
            _accum(x, p.value @ g)
        else:
            _accum(p, x.value.T @ g)
            _accum(x, g @ p.value.T)

    return tape._push(forward(), backward, forward)


def tanh(x: Var) -> Var:
    def forward():
        return np.tanh(x.value)

    var = x.tape._push(forward(), None, forward)

    def backward(g):
        y = var.value
        _accum(x, g * (1.0 - y * y))

    var._backward = backward
    return var


def cos(x: Var) -> Var:
    def forward():
        return np.cos(x.value)

    def backward(g):
        _accum(x, -g * np.sin(x.value))

    return x.tape._push(forward(), backward, forward)


def add(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: shapes {a.value.shape} and {b.value.shape} differ")

    def forward():
        return a.value + b.value

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return tape._push(forward(), backward, forward)


def sub(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub: shapes {a.value.shape} and {b.value.shape} differ")

    def forward():
        return a.value - b.value

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return tape._push(forward(), backward, forward)


def mul(a: Var, b: Var) -> Var:
    """Elementwise product (used by quadratic library terms)."""
    tape = _same_tape(a, b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul: shapes {a.value.shape} and {b.value.shape} differ")

    def forward():
        return a.value * b.value

    def backward(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return tape._push(forward(), backward, forward)


def scale(x: Var, c: float) -> Var:
    c = float(c)

    def forward():
        return x.value * c

    def backward(g):
        _accum(x, g * c)

    return x.tape._push(forward(), backward, forward)


def concat_cols(parts: list[Var]) -> Var:
    tape = _same_tape(*parts)
    widths = [p.value.shape[1] for p in parts]

    def forward():
        return np.concatenate([p.value for p in parts], axis=1)

    def backward(g):
        j = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, j : j + w])
            j += w

    return tape._push(forward(), backward, forward)


def slice_cols(x: Var, j0: int, j1: int) -> Var:
    def forward():
        return x.value[:, j0:j1].copy()

    def backward(g):
        full = np.zeros_like(x.value)
        full[:, j0:j1] = g
        _accum(x, full)

    return x.tape._push(forward(), backward, forward)


def stack_rows(parts: list[Var]) -> Var:
    tape = _same_tape(*parts)
    counts = [p.value.shape[0] for p in parts]

    def forward():
        return np.concatenate([p.value for p in parts], axis=0)

    def backward(g):
        i = 0
        for p, n in zip(parts, counts):
            _accum(p, g[i : i + n])
            i += n

    return tape._push(forward(), backward, forward)


def slice_rows(x: Var, i0: int, i1: int) -> Var:
    def forward():
        return x.value[i0:i1].copy()

    def backward(g):
        full = np.zeros_like(x.value)
        full[i0:i1] = g
        _accum(x, full)

    return x.tape._push(forward(), backward, forward)


def repeat_rows(x: Var, k: int) -> Var:
    """Each row repeated k times consecutively."""

    def forward():
        return np.repeat(x.value, k, axis=0)

    def backward(g):
        _accum(x, g.reshape(x.value.shape[0], k, -1).sum(axis=1).reshape(x.value.shape))

    return x.tape._push(forward(), backward, forward)


def repeat_cols(x: Var, k: int) -> Var:
    """Each column repeated k times consecutively."""

    def forward():
        return np.repeat(x.value, k, axis=1)

    def backward(g):
        n = x.value.shape[1]
        _accum(x, g.reshape(g.shape[0], n, k).sum(axis=2))

    return x.tape._push(forward(), backward, forward)


def gather_rows(x: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)

    def forward():
        return x.value[idx]

    def backward(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        _accum(x, full)

    return x.tape._push(forward(), backward, forward)


def weighted_sse(pred: Var, target, row_weights) -> Var:
    """sum_r w_r * sum_c (pred - target)^2 against a constant target."""
    target = _as64(target)
    w = _as64(row_weights)
    if pred.value.shape != target.shape:
        raise ShapeError(f"weighted_sse: pred {pred.value.shape} vs target {target.shape}")

    def forward():
        diff = pred.value - target
        if diff.ndim == 1:
            return np.asarray(np.dot(w, diff * diff))
        return np.asarray(np.einsum("r,rc->", w, diff * diff))

    def backward(g):
        diff = pred.value - target
        if diff.ndim == 1:
            _accum(pred, (2.0 * float(g)) * w * diff)
        else:
            _accum(pred, (2.0 * float(g)) * w[:, None] * diff)

    return pred.tape._push(forward(), backward, forward)


def sum_squares(x: Var, coeff: float = 1.0) -> Var:
    coeff = float(coeff)

    def forward():
        return np.asarray(coeff * np.sum(x.value * x.value))

    def backward(g):
        _accum(x, (2.0 * coeff * float(g)) * x.value)

    return x.tape._push(forward(), backward, forward)


def weighted_sum(scalars: list[Var], weights) -> Var:
    tape = _same_tape(*scalars)
    weights = [float(w) for w in weights]

    def forward():
        return np.asarray(sum(w * float(s.value) for s, w in zip(scalars, weights)))

    def backward(g):
        for s, w in zip(scalars, weights):
            _accum(s, np.asarray(float(g) * w))

    return tape._push(forward(), backward, forward)


def finite_difference_check(loss_fn, store: ParamStore, step: float = 1e-5, names=None) -> float:
    """Max relative gap between analytic and central-difference gradients.

    ``loss_fn(store)`` must build its own tape and return the scalar loss Var,
    deterministically. Relative error per parameter entry is
    ``|analytic - fd| / (|fd| + 1e-12)``.
    """
    store.zero_grads()
    out = loss_fn(store)
    out.tape.backward(out)
    analytic = {name: store.grad(name).copy() for name in (names or store.names())}

    worst = 0.0
    for name in analytic:
        block = store[name]
        flat = block.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn(store).value)
            flat[i] = orig - step
            lo = float(loss_fn(store).value)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * step)
            rel = abs(grad_flat[i] - fd) / (abs(fd) + 1e-12)
            worst = max(worst, rel)
    return worst
