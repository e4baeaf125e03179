"""Reverse-mode differentiation on an explicit operation tape.

Covers exactly the primitives the traffic model needs: linear maps over
concatenated inputs, noisy linear maps, ReLU, gather, segment sum, scalar
reductions, squared error, and softmax cross-entropy. Recording keeps the
forward order, so the reversed node list is already a valid topological order
for gradient accumulation, and replay() can recompute every node bit-for-bit.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

ArrayLike = Union[np.ndarray, "Node"]


class Node:
    __slots__ = ("tape", "idx", "op", "value", "grad", "inputs", "aux", "name")

    def __init__(self, tape, idx, op, value, inputs, aux=None, name=None):
        self.tape = tape
        self.idx = idx
        self.op = op
        self.value = value
        self.grad = None
        self.inputs = inputs
        self.aux = aux
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def _add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else x


class _SegPlan:
    __slots__ = ("idx", "perm", "starts", "present")

    def __init__(self, idx: np.ndarray):
        self.idx = idx  # strong ref keeps the id() key valid
        self.perm = np.argsort(idx, kind="stable")
        s = idx[self.perm]
        self.present, self.starts = np.unique(s, return_index=True)


_SEG_PLANS: dict[int, _SegPlan] = {}


def scatter_add_rows(x: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Row scatter-sum: out[i] = sum of x rows with idx == i.

    Canonical segment-sum for the whole package: recording, replay, and the
    tape-free twin all route through here, so their outputs agree bit for
    bit. The stable sort keeps each segment's rows in input order; reduceat
    then fixes one deterministic summation order per plan.
    """
    if x.dtype != np.float64 or x.ndim != 2:
        out = np.zeros((n,) + x.shape[1:], dtype=np.float64)
        np.add.at(out, idx, x)
        return out
    plan = _SEG_PLANS.get(id(idx))
    if plan is None or plan.idx is not idx:
        if len(_SEG_PLANS) >= 8192:
            _SEG_PLANS.clear()
        plan = _SegPlan(idx)
        _SEG_PLANS[id(idx)] = plan
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    if len(plan.present):
        out[plan.present] = np.add.reduceat(x[plan.perm], plan.starts, axis=0)
    return out


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def _push(self, op, value, inputs, aux=None, name=None) -> Node:
        node = Node(self, len(self.nodes), op, value, inputs, aux, name)
        self.nodes.append(node)
        return node

    # -- leaves ---------------------------------------------------------------

    def leaf(self, value: np.ndarray, name: Optional[str] = None) -> Node:
        """Differentiable input (a parameter)."""
        return self._push("leaf", np.asarray(value, dtype=np.float64), (), name=name)

    def const(self, value: np.ndarray) -> Node:
        """Non-differentiable input."""
        return self._push("const", np.asarray(value, dtype=np.float64), ())

    def _as_node(self, x: ArrayLike) -> Node:
        return x if isinstance(x, Node) else self.const(x)

    # -- primitives -------------------------------------------------------------

    def linear(self, parts: Sequence[ArrayLike], W: Node, b: Optional[Node] = None) -> Node:
        """concat(parts, axis=1) @ W.T (+ b)."""
        parts = [self._as_node(p) for p in parts]
        X = parts[0].value if len(parts) == 1 else np.concatenate(
            [p.value for p in parts], axis=1
        )
        y = X @ W.value.T
        if b is not None:
            y = y + b.value
        inputs = (W, b, *parts) if b is not None else (W, *parts)
        return self._push("linear", y, inputs, aux=(b is not None))

    def noisy_linear(
        self,
        parts: Sequence[ArrayLike],
        W_mu: Node,
        W_sig: Node,
        eps_w: np.ndarray,
        b_mu: Node,
        b_sig: Node,
        eps_b: np.ndarray,
    ) -> Node:
        """Linear map whose weights are mu + sigma * eps with eps held fixed."""
        parts = [self._as_node(p) for p in parts]
        X = parts[0].value if len(parts) == 1 else np.concatenate(
            [p.value for p in parts], axis=1
        )
        W = W_mu.value + W_sig.value * eps_w
        b = b_mu.value + b_sig.value * eps_b
        y = X @ W.T + b
        return self._push(
            "noisy_linear", y, (W_mu, W_sig, b_mu, b_sig, *parts), aux=(eps_w, eps_b)
        )

    def relu(self, x: ArrayLike) -> Node:
        x = self._as_node(x)
        return self._push("relu", np.maximum(x.value, 0.0), (x,))

    def add(self, a: ArrayLike, b: ArrayLike) -> Node:
        a, b = self._as_node(a), self._as_node(b)
        if a.value.shape != b.value.shape:
            raise ValueError(f"add shape mismatch {a.value.shape} vs {b.value.shape}")
        return self._push("add", a.value + b.value, (a, b))

    def gather(self, x: ArrayLike, idx: np.ndarray) -> Node:
        x = self._as_node(x)
        return self._push("gather", x.value[idx], (x,), aux=np.asarray(idx))

    def segment_sum(self, x: ArrayLike, idx: np.ndarray, n: int) -> Node:
        x = self._as_node(x)
        idx = np.asarray(idx)
        out = scatter_add_rows(x.value, idx, n)
        return self._push("segment_sum", out, (x,), aux=(idx, n))

    def sum_all(self, x: ArrayLike) -> Node:
        x = self._as_node(x)
        return self._push("sum_all", np.asarray(x.value.sum()), (x,))

    def scale(self, x: ArrayLike, s: float) -> Node:
        x = self._as_node(x)
        return self._push("scale", x.value * s, (x,), aux=float(s))

    def sq_err(self, pred: ArrayLike, target: ArrayLike) -> Node:
        """Sum of squared errors; target is treated as constant."""
        pred = self._as_node(pred)
        t = _val(target)
        diff = pred.value - t
        return self._push("sq_err", np.asarray((diff * diff).sum()), (pred,), aux=t)

    def softmax_xent(self, logits: ArrayLike, target_index: int) -> Node:
        """Cross-entropy of softmax(logits) against a one-hot target."""
        logits = self._as_node(logits)
        z = logits.value.reshape(-1)
        z = z - z.max()
        e = np.exp(z)
        p = e / e.sum()
        loss = -np.log(max(p[target_index], 1e-300))
        return self._push(
            "softmax_xent", np.asarray(loss), (logits,), aux=(int(target_index), p)
        )

    # -- reverse pass ---------------------------------------------------------

    def backward(self, loss: Node):
        if loss.value.shape != ():
            raise ValueError("backward needs a scalar loss")
        for n in self.nodes:
            n.grad = None
        loss.grad = np.asarray(1.0)
        for node in reversed(self.nodes):
            if node.grad is None or node.op in ("leaf", "const"):
                continue
            _BACKWARD[node.op](node)

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self.nodes:
            if n.op == "leaf" and n.name is not None:
                out[n.name] = n.grad if n.grad is not None else np.zeros_like(n.value)
        return out

    # -- replay -----------------------------------------------------------------

    def replay(self) -> bool:
        """Recompute every node from the recorded leaves; True if bit-identical."""
        ok = True
        values = {}
        for n in self.nodes:
            if n.op in ("leaf", "const"):
                values[n.idx] = n.value
                continue
            values[n.idx] = _FORWARD[n.op](n, [values[i.idx] for i in n.inputs])
            if not np.array_equal(values[n.idx], n.value):
                ok = False
        return ok


# -- op tables -----------------------------------------------------------------


def _fwd_linear(node, vals):
    has_b = node.aux
    if has_b:
        W, b, parts = vals[0], vals[1], vals[2:]
        X = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
        return X @ W.T + b
    W, parts = vals[0], vals[1:]
    X = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
    return X @ W.T


def _bwd_linear(node):
    g = node.grad
    has_b = node.aux
    if has_b:
        W, b, *parts = node.inputs
        b._add_grad(g.sum(axis=0))
    else:
        W, *parts = node.inputs
    X = parts[0].value if len(parts) == 1 else np.concatenate(
        [p.value for p in parts], axis=1
    )
    W._add_grad(g.T @ X)
    dX = g @ W.value
    col = 0
    for p in parts:
        w = p.value.shape[1]
        if p.op != "const":
            p._add_grad(dX[:, col : col + w])
        col += w


def _fwd_noisy(node, vals):
    eps_w, eps_b = node.aux
    W_mu, W_sig, b_mu, b_sig, *parts = vals
    W = W_mu + W_sig * eps_w
    b = b_mu + b_sig * eps_b
    X = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
    return X @ W.T + b


def _bwd_noisy(node):
    g = node.grad
    eps_w, eps_b = node.aux
    W_mu, W_sig, b_mu, b_sig, *parts = node.inputs
    X = parts[0].value if len(parts) == 1 else np.concatenate(
        [p.value for p in parts], axis=1
    )
    dW = g.T @ X
    W_mu._add_grad(dW)
    W_sig._add_grad(dW * eps_w)
    db = g.sum(axis=0)
    b_mu._add_grad(db)
    b_sig._add_grad(db * eps_b)
    W = W_mu.value + W_sig.value * eps_w
    dX = g @ W
    col = 0
    for p in parts:
        w = p.value.shape[1]
        if p.op != "const":
            p._add_grad(dX[:, col : col + w])
        col += w


def _bwd_relu(node):
    (x,) = node.inputs
    x._add_grad(node.grad * (node.value > 0.0))


def _bwd_add(node):
    a, b = node.inputs
    if a.op != "const":
        a._add_grad(node.grad)
    if b.op != "const":
        b._add_grad(node.grad)


def _bwd_gather(node):
    (x,) = node.inputs
    g = np.zeros_like(x.value)
    np.add.at(g, node.aux, node.grad)
    x._add_grad(g)


def _bwd_segment_sum(node):
    (x,) = node.inputs
    idx, _ = node.aux
    x._add_grad(node.grad[idx])


def _bwd_sum_all(node):
    (x,) = node.inputs
    x._add_grad(np.full_like(x.value, float(node.grad)))


def _bwd_scale(node):
    (x,) = node.inputs
    x._add_grad(node.grad * node.aux)


def _bwd_sq_err(node):
    (pred,) = node.inputs
    pred._add_grad(2.0 * (pred.value - node.aux) * float(node.grad))


def _bwd_softmax_xent(node):
    (logits,) = node.inputs
    target, p = node.aux
    d = p.copy()
    d[target] -= 1.0
    logits._add_grad((d * float(node.grad)).reshape(logits.value.shape))


_FORWARD = {
    "linear": _fwd_linear,
    "noisy_linear": _fwd_noisy,
    "relu": lambda n, v: np.maximum(v[0], 0.0),
    "add": lambda n, v: v[0] + v[1],
    "gather": lambda n, v: v[0][n.aux],
    "segment_sum": lambda n, v: _replay_segsum(n, v),
    "sum_all": lambda n, v: np.asarray(v[0].sum()),
    "scale": lambda n, v: v[0] * n.aux,
    "sq_err": lambda n, v: _replay_sq_err(n, v),
    "softmax_xent": lambda n, v: _replay_xent(n, v),
}


def _replay_segsum(node, vals):
    idx, n_out = node.aux
    return scatter_add_rows(vals[0], idx, n_out)


def _replay_sq_err(node, vals):
    diff = vals[0] - node.aux
    return np.asarray((diff * diff).sum())


def _replay_xent(node, vals):
    target, _ = node.aux
    z = vals[0].reshape(-1)
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    return np.asarray(-np.log(max(p[target], 1e-300)))


_BACKWARD = {
    "linear": _bwd_linear,
    "noisy_linear": _bwd_noisy,
    "relu": _bwd_relu,
    "add": _bwd_add,
    "gather": _bwd_gather,
    "segment_sum": _bwd_segment_sum,
    "sum_all": _bwd_sum_all,
    "scale": _bwd_scale,
    "sq_err": _bwd_sq_err,
    "softmax_xent": _bwd_softmax_xent,
}
