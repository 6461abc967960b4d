"""Reverse-mode autodiff over 2-D arrays.

Nodes are appended in creation order, which is already a topological order;
``backward`` walks the list once in reverse, pushing each node's gradient
into its parents' slots. Gradient slots are allocated lazily, so parameters
that never reach the loss come back as exact zeros rather than rounding
noise.

Everything on a tape is a 2-D array; scalars are 1x1 nodes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ArgumentError, NumericError, ShapeError

_RMSNORM_EPS = 1e-6


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(self, value: np.ndarray, parents=(), backward_fn=None, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Node{tag}{self.value.shape}"


def _accumulate(node: Node, grad: np.ndarray) -> None:
    if node.grad is None:
        node.grad = grad.copy()
    else:
        node.grad += grad


class Tape:
    """Records primitive ops; replays them in reverse for gradients."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    # -- leaves ----------------------------------------------------------

    def param(self, name: str, value: np.ndarray) -> Node:
        """Register a trainable leaf. Names must be unique per tape."""
        if name in self.params:
            raise ArgumentError(f"parameter {name!r} already registered on this tape")
        node = self._record(np.asarray(value), (), None, name=name)
        self.params[name] = node
        return node

    def constant(self, value: np.ndarray) -> Node:
        return self._record(np.asarray(value), (), None)

    def _record(self, value, parents, backward_fn, name=None) -> Node:
        node = Node(value, parents, backward_fn, name)
        self.nodes.append(node)
        return node

    def reset(self) -> None:
        """Drop all recorded nodes; the tape is reusable afterwards."""
        self.nodes.clear()
        self.params.clear()

    # -- arithmetic --------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"add mismatch: {a.shape} vs {b.shape}")

        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return self._record(a.value + b.value, (a, b), bwd)

    def sub(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"sub mismatch: {a.shape} vs {b.shape}")

        def bwd(g):
            _accumulate(a, g)
            _accumulate(b, -g)

        return self._record(a.value - b.value, (a, b), bwd)

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)

        def bwd(g):
            _accumulate(a, g * c)

        return self._record(a.value * c, (a,), bwd)

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul mismatch: {a.shape} x {b.shape}")

        def bwd(g):
            _accumulate(a, g @ b.value.T)
            _accumulate(b, a.value.T @ g)

        return self._record(a.value @ b.value, (a, b), bwd)

    def transpose(self, a: Node) -> Node:
        def bwd(g):
            _accumulate(a, g.T)

        return self._record(a.value.T.copy(), (a,), bwd)

    # -- nonlinearities ------------------------------------------------------

    def relu(self, a: Node) -> Node:
        mask = a.value > 0

        def bwd(g):
            _accumulate(a, g * mask)

        return self._record(a.value * mask, (a,), bwd)

    def tanh(self, a: Node) -> Node:
        out = np.tanh(a.value)

        def bwd(g):
            _accumulate(a, g * (1.0 - out * out))

        return self._record(out, (a,), bwd)

    def rmsnorm(self, a: Node) -> Node:
        """Row-wise x / sqrt(mean(x^2) + eps), no learned gain."""
        x = a.value
        n = x.shape[1]
        scale = 1.0 / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + _RMSNORM_EPS)
        out = x * scale

        def bwd(g):
            dot = np.sum(x * g, axis=1, keepdims=True)
            _accumulate(a, scale * (g - (scale * scale / n) * x * dot))

        return self._record(out, (a,), bwd)

    def softmax_rows(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)

        def bwd(g):
            dot = np.sum(p * g, axis=1, keepdims=True)
            _accumulate(a, p * (g - dot))

        return self._record(p, (a,), bwd)

    # -- structure -------------------------------------------------------

    def mean_rows(self, a: Node) -> Node:
        """(m, n) -> (1, n) column means."""
        m = a.shape[0]
        out = a.value.mean(axis=0, keepdims=True)

        def bwd(g):
            _accumulate(a, np.repeat(g / m, m, axis=0))

        return self._record(out, (a,), bwd)

    def gather_rows(self, table: Node, indices) -> Node:
        idx = np.asarray(indices, dtype=np.intp).reshape(-1)
        out = table.value[idx]

        def bwd(g):
            gt = np.zeros_like(table.value)
            np.add.at(gt, idx, g)
            _accumulate(table, gt)

        return self._record(out, (table,), bwd)

    def slice_cols(self, a: Node, j0: int, j1: int) -> Node:
        if not (0 <= j0 < j1 <= a.shape[1]):
            raise ShapeError(f"column slice [{j0}:{j1}] out of range for {a.shape}")

        def bwd(g):
            ga = np.zeros_like(a.value)
            ga[:, j0:j1] = g
            _accumulate(a, ga)

        return self._record(a.value[:, j0:j1].copy(), (a,), bwd)

    def concat_cols(self, parts: list[Node]) -> Node:
        widths = [p.shape[1] for p in parts]
        offsets = np.cumsum([0] + widths)

        def bwd(g):
            for p, j0, j1 in zip(parts, offsets[:-1], offsets[1:]):
                _accumulate(p, g[:, j0:j1])

        return self._record(np.concatenate([p.value for p in parts], axis=1),
                            tuple(parts), bwd)

    def concat_rows(self, parts: list[Node]) -> Node:
        heights = [p.shape[0] for p in parts]
        offsets = np.cumsum([0] + heights)

        def bwd(g):
            for p, i0, i1 in zip(parts, offsets[:-1], offsets[1:]):
                _accumulate(p, g[i0:i1])

        return self._record(np.concatenate([p.value for p in parts], axis=0),
                            tuple(parts), bwd)

    # -- losses ------------------------------------------------------------

    def mse(self, pred: Node, target: np.ndarray) -> Node:
        target = np.asarray(target)
        if pred.shape != target.shape:
            raise ShapeError(f"mse mismatch: {pred.shape} vs {target.shape}")
        diff = pred.value - target
        out = np.array([[np.mean(diff * diff, dtype=np.float64)]], dtype=pred.value.dtype)

        def bwd(g):
            _accumulate(pred, (2.0 / diff.size) * diff * float(g[0, 0]))

        return self._record(out, (pred,), bwd)

    def cross_entropy(self, logits: Node, labels) -> Node:
        """Mean softmax cross-entropy against integer labels."""
        y = np.asarray(labels, dtype=np.intp).reshape(-1)
        n, k = logits.shape
        if y.shape[0] != n:
            raise ShapeError(f"labels length {y.shape[0]} vs batch {n}")
        if y.min(initial=0) < 0 or y.max(initial=0) >= k:
            raise ArgumentError(f"labels must lie in [0, {k})")
        z = logits.value - logits.value.max(axis=1, keepdims=True)
        logsumexp = np.log(np.sum(np.exp(z), axis=1, keepdims=True))
        logp = z - logsumexp
        out = np.array([[-np.mean(logp[np.arange(n), y], dtype=np.float64)]],
                       dtype=logits.value.dtype)
        p = np.exp(logp)

        def bwd(g):
            grad = p.copy()
            grad[np.arange(n), y] -= 1.0
            _accumulate(logits, grad * (float(g[0, 0]) / n))

        return self._record(out, (logits,), bwd)

    # -- reverse pass --------------------------------------------------------

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss for every registered parameter.

        Visits recorded nodes exactly once, newest first. Parameters with no
        path to the loss return exact-zero arrays.
        """
        if loss.value.size != 1:
            raise ArgumentError(f"loss must be scalar, got shape {loss.value.shape}")
        if loss not in self.nodes:
            raise ArgumentError("loss node does not belong to this tape")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            node.backward_fn(node.grad)
        return {
            name: (node.grad if node.grad is not None else np.zeros_like(node.value))
            for name, node in self.params.items()
        }


def finite_diff_grad(f: Callable[[dict], float], params: dict[str, np.ndarray],
                     step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradients, the independent oracle for ``backward``.

    ``f`` must be a deterministic scalar function that reads the (temporarily
    perturbed) arrays in ``params`` on every call.
    """
    if step <= 0:
        raise ArgumentError(f"finite-difference step must be positive, got {step}")
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p, dtype=np.float64)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(params))
            flat[i] = orig - step
            fm = float(f(params))
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite evaluation while differencing {name!r}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * step)
        grads[name] = g.astype(p.dtype, copy=False)
    return grads
