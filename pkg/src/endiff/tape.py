"""A minimal reverse-mode differentiation tape over dense float64 matrices.

The tape records primitive operations in execution order; `backward` runs
reverse accumulation from a scalar loss and fills per-parameter gradients.
A tape is confined to a single thread for its lifetime; distinct tapes are
independent.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError
from .numerics import LAYER_NORM_EPS, NORM_EPS, as_matrix


class Ref:
    """Handle to a recorded tape node."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape


class _Node:
    __slots__ = ("kind", "value", "parents", "vjp")

    def __init__(self, kind, value, parents, vjp):
        self.kind = kind
        self.value = value
        self.parents = parents  # parent node indices, aligned with vjp outputs
        self.vjp = vjp  # grad_out -> tuple of parent grads (or None)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, int] = {}

    # -- leaves ---------------------------------------------------------

    def _record(self, kind, value, parents, vjp) -> Ref:
        self.nodes.append(_Node(kind, value, parents, vjp))
        return Ref(self, len(self.nodes) - 1)

    def constant(self, value) -> Ref:
        return self._record("constant", as_matrix(value), (), None)

    def parameter(self, name: str, value) -> Ref:
        if name in self.params:
            raise ContractError(f"parameter {name!r} already registered")
        ref = self._record("parameter", as_matrix(value), (), None)
        self.params[name] = ref.idx
        return ref

    # -- primitives -----------------------------------------------------

    def matmul(self, a: Ref, b: Ref) -> Ref:
        av, bv = a.value, b.value
        if av.shape[1] != bv.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
        return self._record(
            "matmul", av @ bv, (a.idx, b.idx),
            lambda g: (g @ bv.T, av.T @ g),
        )

    def _elemwise_pair(self, kind, a: Ref, b: Ref, value, vjp) -> Ref:
        if a.value.shape != b.value.shape:
            raise DimensionError(
                f"{kind} shape mismatch: {a.value.shape} vs {b.value.shape}"
            )
        return self._record(kind, value, (a.idx, b.idx), vjp)

    def add(self, a: Ref, b: Ref) -> Ref:
        return self._elemwise_pair(
            "add", a, b, a.value + b.value, lambda g: (g, g)
        )

    def sub(self, a: Ref, b: Ref) -> Ref:
        return self._elemwise_pair(
            "sub", a, b, a.value - b.value, lambda g: (g, -g)
        )

    def scale(self, a: Ref, c: float) -> Ref:
        c = float(c)
        return self._record("scale", c * a.value, (a.idx,), lambda g: (c * g,))

    def hadamard(self, a: Ref, b: Ref) -> Ref:
        av, bv = a.value, b.value
        return self._elemwise_pair(
            "hadamard", a, b, av * bv, lambda g: (g * bv, g * av)
        )

    def sigmoid(self, a: Ref) -> Ref:
        y = _sigmoid(a.value)
        return self._record("sigmoid", y, (a.idx,), lambda g: (g * y * (1.0 - y),))

    def relu(self, a: Ref) -> Ref:
        av = a.value
        mask = av > 0
        return self._record("relu", av * mask, (a.idx,), lambda g: (g * mask,))

    def reciprocal(self, a: Ref) -> Ref:
        y = 1.0 / a.value
        return self._record("reciprocal", y, (a.idx,), lambda g: (-g * y * y,))

    def transpose(self, a: Ref) -> Ref:
        return self._record("transpose", a.value.T.copy(), (a.idx,), lambda g: (g.T,))

    def row_l2_normalize(self, a: Ref, eps: float = NORM_EPS) -> Ref:
        av = a.value
        norms = np.sqrt(np.sum(av * av, axis=1, keepdims=True))
        denom = np.maximum(norms, eps)
        y = av / denom

        def vjp(g):
            # Rows at/below eps are a plain 1/eps scaling.
            live = norms > eps
            dot = np.sum(g * y, axis=1, keepdims=True)
            grad = np.where(live, (g - y * dot) / denom, g / denom)
            return (grad,)

        return self._record("row-l2-normalize", y, (a.idx,), vjp)

    def layer_norm(self, a: Ref, eps: float = LAYER_NORM_EPS) -> Ref:
        av = a.value
        d = av.shape[1]
        mean = av.mean(axis=1, keepdims=True)
        var = np.mean((av - mean) ** 2, axis=1, keepdims=True)
        std = np.sqrt(var + eps)
        y = (av - mean) / std

        def vjp(g):
            gm = g.mean(axis=1, keepdims=True)
            gy = np.mean(g * y, axis=1, keepdims=True)
            return ((g - gm - y * gy) / std,)

        _ = d
        return self._record("layer-norm", y, (a.idx,), vjp)

    def row_softmax(self, a: Ref) -> Ref:
        av = a.value
        shifted = av - av.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)

        def vjp(g):
            dot = np.sum(g * p, axis=1, keepdims=True)
            return (p * (g - dot),)

        return self._record("row-softmax", p, (a.idx,), vjp)

    def mean_over_list(self, refs: list[Ref]) -> Ref:
        if not refs:
            raise ContractError("mean-over-list needs at least one input")
        shape = refs[0].value.shape
        for r in refs:
            if r.value.shape != shape:
                raise DimensionError("mean-over-list inputs must share a shape")
        k = len(refs)
        value = sum(r.value for r in refs) / k
        return self._record(
            "mean-over-list", value, tuple(r.idx for r in refs),
            lambda g: tuple(g / k for _ in range(k)),
        )

    def diag_scale_rows(self, a: Ref, v: Ref) -> Ref:
        """Multiply row i of `a` by scalar v[i, 0]."""
        av, vv = a.value, v.value
        if vv.shape != (av.shape[0], 1):
            raise DimensionError(
                f"diag-scale-rows needs a {av.shape[0]}x1 scale, got {vv.shape}"
            )
        return self._record(
            "diag-scale-rows", av * vv, (a.idx, v.idx),
            lambda g: (g * vv, np.sum(g * av, axis=1, keepdims=True)),
        )

    def row_sum(self, a: Ref) -> Ref:
        av = a.value
        return self._record(
            "row-sum", av.sum(axis=1, keepdims=True), (a.idx,),
            lambda g: (np.broadcast_to(g, av.shape).copy(),),
        )

    def broadcast_row(self, row: Ref, n: int) -> Ref:
        rv = row.value
        if rv.shape[0] != 1:
            raise DimensionError(f"broadcast-row needs a 1xd row, got {rv.shape}")
        return self._record(
            "broadcast-row", np.repeat(rv, n, axis=0), (row.idx,),
            lambda g: (g.sum(axis=0, keepdims=True),),
        )

    def add_scalar(self, a: Ref, c: float) -> Ref:
        c = float(c)
        return self._record("add-scalar", a.value + c, (a.idx,), lambda g: (g,))

    def sum_all(self, a: Ref) -> Ref:
        av = a.value
        return self._record(
            "sum-all", np.array([[av.sum()]]), (a.idx,),
            lambda g: (np.full_like(av, g[0, 0]),),
        )

    def masked_cross_entropy(self, logits: Ref, labels: np.ndarray, mask: np.ndarray) -> Ref:
        """Mean negative log-softmax likelihood over masked rows (1x1 output)."""
        lv = logits.value
        labels = np.asarray(labels, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        if labels.shape[0] != lv.shape[0] or mask.shape[0] != lv.shape[0]:
            raise DimensionError("labels/mask length must match logits rows")
        rows = np.flatnonzero(mask)
        if rows.size == 0:
            raise ContractError("mask selects no rows")
        sel = lv[rows]
        shifted = sel - sel.max(axis=1, keepdims=True)
        lse = np.log(np.sum(np.exp(shifted), axis=1)) + sel.max(axis=1)
        picked = sel[np.arange(rows.size), labels[rows]]
        value = np.array([[float(np.mean(lse - picked))]])

        def vjp(g):
            p = np.exp(shifted)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(rows.size), labels[rows]] -= 1.0
            grad = np.zeros_like(lv)
            grad[rows] = p * (g[0, 0] / rows.size)
            return (grad,)

        return self._record("masked-cross-entropy", value, (logits.idx,), vjp)

    def masked_mse(self, pred: Ref, target: np.ndarray, mask: np.ndarray) -> Ref:
        pv = pred.value
        target = as_matrix(target)
        mask = np.asarray(mask, dtype=bool)
        if target.shape != pv.shape or mask.shape[0] != pv.shape[0]:
            raise DimensionError("target/mask shapes must match predictions")
        rows = np.flatnonzero(mask)
        if rows.size == 0:
            raise ContractError("mask selects no rows")
        diff = pv[rows] - target[rows]
        value = np.array([[float(np.mean(diff**2))]])

        def vjp(g):
            grad = np.zeros_like(pv)
            grad[rows] = diff * (2.0 * g[0, 0] / diff.size)
            return (grad,)

        return self._record("masked-mse", value, (pred.idx,), vjp)

    # -- generic dispatch (contract surface) ----------------------------

    _KIND_METHODS = {
        "matmul": "matmul",
        "add": "add",
        "sub": "sub",
        "scale": "scale",
        "hadamard": "hadamard",
        "sigmoid": "sigmoid",
        "relu": "relu",
        "row-l2-normalize": "row_l2_normalize",
        "layer-norm": "layer_norm",
        "row-softmax": "row_softmax",
        "mean-over-list": "mean_over_list",
        "transpose": "transpose",
        "diag-scale-rows": "diag_scale_rows",
        "row-sum": "row_sum",
        "broadcast-row": "broadcast_row",
        "reciprocal": "reciprocal",
        "sum-all": "sum_all",
        "add-scalar": "add_scalar",
    }

    def apply(self, kind: str, *args) -> Ref:
        try:
            method = self._KIND_METHODS[kind]
        except KeyError:
            raise ContractError(f"unknown primitive kind {kind!r}") from None
        return getattr(self, method)(*args)

    # -- reverse pass ---------------------------------------------------

    def backward(self, loss: Ref) -> dict[str, np.ndarray]:
        """Reverse accumulation from a scalar loss; returns parameter grads."""
        if loss.tape is not self:
            raise ContractError("loss belongs to a different tape")
        if loss.value.shape != (1, 1):
            raise ContractError(f"loss must be 1x1, got {loss.value.shape}")
        adjoint: dict[int, np.ndarray] = {loss.idx: np.ones((1, 1))}
        grads: dict[str, np.ndarray] = {}
        param_idx = {idx: name for name, idx in self.params.items()}
        for idx in range(loss.idx, -1, -1):
            g = adjoint.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            if idx in param_idx:
                name = param_idx[idx]
                grads[name] = grads.get(name, 0.0) + g
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent in adjoint:
                    adjoint[parent] = adjoint[parent] + pg
                else:
                    adjoint[parent] = pg
        for name, idx in self.params.items():
            grads.setdefault(name, np.zeros_like(self.nodes[idx].value))
        return grads


def tape_forward(tape: Tape, kind: str, *inputs) -> Ref:
    """Record one primitive on the tape; value equals the eager computation."""
    return tape.apply(kind, *inputs)


def tape_backward(tape: Tape, loss: Ref) -> dict[str, np.ndarray]:
    return tape.backward(loss)
