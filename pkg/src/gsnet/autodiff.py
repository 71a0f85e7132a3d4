"""Reverse-mode differentiation over the primitive operation set.

A `Tape` records every operation executed on it, in execution (hence
topological) order.  `backward` sweeps the record once in reverse and fills
parameter gradients.  `finite_diff_check` is the independent central
difference oracle used to validate tape gradients.

Values on the tape are raw float64 numpy arrays: rank 4 for feature maps,
rank 3 for per-batch-item matrices, rank 2/1 for plain matrices/vectors and
rank 0 for scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    conv3x3_grads,
    conv3x3_raw,
    layer_norm_raw,
    pool2x2_blocks,
    sigmoid,
    softmax_lastaxis,
)


class Node:
    """One value produced during forward recording."""

    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value


class Parameter(Node):
    """A named, trainable leaf value with an attached gradient buffer."""

    __slots__ = ("id", "grad")

    def __init__(self, id: str, value):
        super().__init__(np.array(value, dtype=np.float64))
        self.id = id
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.id!r}, shape={self.value.shape})"


class Tape:
    """Single-writer record of primitive operations, ready for one reverse
    sweep.  All op methods return fresh `Node`s; binding the same `Parameter`
    twice yields the same node so its gradient accumulates."""

    def __init__(self):
        self._records = []        # (out, inputs, backward_fn)
        self._known = set()       # id() of every node this tape produced/bound
        self._leaves = []         # keeps input nodes alive
        self._params = {}         # id(Parameter) -> Parameter

    # -- node creation -----------------------------------------------------

    def input(self, value) -> Node:
        """Wrap a constant (non-trainable) value as a tape node."""
        node = Node(np.asarray(value, dtype=np.float64))
        self._known.add(id(node))
        self._leaves.append(node)
        return node

    def param(self, p: Parameter) -> Parameter:
        """Bind a trainable parameter to this tape."""
        if id(p) not in self._params:
            self._params[id(p)] = p
            self._known.add(id(p))
        return p

    def record(self, value, inputs, backward_fn) -> Node:
        """Register one executed operation.

        `backward_fn(grad_out)` must return one gradient per entry of
        `inputs` (None for non-differentiable inputs).  Exposed so domain
        modules can add fused operations (e.g. the cross-entropy loss).
        """
        out = Node(np.asarray(value, dtype=np.float64))
        self._records.append((out, tuple(inputs), backward_fn))
        self._known.add(id(out))
        return out

    @property
    def bound_params(self):
        return list(self._params.values())

    # -- pointwise and fusion ops -------------------------------------------

    def elementwise_mul(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ValueError(f"shape mismatch: {a.value.shape} vs {b.value.shape}")
        av, bv = a.value, b.value
        return self.record(av * bv, (a, b), lambda g: (g * bv, g * av))

    def weighted_sum3(self, a: Node, b: Node, c: Node, w1, w2, w3) -> Node:
        """w1*a + w2*b + w3*c.  Each weight is a scalar Node (learnable) or a
        plain float (fixed, receives no gradient)."""
        if not (a.value.shape == b.value.shape == c.value.shape):
            raise ValueError("weighted_sum3 requires identical shapes")
        tensors = (a, b, c)
        weights = (w1, w2, w3)
        vals = [float(w.value) if isinstance(w, Node) else float(w) for w in weights]
        out = vals[0] * a.value + vals[1] * b.value + vals[2] * c.value
        inputs = list(tensors) + [w for w in weights if isinstance(w, Node)]
        tensor_vals = [t.value for t in tensors]

        def backward(g):
            grads = [vals[i] * g for i in range(3)]
            for i, w in enumerate(weights):
                if isinstance(w, Node):
                    grads.append(np.asarray((g * tensor_vals[i]).sum()))
            return tuple(grads)

        return self.record(out, inputs, backward)

    def add(self, a: Node, b: Node) -> Node:
        if a.value.shape != b.value.shape:
            raise ValueError("add requires identical shapes")
        return self.record(a.value + b.value, (a, b), lambda g: (g, g))

    def scale(self, x: Node, c: float) -> Node:
        return self.record(c * x.value, (x,), lambda g: (c * g,))

    def swish(self, x: Node) -> Node:
        xv = x.value
        s = sigmoid(xv)
        return self.record(xv * s, (x,), lambda g: (g * (s + xv * s * (1.0 - s)),))

    # -- convolutions and normalization --------------------------------------

    def conv1x1(self, x: Node, weight: Node, bias: Node) -> Node:
        xv, wv, bv = x.value, weight.value, bias.value
        if xv.shape[3] != wv.shape[0]:
            raise ValueError(f"conv1x1 expects {wv.shape[0]} channels, got {xv.shape[3]}")
        out = np.tensordot(xv, wv, axes=([3], [0])) + bv

        def backward(g):
            gx = np.tensordot(g, wv.T, axes=([3], [0]))
            gw = np.tensordot(xv, g, axes=([0, 1, 2], [0, 1, 2]))
            return gx, gw, g.sum(axis=(0, 1, 2))

        return self.record(out, (x, weight, bias), backward)

    def conv3x3(self, x: Node, weight: Node, bias: Node, stride: int = 1) -> Node:
        xv, wv = x.value, weight.value
        if xv.shape[3] != wv.shape[2]:
            raise ValueError(f"conv3x3 expects {wv.shape[2]} channels, got {xv.shape[3]}")
        out, cols = conv3x3_raw(xv, wv, bias.value, stride)
        return self.record(
            out, (x, weight, bias),
            lambda g: conv3x3_grads(g, cols, wv, xv.shape, stride),
        )

    def layer_norm(self, x: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
        xv, gv = x.value, gamma.value
        if gv.shape != (xv.shape[3],) or beta.value.shape != (xv.shape[3],):
            raise ValueError(f"gamma/beta must have shape ({xv.shape[3]},)")
        out, normalized, inv_std = layer_norm_raw(xv, gv, beta.value, eps)
        lead = tuple(range(xv.ndim - 1))

        def backward(g):
            g_hat = g * gv
            gx = inv_std * (
                g_hat
                - g_hat.mean(axis=-1, keepdims=True)
                - normalized * (g_hat * normalized).mean(axis=-1, keepdims=True)
            )
            return gx, (g * normalized).sum(axis=lead), g.sum(axis=lead)

        return self.record(out, (x, gamma, beta), backward)

    # -- pooling --------------------------------------------------------------

    def global_max_pool(self, x: Node) -> Node:
        n, h, w, k = x.value.shape
        flat = x.value.reshape(n, h * w, k)
        # argmax picks the first maximum in row-major scan order (determinism)
        idx = flat.argmax(axis=1)
        out = np.take_along_axis(flat, idx[:, None, :], axis=1).reshape(n, 1, 1, k)

        def backward(g):
            gf = np.zeros_like(flat)
            np.put_along_axis(gf, idx[:, None, :], g.reshape(n, 1, k), axis=1)
            return (gf.reshape(n, h, w, k),)

        return self.record(out, (x,), backward)

    def global_avg_pool(self, x: Node) -> Node:
        n, h, w, k = x.value.shape
        out = x.value.mean(axis=(1, 2), keepdims=True)
        scale = 1.0 / (h * w)
        return self.record(
            out, (x,), lambda g: (np.broadcast_to(g * scale, (n, h, w, k)),)
        )

    def maxpool2x2(self, x: Node) -> Node:
        n, h, w, k = x.value.shape
        if h % 2 or w % 2:
            raise ValueError(f"maxpool2x2 requires even spatial dims, got {h}x{w}")
        blocks = pool2x2_blocks(x.value)
        idx = blocks.argmax(axis=3)
        out = np.take_along_axis(blocks, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]

        def backward(g):
            gb = np.zeros_like(blocks)
            np.put_along_axis(gb, idx[:, :, :, None, :], g[:, :, :, None, :], axis=3)
            gb = gb.reshape(n, h // 2, w // 2, 2, 2, k).transpose(0, 1, 3, 2, 4, 5)
            return (gb.reshape(n, h, w, k),)

        return self.record(out, (x,), backward)

    # -- reshapes between feature maps and (batched) matrices ------------------

    def flatten_spatial(self, x: Node) -> Node:
        """(n, h, w, k) -> (n, h*w, k); rows scan spatial positions row-major."""
        n, h, w, k = x.value.shape
        return self.record(
            x.value.reshape(n, h * w, k), (x,), lambda g: (g.reshape(n, h, w, k),)
        )

    def unflatten_spatial(self, x: Node, h: int, w: int) -> Node:
        """(n, h*w, k) -> (n, h, w, k)."""
        n, hw, k = x.value.shape
        if hw != h * w:
            raise ValueError(f"cannot unflatten {hw} positions into {h}x{w}")
        return self.record(
            x.value.reshape(n, h, w, k), (x,), lambda g: (g.reshape(n, hw, k),)
        )

    def squeeze_pooled(self, x: Node) -> Node:
        """(n, 1, 1, k) -> (n, k)."""
        n, h, w, k = x.value.shape
        if (h, w) != (1, 1):
            raise ValueError(f"squeeze_pooled needs 1x1 spatial dims, got {h}x{w}")
        return self.record(
            x.value.reshape(n, k), (x,), lambda g: (g.reshape(n, 1, 1, k),)
        )

    def bmat_transpose(self, x: Node) -> Node:
        """Transpose each matrix of a (n, rows, cols) stack."""
        return self.record(
            x.value.transpose(0, 2, 1), (x,), lambda g: (g.transpose(0, 2, 1),)
        )

    def bmatmul(self, a: Node, b: Node) -> Node:
        """Per-batch-item matrix product: (n,r,c) @ (n,c,m) -> (n,r,m)."""
        av, bv = a.value, b.value
        if av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
            raise ValueError(f"bmatmul dims differ: {av.shape} vs {bv.shape}")
        return self.record(
            av @ bv,
            (a, b),
            lambda g: (g @ bv.transpose(0, 2, 1), av.transpose(0, 2, 1) @ g),
        )

    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        if av.shape[1] != bv.shape[0]:
            raise ValueError(f"matmul inner dims differ: {av.shape} vs {bv.shape}")
        return self.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def add_row_bias(self, m: Node, bias: Node) -> Node:
        """(n, c) + (c,) broadcast over rows."""
        return self.record(
            m.value + bias.value, (m, bias), lambda g: (g, g.sum(axis=0))
        )

    def softmax_rows(self, x: Node) -> Node:
        """Row softmax over the last axis of a (…, rows, cols) stack."""
        y = softmax_lastaxis(x.value)
        return self.record(
            y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
        )

    # -- reductions to a scalar -------------------------------------------------

    def sum_all(self, x: Node) -> Node:
        xv = x.value
        return self.record(xv.sum(), (x,), lambda g: (np.full(xv.shape, float(g)),))

    def mean_all(self, x: Node) -> Node:
        xv = x.value
        return self.record(
            xv.mean(), (x,), lambda g: (np.full(xv.shape, float(g) / xv.size),)
        )


def backward(tape: Tape, loss: Node, params=None) -> None:
    """Fill `Parameter.grad` with d(loss)/d(parameter) for every parameter.

    Parameters bound to the tape but not on any path to the loss receive
    zero gradients, as does every entry of `params` (if given) that never
    touched the tape.
    """
    if not isinstance(loss.value, np.ndarray) or loss.value.ndim != 0:
        raise ValueError("loss must be a scalar node")
    if id(loss) not in tape._known:
        raise ValueError("loss was not produced on this tape")
    grads = {id(loss): np.ones(())}
    for out, inputs, backward_fn in reversed(tape._records):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        for node, g_in in zip(inputs, backward_fn(g_out)):
            if g_in is None:
                continue
            key = id(node)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in
    targets = list(tape._params.values())
    if params is not None:
        seen = {id(p) for p in targets}
        targets += [p for p in params if id(p) not in seen]
    for p in targets:
        g = grads.get(id(p))
        p.grad = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64)


# ---------------------------------------------------------------------------
# Finite-difference oracle.
# ---------------------------------------------------------------------------

@dataclass
class GradcheckRow:
    param_id: str
    checked: int
    max_rel_err: float
    passed: bool


@dataclass
class GradcheckReport:
    """Per-parameter comparison of tape gradients against central differences."""

    tol: float
    rows: list[GradcheckRow] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def worst(self) -> float:
        return max((r.max_rel_err for r in self.rows), default=0.0)

    def to_text(self) -> str:
        width = max([len(r.param_id) for r in self.rows] + [9])
        lines = [f"{'parameter':<{width}}  checked  max_rel_err  status"]
        for r in self.rows:
            status = "pass" if r.passed else "FAIL"
            lines.append(f"{r.param_id:<{width}}  {r.checked:7d}  {r.max_rel_err:.3e}    {status}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["parameter,elements_checked,max_rel_error,pass"]
        for r in self.rows:
            lines.append(f"{r.param_id},{r.checked},{r.max_rel_err:.12e},{str(r.passed).lower()}")
        return "\n".join(lines) + "\n"


def finite_diff_check(f, params, h: float = 1e-5, tol: float = 1e-6,
                      max_elements: int | None = None, seed: int = 0) -> GradcheckReport:
    """Compare tape gradients with central differences (f(p+h)-f(p-h))/2h.

    `f` takes no arguments, evaluates the loss under the *current* parameter
    values and returns (tape, loss_node); it must be deterministic.  For each
    parameter, up to `max_elements` entries are perturbed (all of them when
    None).  Relative error per element is
    |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    params = list(params)
    tape, loss = f()
    if not np.isfinite(loss.value):
        raise ValueError("non-finite loss at the evaluation point")
    backward(tape, loss, params=params)
    analytic = {p.id: p.grad.copy() for p in params}

    def eval_loss() -> float:
        val = float(f()[1].value)
        if not np.isfinite(val):
            raise ValueError("non-finite loss during finite differencing")
        return val

    report = GradcheckReport(tol=tol)
    for index, p in enumerate(params):
        flat = p.value.reshape(-1)
        n = flat.size
        if max_elements is None or n <= max_elements:
            picks = np.arange(n)
        else:
            rng = np.random.default_rng([seed, index])
            picks = np.sort(rng.choice(n, size=max_elements, replace=False))
        grad_flat = analytic[p.id].reshape(-1)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = eval_loss()
            flat[i] = orig - h
            f_minus = eval_loss()
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * h)
            g_ad = grad_flat[i]
            rel = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
            worst = max(worst, rel)
        report.rows.append(GradcheckRow(p.id, len(picks), worst, worst < tol))
    return report
