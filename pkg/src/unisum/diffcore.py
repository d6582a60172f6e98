"""Minimal reverse-mode automatic differentiation over dense numpy tensors.

Define-by-run tape: every operation executes eagerly, records a node, and
the recorded tape can be replayed with perturbed leaf values (used by the
finite-difference harness) or walked backwards to accumulate gradients.
Arithmetic is float64 by default; float32 can be selected per graph for
speed, but every correctness test in this repo runs in float64.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GraphConstructionError, NumericError

LOG_CLAMP = 1e-12


class Node:
    """One tape entry: an operation, its input nodes, and its current value."""

    __slots__ = ("graph", "idx", "op", "inputs", "value", "meta", "requires_grad", "name")

    def __init__(self, graph, idx, op, inputs, value, meta=None, requires_grad=False, name=None):
        self.graph = graph
        self.idx = idx
        self.op = op
        self.inputs = inputs
        self.value = value
        self.meta = meta
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"<Node {self.idx} op={self.op}{label} shape={self.value.shape}>"


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _expand_reduced(grad, shape, axis, keepdims):
    """Broadcast the gradient of a reduction back to the pre-reduction shape."""
    if axis is None:
        return np.broadcast_to(grad, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            grad = np.expand_dims(grad, ax)
    return np.broadcast_to(grad, shape)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _stable_softmax(x):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


# Forward rules. Each takes (meta, *input values) and returns the output value.
_FORWARD = {
    "matmul": lambda m, a, b: a @ b,
    "add": lambda m, a, b: a + b,
    "sub": lambda m, a, b: a - b,
    "mul": lambda m, a, b: a * b,
    "div": lambda m, a, b: a / b,
    "scale": lambda m, a: a * m,
    "offset": lambda m, a: a + m,
    "sigmoid": lambda m, a: _stable_sigmoid(a),
    "tanh": lambda m, a: np.tanh(a),
    "softmax": lambda m, a: _stable_softmax(a),
    "log": lambda m, a: np.log(np.maximum(a, LOG_CLAMP)),
    "concat": lambda m, *xs: np.concatenate(xs, axis=m),
    "stack": lambda m, *xs: np.stack(xs, axis=m),
    "slice": lambda m, a: a[m],
    "gather": lambda m, a: a[m],
    "scatter_add": lambda m, a: _scatter_forward(m, a),
    "reduce_sum": lambda m, a: np.sum(a, axis=m[0], keepdims=m[1]),
    "reduce_mean": lambda m, a: np.mean(a, axis=m[0], keepdims=m[1]),
    "minimum": lambda m, a, b: np.minimum(a, b),
    "reshape": lambda m, a: a.reshape(m),
}


def _scatter_forward(meta, src):
    indices, length = meta
    out = np.zeros((length,) + src.shape[1:], dtype=src.dtype)
    np.add.at(out, indices, src)
    return out


def _vjp_matmul(node, g):
    a, b = (n.value for n in node.inputs)
    if a.ndim == 1 and b.ndim == 1:
        return g * b, g * a
    if a.ndim == 1:
        return b @ g, np.outer(a, g)
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _vjp_log(node, g):
    x = node.inputs[0].value
    out = np.zeros_like(g)
    np.divide(g, x, out=out, where=x > LOG_CLAMP)
    return (out,)


def _vjp_concat(node, g):
    axis = node.meta
    sizes = [n.value.shape[axis] for n in node.inputs]
    offsets = np.cumsum([0] + sizes)
    slicer = [slice(None)] * g.ndim
    grads = []
    for i in range(len(sizes)):
        slicer[axis] = slice(offsets[i], offsets[i + 1])
        grads.append(g[tuple(slicer)])
    return tuple(grads)


def _vjp_slice(node, g):
    x = node.inputs[0].value
    out = np.zeros_like(x)
    out[node.meta] += g
    return (out,)


def _vjp_gather(node, g):
    x = node.inputs[0].value
    out = np.zeros_like(x)
    np.add.at(out, node.meta, g)
    return (out,)


def _vjp_softmax(node, g):
    y = node.value
    return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)


def _vjp_minimum(node, g):
    a, b = (n.value for n in node.inputs)
    take_a = a <= b
    return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)


# Backward rules. Each takes (node, upstream grad) and returns per-input grads.
_BACKWARD = {
    "matmul": _vjp_matmul,
    "add": lambda n, g: (
        _unbroadcast(g, n.inputs[0].value.shape),
        _unbroadcast(g, n.inputs[1].value.shape),
    ),
    "sub": lambda n, g: (
        _unbroadcast(g, n.inputs[0].value.shape),
        _unbroadcast(-g, n.inputs[1].value.shape),
    ),
    "mul": lambda n, g: (
        _unbroadcast(g * n.inputs[1].value, n.inputs[0].value.shape),
        _unbroadcast(g * n.inputs[0].value, n.inputs[1].value.shape),
    ),
    "div": lambda n, g: (
        _unbroadcast(g / n.inputs[1].value, n.inputs[0].value.shape),
        _unbroadcast(-g * n.inputs[0].value / n.inputs[1].value ** 2, n.inputs[1].value.shape),
    ),
    "scale": lambda n, g: (g * n.meta,),
    "offset": lambda n, g: (g,),
    "sigmoid": lambda n, g: (g * n.value * (1.0 - n.value),),
    "tanh": lambda n, g: (g * (1.0 - n.value ** 2),),
    "softmax": _vjp_softmax,
    "log": _vjp_log,
    "concat": _vjp_concat,
    "stack": lambda n, g: tuple(np.take(g, i, axis=n.meta) for i in range(len(n.inputs))),
    "slice": _vjp_slice,
    "gather": _vjp_gather,
    "scatter_add": lambda n, g: (g[n.meta[0]],),
    "reduce_sum": lambda n, g: (
        _expand_reduced(g, n.inputs[0].value.shape, n.meta[0], n.meta[1]).copy(),
    ),
    "reduce_mean": lambda n, g: (
        _expand_reduced(g, n.inputs[0].value.shape, n.meta[0], n.meta[1])
        / (n.inputs[0].value.size / n.value.size),
    ),
    "minimum": _vjp_minimum,
    "reshape": lambda n, g: (g.reshape(n.inputs[0].value.shape),),
}


class Graph:
    """A single-writer computation tape.

    Construction executes eagerly, so node values are always available
    (argmax-style decisions made while building are thereby frozen into the
    tape, which is the intended subgradient treatment for top-k selections).
    """

    def __init__(self, check_finite=True, dtype=np.float64):
        self.nodes = []
        self.check_finite = check_finite
        self.dtype = np.dtype(dtype)

    # ---- leaves ----

    def leaf(self, value, requires_grad=False, name=None):
        arr = np.asarray(value)
        if arr.dtype.kind == "f" and arr.dtype != self.dtype:
            arr = arr.astype(self.dtype)
        node = Node(self, len(self.nodes), "leaf", (), arr, requires_grad=requires_grad, name=name)
        self.nodes.append(node)
        return node

    def param(self, value, name):
        return self.leaf(value, requires_grad=True, name=name)

    # ---- op recording ----

    def _record(self, op, inputs, meta=None):
        try:
            value = _FORWARD[op](meta, *(n.value for n in inputs))
        except (ValueError, IndexError) as exc:
            shapes = [n.value.shape for n in inputs]
            raise GraphConstructionError(f"op {op!r} on shapes {shapes}: {exc}") from exc
        node = Node(
            self,
            len(self.nodes),
            op,
            tuple(inputs),
            value,
            meta=meta,
            requires_grad=any(n.requires_grad for n in inputs),
        )
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced by node {node!r}")
        self.nodes.append(node)
        return node

    def matmul(self, a, b):
        return self._record("matmul", (a, b))

    def add(self, a, b):
        return self._record("add", (a, b))

    def sub(self, a, b):
        return self._record("sub", (a, b))

    def mul(self, a, b):
        return self._record("mul", (a, b))

    def div(self, a, b):
        return self._record("div", (a, b))

    def scale(self, x, c):
        return self._record("scale", (x,), meta=float(c))

    def offset(self, x, c):
        return self._record("offset", (x,), meta=float(c))

    def sigmoid(self, x):
        return self._record("sigmoid", (x,))

    def tanh(self, x):
        return self._record("tanh", (x,))

    def softmax(self, x):
        return self._record("softmax", (x,))

    def log(self, x):
        return self._record("log", (x,))

    def concat(self, xs, axis=0):
        return self._record("concat", tuple(xs), meta=int(axis))

    def stack(self, xs, axis=0):
        return self._record("stack", tuple(xs), meta=int(axis))

    def slice(self, x, key):
        return self._record("slice", (x,), meta=key)

    def gather(self, x, indices):
        idx = np.asarray(indices, dtype=np.intp)
        if x.value.ndim and idx.size and (idx.min() < 0 or idx.max() >= x.value.shape[0]):
            raise GraphConstructionError(
                f"gather indices out of range [0, {x.value.shape[0]}): {idx}"
            )
        return self._record("gather", (x,), meta=idx)

    def scatter_add(self, src, indices, length):
        idx = np.asarray(indices, dtype=np.intp)
        if idx.shape != src.value.shape[:1]:
            raise GraphConstructionError(
                f"scatter_add indices shape {idx.shape} != src leading dim {src.value.shape[:1]}"
            )
        if idx.size and (idx.min() < 0 or idx.max() >= length):
            raise GraphConstructionError(f"scatter_add indices out of range [0, {length})")
        return self._record("scatter_add", (src,), meta=(idx, int(length)))

    def reduce_sum(self, x, axis=None, keepdims=False):
        return self._record("reduce_sum", (x,), meta=(axis, keepdims))

    def reduce_mean(self, x, axis=None, keepdims=False):
        return self._record("reduce_mean", (x,), meta=(axis, keepdims))

    def minimum(self, a, b):
        return self._record("minimum", (a, b))

    def reshape(self, x, shape):
        return self._record("reshape", (x,), meta=tuple(shape))

    # ---- execution ----

    def replay(self, mask=None, check_finite=None):
        """Recompute node values in tape order from current leaf values.

        `mask` is an optional boolean list restricting recomputation to the
        nodes it marks (the finite-difference harness passes the downstream
        set of the perturbed leaf).
        """
        check = self.check_finite if check_finite is None else check_finite
        for node in self.nodes:
            if node.op == "leaf":
                continue
            if mask is not None and not mask[node.idx]:
                continue
            value = _FORWARD[node.op](node.meta, *(n.value for n in node.inputs))
            if check and not np.all(np.isfinite(value)):
                raise NumericError(f"non-finite value produced by node {node!r}")
            node.value = value

    def downstream_mask(self, leaves):
        """Boolean tape mask of every node reachable from the given leaves."""
        wanted = {n.idx for n in leaves}
        mask = [False] * len(self.nodes)
        for node in self.nodes:
            if node.idx in wanted:
                mask[node.idx] = True
            elif node.inputs and any(mask[n.idx] for n in node.inputs):
                mask[node.idx] = True
        return mask


def forward(graph, feeds=None, outputs=None):
    """Replay the tape, optionally substituting leaf values first.

    Returns the value of each node in `outputs` (or the final node's value).
    """
    changed = None
    if feeds:
        changed = []
        for node, value in feeds.items():
            if node.op != "leaf":
                raise GraphConstructionError(f"can only feed leaf nodes, got {node!r}")
            arr = np.asarray(value)
            if arr.shape != node.value.shape:
                raise GraphConstructionError(
                    f"feed shape {arr.shape} != leaf shape {node.value.shape}"
                )
            node.value = arr.astype(node.value.dtype)
            changed.append(node)
        graph.replay(mask=graph.downstream_mask(changed))
    else:
        graph.replay()
    if outputs is None:
        return graph.nodes[-1].value
    return [n.value for n in outputs]


def gradients(graph, loss, wrt=None):
    """Reverse-mode gradient of a scalar loss node.

    Returns a dict mapping each gradient-tracked leaf (or each node in
    `wrt`) to its gradient; untouched parameters get exact zeros.
    """
    if loss.value.size != 1:
        raise GraphConstructionError(f"loss must be scalar, got shape {loss.value.shape}")
    grads = [None] * len(graph.nodes)
    grads[loss.idx] = np.ones_like(loss.value)
    for node in reversed(graph.nodes[: loss.idx + 1]):
        g = grads[node.idx]
        if g is None or node.op == "leaf" or not node.requires_grad:
            continue
        for inp, gi in zip(node.inputs, _BACKWARD[node.op](node, g)):
            if gi is None or not inp.requires_grad:
                continue
            if grads[inp.idx] is None:
                grads[inp.idx] = np.zeros_like(inp.value)
            grads[inp.idx] += gi
    if wrt is None:
        wrt = [n for n in graph.nodes if n.op == "leaf" and n.requires_grad]
    out = {}
    for node in wrt:
        g = grads[node.idx]
        out[node] = np.zeros_like(node.value) if g is None else g
    return out


@dataclass
class FiniteDiffReport:
    """Result of comparing analytic gradients against central differences."""

    epsilon: float
    tolerance: float
    max_rel_error: float = 0.0
    worst_param: str = ""
    worst_index: tuple = ()
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    def summary(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"{status}: max rel error {self.max_rel_error:.3e} at "
            f"{self.worst_param}{list(self.worst_index)} (tol {self.tolerance:g})"
        )


def _refined_numeric(graph, loss, leaf, index, orig, epsilon, mask):
    """Central difference with the perturbed cone replayed in extended
    precision. Cuts the f(x+eps)-f(x-eps) roundoff far below tolerance for
    entries whose true gradient sits near the relative-error floor; on
    platforms where long double aliases double this equals the plain path.
    """
    saved = leaf.value
    work = saved.astype(np.longdouble)
    flat = work.reshape(-1)
    eps = np.longdouble(epsilon)
    leaf.value = work
    try:
        flat[index] = np.longdouble(orig) + eps
        graph.replay(mask=mask, check_finite=False)
        f_plus = loss.value.copy()
        flat[index] = np.longdouble(orig) - eps
        graph.replay(mask=mask, check_finite=False)
        f_minus = loss.value.copy()
    finally:
        leaf.value = saved
    return float((np.longdouble(f_plus) - np.longdouble(f_minus)) / (2 * eps))


def finite_diff_check(graph, loss, epsilon=1e-5, tolerance=1e-3, leaves=None, analytic=None):
    """Check analytic gradients of `loss` against central finite differences.

    Every entry of every checked leaf is perturbed by +/- epsilon and the tape
    replayed; the relative error |ga - gn| / max(1e-8, |ga| + |gn|) is
    recorded per entry. Entries whose first estimate lands above a quarter of
    the tolerance are re-measured with an extended-precision replay, so that
    finite-difference roundoff (which can reach u*|f|/(2*eps), comparable to
    the floor of the denominator) cannot flip the verdict either way.
    `analytic` may inject precomputed gradients (used by negative-control
    tests); by default they are computed from the tape.
    """
    if epsilon <= 0:
        raise GraphConstructionError("epsilon must be positive")
    if leaves is None:
        leaves = [n for n in graph.nodes if n.op == "leaf" and n.requires_grad]
    if analytic is None:
        analytic = gradients(graph, loss, wrt=leaves)
    report = FiniteDiffReport(epsilon=epsilon, tolerance=tolerance)
    refine_cut = tolerance / 4.0
    for leaf in leaves:
        name = leaf.name or f"leaf{leaf.idx}"
        mask = graph.downstream_mask([leaf])
        ga = analytic[leaf]
        worst = 0.0
        flat = leaf.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            graph.replay(mask=mask, check_finite=False)
            f_plus = float(loss.value)
            flat[i] = orig - epsilon
            graph.replay(mask=mask, check_finite=False)
            f_minus = float(loss.value)
            flat[i] = orig
            gn = (f_plus - f_minus) / (2.0 * epsilon)
            gai = float(ga.reshape(-1)[i])
            rel = abs(gai - gn) / max(1e-8, abs(gai) + abs(gn))
            if rel > refine_cut:
                gn = _refined_numeric(graph, loss, leaf, i, orig, epsilon, mask)
                rel = abs(gai - gn) / max(1e-8, abs(gai) + abs(gn))
            if rel > worst:
                worst = rel
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_param = name
                report.worst_index = tuple(
                    int(j) for j in np.unravel_index(i, leaf.value.shape))
        graph.replay(mask=mask, check_finite=False)
        report.per_param[name] = worst
    return report
