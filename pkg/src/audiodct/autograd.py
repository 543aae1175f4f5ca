"""Minimal reverse-mode autodiff over dense 2-D arrays.

Values are plain numpy ndarrays of shape (rows, cols). A ``Node`` wraps one
value together with an accumulated gradient and the local backward rules that
connect it to its parents. Graphs are built eagerly by the op functions below
and consumed once by :func:`backward`.

Shape discipline is strict: the only broadcasting allowed anywhere is adding
a 1-row bias to every row of a matrix. Everything else must match exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class GradientError(Exception):
    """Raised for malformed graphs or numeric blowups during backward."""


def as_array2(x, dtype=None) -> np.ndarray:
    """Coerce to a 2-D ndarray, rejecting anything that is not 2-D."""
    a = np.asarray(x, dtype=dtype)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    return a


class Node:
    """One vertex of the computation graph.

    ``value`` and ``grad`` always share a shape. Parameters are long-lived
    leaf nodes with ``requires_grad=True``; intermediate nodes are created by
    the op functions and carry ``(parent, rule)`` pairs, where ``rule`` maps
    the upstream gradient to this parent's gradient contribution.
    """

    __slots__ = ("value", "grad", "requires_grad", "upstream", "_backward_done")

    def __init__(self, value, requires_grad: bool = False, upstream=()):
        self.value = as_array2(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.upstream = tuple(upstream)
        self._backward_done = False

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if g.shape != self.value.shape:
            raise GradientError(
                f"gradient shape {g.shape} does not match value shape {self.value.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.value.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


def parameter(value, dtype=None) -> Node:
    """Leaf node holding trainable values."""
    return Node(as_array2(value, dtype=dtype), requires_grad=True)


def constant(value, dtype=None) -> Node:
    return Node(as_array2(value, dtype=dtype), requires_grad=False)


def _needs_grad(*nodes: Node) -> bool:
    return any(n.requires_grad for n in nodes)


def _make(value, parents_and_rules) -> Node:
    """Create an op output, keeping only grad-requiring parents on the tape."""
    kept = [(p, rule) for p, rule in parents_and_rules if p.requires_grad]
    if not kept:
        return Node(value)
    return Node(value, requires_grad=True, upstream=kept)


def backward(loss: Node) -> None:
    """Propagate d(loss)/d(node) into every grad-requiring ancestor.

    ``loss`` must be 1x1. Gradients accumulate additively into ``node.grad``;
    callers are responsible for zeroing parameter gradients between steps.
    A second backward through the same root is an error.
    """
    if loss.value.shape != (1, 1):
        raise GradientError(f"backward root must be 1x1, got {loss.value.shape}")
    if loss._backward_done:
        raise GradientError("backward already ran for this root; rebuild the graph")
    if not np.isfinite(loss.value).all():
        raise GradientError("non-finite loss value")
    loss._backward_done = True
    if not loss.requires_grad:
        return

    loss.accumulate(np.ones((1, 1), dtype=loss.value.dtype))
    # consumers-before-producers order, so node.grad is complete when visited
    for node in _toposort(loss):
        g = node.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise GradientError("non-finite gradient encountered during backward")
        for parent, rule in node.upstream:
            parent.accumulate(rule(g))


def _toposort(root: Node) -> list[Node]:
    """Topological order from the root via iterative DFS (graphs can be deep).

    Returns nodes so that every node appears before all of its parents
    (reverse postorder over the acyclic upstream edges).
    """
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.upstream:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    """Elementwise sum; ``b`` may be a 1-row bias added to every row of ``a``."""
    if a.shape == b.shape:
        out = a.value + b.value
        return _make(out, [(a, lambda g: g), (b, lambda g: g)])
    if b.shape == (1, a.shape[1]):
        out = a.value + b.value
        return _make(out, [(a, lambda g: g), (b, lambda g: g.sum(axis=0, keepdims=True))])
    raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")


def mul(a: Node, b: Node) -> Node:
    """Hadamard product, exact shape match only."""
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return _make(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return _make(a.value * c, [(a, lambda g: g * c)])


def add_const(a: Node, m) -> Node:
    """Add a constant matrix (no gradient to the constant); used for masks."""
    mv = as_array2(m, dtype=a.value.dtype)
    if mv.shape != a.shape:
        raise ValueError(f"add_const shape mismatch: {a.shape} vs {mv.shape}")
    return _make(a.value + mv, [(a, lambda g: g)])


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def matmul_nt(a: Node, b: Node) -> Node:
    """a @ b.T without materializing the transpose as a graph node."""
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"matmul_nt shape mismatch: {a.shape} @ {b.shape}.T")
    av, bv = a.value, b.value
    return _make(av @ bv.T, [(a, lambda g: g @ bv), (b, lambda g: g.T @ av)])


def transpose(a: Node) -> Node:
    return _make(a.value.T.copy(), [(a, lambda g: g.T)])


def sum_all(a: Node) -> Node:
    out = np.array([[a.value.sum()]], dtype=a.value.dtype)
    shape = a.shape

    def rule(g):
        return np.full(shape, g[0, 0], dtype=g.dtype)

    return _make(out, [(a, rule)])


def mean_all(a: Node) -> Node:
    n = a.value.size
    return scale(sum_all(a), 1.0 / n)


def slice_rows(a: Node, start: int, stop: int) -> Node:
    rows, _ = a.shape
    if not (0 <= start < stop <= rows):
        raise ValueError(f"bad row slice [{start}:{stop}] for {a.shape}")

    def rule(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[start:stop] = g
        return full

    return _make(a.value[start:stop].copy(), [(a, rule)])


def slice_cols(a: Node, start: int, stop: int) -> Node:
    _, cols = a.shape
    if not (0 <= start < stop <= cols):
        raise ValueError(f"bad col slice [{start}:{stop}] for {a.shape}")

    def rule(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[:, start:stop] = g
        return full

    return _make(a.value[:, start:stop].copy(), [(a, rule)])


def concat_rows(parts: list[Node]) -> Node:
    if not parts:
        raise ValueError("concat_rows needs at least one part")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ValueError("concat_rows column mismatch")
    out = np.concatenate([p.value for p in parts], axis=0)
    rules = []
    offset = 0
    for p in parts:
        lo, hi = offset, offset + p.shape[0]
        rules.append((p, lambda g, lo=lo, hi=hi: g[lo:hi]))
        offset = hi
    return _make(out, rules)


def concat_cols(parts: list[Node]) -> Node:
    if not parts:
        raise ValueError("concat_cols needs at least one part")
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ValueError("concat_cols row mismatch")
    out = np.concatenate([p.value for p in parts], axis=1)
    rules = []
    offset = 0
    for p in parts:
        lo, hi = offset, offset + p.shape[1]
        rules.append((p, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
        offset = hi
    return _make(out, rules)


def cast(a: Node, dtype) -> Node:
    """Change the value dtype; gradients are cast back on the way down."""
    dt = np.dtype(dtype)
    if a.value.dtype == dt:
        return a
    old = a.value.dtype
    return _make(a.value.astype(dt), [(a, lambda g: g.astype(old))])


def reshape(a: Node, rows: int, cols: int) -> Node:
    """Row-major reshape; element count must be preserved."""
    if rows * cols != a.value.size:
        raise ValueError(f"cannot reshape {a.shape} to ({rows}, {cols})")
    old = a.shape
    return _make(a.value.reshape(rows, cols).copy(), [(a, lambda g: g.reshape(old))])


def embed_rows(table: Node, ids) -> Node:
    """Gather rows of an embedding table by id; scatter-adds on backward."""
    idx = np.asarray(ids, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("embed_rows needs at least one id")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ValueError(f"id out of range for table with {table.shape[0]} rows")

    def rule(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return full

    return _make(table.value[idx].copy(), [(table, rule)])


def gelu_np(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu(a: Node) -> Node:
    x = a.value
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def rule(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return g * (cdf + x * pdf)

    return _make(x * cdf, [(a, rule)])


def layer_norm_np(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta


def layer_norm(a: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    """Row-wise layer normalization with learned 1-row gain and bias."""
    d = a.shape[1]
    if gamma.shape != (1, d) or beta.shape != (1, d):
        raise ValueError("layer_norm gain/bias must be 1-row vectors matching cols")
    x = a.value
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    gv = gamma.value

    def rule_x(g):
        gxhat = g * gv
        # d/dx of xhat with mean/var coupling, standard layernorm backward
        m1 = gxhat.mean(axis=1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
        return inv * (gxhat - m1 - xhat * m2)

    return _make(
        xhat * gv + beta.value,
        [
            (a, rule_x),
            (gamma, lambda g: (g * xhat).sum(axis=0, keepdims=True)),
            (beta, lambda g: g.sum(axis=0, keepdims=True)),
        ],
    )


def softmax_rows_np(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of logits/temperature with max subtraction."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = logits / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows(logits, temperature: float = 1.0):
    """Row-stochastic softmax. Accepts a Node (differentiable) or an ndarray."""
    if isinstance(logits, Node):
        p = softmax_rows_np(logits.value, temperature)

        def rule(g):
            dot = (g * p).sum(axis=1, keepdims=True)
            return (p * (g - dot)) / temperature

        return _make(p, [(logits, rule)])
    return softmax_rows_np(as_array2(logits), temperature)


def cross_entropy(logits, targets) -> Node:
    """Mean negative log-probability of ``targets`` under row logits.

    ``logits`` is (L x |V|) (Node or ndarray), ``targets`` a length-L id
    sequence. The mean over the L positions matches a per-sequence
    1/length normalization.
    """
    node = logits if isinstance(logits, Node) else constant(logits)
    ids = np.asarray(targets, dtype=np.int64).ravel()
    L, V = node.shape
    if ids.size == 0:
        raise ValueError("cross_entropy needs at least one target")
    if ids.size != L:
        raise ValueError(f"{ids.size} targets for {L} logit rows")
    if ids.min() < 0 or ids.max() >= V:
        raise ValueError(f"target id out of range for vocab size {V}")
    z = node.value
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    nll = lse - z[np.arange(L), ids]
    out = np.array([[nll.mean()]], dtype=z.dtype)

    def rule(g):
        p = softmax_rows_np(z)
        p[np.arange(L), ids] -= 1.0
        return (g[0, 0] / L) * p

    return _make(out, [(node, rule)])


def sample_categorical(probs, rng: np.random.Generator) -> int:
    """Draw one index from a probability row using the given generator."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    total = p.sum()
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {total}, not 1")
    # inverse-CDF on the generator's uniform draw keeps runs reproducible
    u = rng.random()
    c = np.cumsum(p)
    c[-1] = max(c[-1], 1.0)
    return int(np.searchsorted(c, u, side="right"))
