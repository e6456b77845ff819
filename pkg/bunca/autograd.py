"""Dense matrix tensors with reverse-mode gradient accumulation.

Every value is a 2-D ``numpy`` array. Operations build a graph of
:class:`Tensor` nodes, each holding a closure that maps the upstream gradient to
gradients of its parents. :func:`grad` walks the graph once in reverse
topological order and accumulates into the ``grad`` slot of leaf tensors that
require gradients. Gradients never flow into sparse graph weights: sparse
operands are structural constants.
"""

from collections import OrderedDict
from typing import Callable, Dict, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from bunca import BuncaError
from bunca.enums import COSINE_EPS, LEAKY_SLOPE
from bunca.graph import NormalizedAdjacency, SparseBinaryMatrix, row_normalize, spmv_block


class ShapeError(BuncaError):
    """Raised when operand shapes are incompatible."""


class NumericalError(BuncaError):
    """Raised when a forward value stops being finite."""


Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def _as_matrix(values) -> np.ndarray:
    values = np.asarray(values)
    if not np.issubdtype(values.dtype, np.floating):
        values = values.astype(np.float64)
    if values.ndim == 0:
        values = values.reshape(1, 1)
    elif values.ndim == 1:
        values = values.reshape(-1, 1)
    elif values.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got {values.ndim} dimensions")
    return values


class Tensor:
    """A dense matrix, optionally tracked for gradients."""

    __slots__ = ("values", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = _as_matrix(values)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Backward] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a scalar tensor, got {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=like.dtype))


def _node(values: np.ndarray, parents: Sequence[Tensor], backward: Backward, op: str) -> Tensor:
    values = _as_matrix(values)
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor(values)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return _node(a.values + b.values, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _node(a.values - b.values, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    av, bv = a.values, b.values
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.values * c, (a,), lambda g: (g * c,), "scale")


def add_row(a: Tensor, bias: Tensor) -> Tensor:
    """Add a (1, cols) row to every row of ``a``."""
    if bias.shape != (1, a.shape[1]):
        raise ShapeError(f"add_row: bias {bias.shape} does not fit {a.shape}")
    return _node(
        a.values + bias.values,
        (a, bias),
        lambda g: (g, g.sum(axis=0, keepdims=True)),
        "add_row",
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    av = a.values
    return _node(np.log(av), (a,), lambda g: (g / av,), "log")


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    """x for x >= 0, ``slope * x`` otherwise."""
    factor = np.where(a.values >= 0, 1.0, slope).astype(a.dtype)
    return _node(a.values * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    av = a.values
    sig = np.exp(-np.logaddexp(0.0, -av))
    return _node(np.logaddexp(0.0, av), (a,), lambda g: (g * sig,), "softplus")


# shape manipulation


def transpose(a: Tensor) -> Tensor:
    return _node(a.values.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat_cols(*tensors: Tensor) -> Tensor:
    """Concatenate along the feature axis."""
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(np.hstack([t.values for t in tensors]), tensors, backward, "concat_cols")


def stack_rows(*tensors: Tensor) -> Tensor:
    """Stack entity blocks on top of each other."""
    cols = {t.shape[1] for t in tensors}
    if len(cols) != 1:
        raise ShapeError(f"stack_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(np.vstack([t.values for t in tensors]), tensors, backward, "stack_rows")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    n = a.shape[0]

    def backward(g):
        out = np.zeros_like(a.values)
        out[start:stop] = g
        return (out,)

    if not 0 <= start <= stop <= n:
        raise ShapeError(f"slice_rows: [{start}, {stop}) outside {n} rows")
    return _node(a.values[start:stop].copy(), (a,), backward, "slice_rows")


def gather_rows(a: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if len(index) and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index outside {a.shape[0]} rows")

    def backward(g):
        out = np.zeros_like(a.values)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.values[index], (a,), backward, "gather_rows")


def diagonal(a: Tensor) -> Tensor:
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"diagonal: {a.shape} is not square")

    def backward(g):
        return (np.diag(g[:, 0]).astype(a.dtype),)

    return _node(np.diag(a.values).reshape(-1, 1).copy(), (a,), backward, "diagonal")


# products


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


SparseOperand = Union[NormalizedAdjacency, sp.spmatrix]


def spmm(adj: SparseOperand, x: Tensor) -> Tensor:
    """Sparse constant times dense tensor; only ``x`` receives a gradient."""
    if isinstance(adj, NormalizedAdjacency):
        matrix = adj.matrix
        out = spmv_block(adj, x.values)
    else:
        matrix = sp.csr_matrix(adj)
        if matrix.shape[1] != x.shape[0]:
            raise ShapeError(f"spmm: {matrix.shape} @ {x.shape}")
        out = np.asarray(matrix @ x.values)
    transposed = matrix.T.tocsr()
    dtype = x.dtype
    return _node(
        out.astype(dtype, copy=False),
        (x,),
        lambda g: (np.asarray(transposed @ g).astype(dtype, copy=False),),
        "spmm",
    )


def mean_pool(incidence: SparseBinaryMatrix, x: Tensor) -> Tensor:
    """Row r becomes the mean of ``x`` over r's stored columns; empty rows are zero."""
    if incidence.n_cols != x.shape[0]:
        raise ShapeError(f"mean_pool: {incidence.shape} over {x.shape[0]} rows")
    return spmm(row_normalize(incidence), x)


def edge_spmm(weights: Tensor, pattern: SparseBinaryMatrix, x: Tensor) -> Tensor:
    """Sparse matrix with learned values on ``pattern`` times dense ``x``.

    ``weights`` is (nnz, 1) aligned with the pattern's CSR entries; both operands
    receive gradients.
    """
    if weights.shape != (pattern.nnz, 1):
        raise ShapeError(f"edge_spmm: weights {weights.shape}, pattern nnz {pattern.nnz}")
    if pattern.n_cols != x.shape[0]:
        raise ShapeError(f"edge_spmm: {pattern.shape} @ {x.shape}")
    rows, cols = pattern.pairs()
    w = weights.values[:, 0]
    matrix = sp.csr_matrix(
        (w, pattern.col_indices, pattern.row_offsets), shape=pattern.shape
    )
    xv = x.values

    def backward(g):
        gw = np.einsum("ij,ij->i", g[rows], xv[cols]).reshape(-1, 1)
        gx = np.asarray(matrix.T @ g)
        return gw.astype(weights.dtype, copy=False), gx.astype(x.dtype, copy=False)

    out = np.asarray(matrix @ xv).astype(x.dtype, copy=False)
    return _node(out, (weights, x), backward, "edge_spmm")


def edge_softmax(
    scores: Tensor, pattern: SparseBinaryMatrix, eps: float
) -> Tensor:
    """Masked row normalization of ``exp(scores)`` over the pattern's rows.

    Entry e in row i becomes ``exp(s_e - m_i) / max(sum_row exp(s - m_i), eps)``
    with m_i the row maximum. The shifted sum is at least 1 on any row with a
    stored entry, so every such row sums to 1 however small its scores are; rows
    with no stored entry produce nothing and are zero in any dense view.
    """
    if scores.shape != (pattern.nnz, 1):
        raise ShapeError(f"edge_softmax: scores {scores.shape}, pattern nnz {pattern.nnz}")
    if eps <= 0:
        raise ShapeError(f"edge_softmax: eps must be positive, got {eps}")
    n = pattern.n_rows
    rows = pattern.row_ids()
    s = scores.values[:, 0]
    peak = np.full(n, -np.inf)
    np.maximum.at(peak, rows, s)
    peak[~np.isfinite(peak)] = 0.0
    e = np.exp(s - peak[rows])
    denom = np.bincount(rows, weights=e, minlength=n)
    w = e / np.maximum(denom, eps)[rows]

    def backward(g):
        g = g[:, 0]
        dot = np.bincount(rows, weights=w * g, minlength=n)
        return ((w * (g - dot[rows])).reshape(-1, 1).astype(scores.dtype, copy=False),)

    return _node(w.reshape(-1, 1).astype(scores.dtype), (scores,), backward, "edge_softmax")


# similarity


def normalize_rows(a: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Divide each row by its Euclidean norm clamped below at ``eps``."""
    av = a.values
    norm = np.sqrt(np.einsum("ij,ij->i", av, av)).reshape(-1, 1)
    clamped = norm < eps
    denom = np.maximum(norm, eps)
    out = av / denom

    def backward(g):
        proj = np.einsum("ij,ij->i", g, out).reshape(-1, 1)
        free = (g - out * proj) / denom
        return (np.where(clamped, g / denom, free),)

    return _node(out, (a,), backward, "normalize_rows")


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of matching rows, as a column."""
    _check_same("row_dot", a, b)
    av, bv = a.values, b.values
    out = np.einsum("ij,ij->i", av, bv).reshape(-1, 1)
    return _node(out, (a, b), lambda g: (g * bv, g * av), "row_dot")


def cosine_rows(a: Tensor, b: Tensor, eps: float = COSINE_EPS) -> Tensor:
    return row_dot(normalize_rows(a, eps), normalize_rows(b, eps))


def cosine_matrix(a: Tensor, b: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """All-pairs cosine similarity between rows of ``a`` and rows of ``b``."""
    return matmul(normalize_rows(a, eps), transpose(normalize_rows(b, eps)))


# reductions


def total(a: Tensor) -> Tensor:
    return _node(
        a.values.sum().reshape(1, 1),
        (a,),
        lambda g: (np.full(a.shape, g[0, 0], dtype=a.dtype),),
        "sum",
    )


def mean(a: Tensor) -> Tensor:
    size = a.values.size
    return _node(
        a.values.mean().reshape(1, 1),
        (a,),
        lambda g: (np.full(a.shape, g[0, 0] / size, dtype=a.dtype),),
        "mean",
    )


def sq_norm(a: Tensor) -> Tensor:
    av = a.values
    return _node(
        np.sum(av * av).reshape(1, 1), (a,), lambda g: (2.0 * g[0, 0] * av,), "sq_norm"
    )


def logsumexp_rows(a: Tensor) -> Tensor:
    av = a.values
    peak = av.max(axis=1, keepdims=True)
    shifted = np.exp(av - peak)
    total_ = shifted.sum(axis=1, keepdims=True)
    soft = shifted / total_
    return _node(peak + np.log(total_), (a,), lambda g: (g * soft,), "logsumexp_rows")


# parameters and backward pass


class ParameterSet:
    """Named trainable tensors, each registered exactly once."""

    def __init__(self):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"parameter {name!r} already registered")
        if any(t is tensor for t in self._tensors.values()):
            raise KeyError(f"tensor for {name!r} is registered under another name")
        tensor.requires_grad = True
        tensor.name = name
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._tensors.values())

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def size(self) -> int:
        """Total number of scalar entries."""
        return sum(t.values.size for t in self)

    def zero_grad(self):
        for t in self:
            t.zero_grad()

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.items()}

    def restore(self, values: Dict[str, np.ndarray]):
        for name, t in self.items():
            t.values = np.array(values[name], dtype=t.dtype, copy=True)


def _topological(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def grad(loss: Tensor, params: Optional[ParameterSet] = None) -> Dict[str, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Calling it twice without :meth:`ParameterSet.zero_grad` adds the gradients
    up. Returns the gradient of every parameter in ``params``; parameters the
    loss does not depend on get zeros.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be a scalar tensor, got {loss.shape}")
    upstream = {id(loss): np.ones((1, 1), dtype=loss.dtype)}
    for node in reversed(_topological(loss)):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            upstream[key] = pg if key not in upstream else upstream[key] + pg

    if params is None:
        return {}
    out = {}
    for name, t in params.items():
        if t.grad is None:
            t.grad = np.zeros_like(t.values)
        out[name] = t.grad
    return out
