"""Dense float64 tensors with reverse-mode automatic differentiation.

Each operation records its parents and a vector-Jacobian closure on the
output tensor; ``backward`` on a scalar loss replays the recorded tape in
reverse topological order and accumulates gradients additively.  Shapes are
always explicit: there is no broadcasting, operands must match exactly.

Reductions over graph-node axes (masked softmax normalisation, attention
mixing) sum their operands in value-sorted order.  Sorting makes the operand
sequence a function of the operand *multiset*, so results are bit-identical
under any permutation of the node indexing.
"""

import numpy as np

from .errors import NumericError


def _sorted_sum(a: np.ndarray, axis: int) -> np.ndarray:
    # Value-sorted summation: bitwise reproducible under operand permutation.
    return np.sort(a, axis=axis).sum(axis=axis)


class Tensor:
    """A dense float64 array participating in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._vjp = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data, parents, vjp) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    def backward(self):
        """Fill ``grad`` of every requires_grad tensor reachable from this scalar."""
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        tape = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad or pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        _check_same_shape("add", self, other)
        return Tensor._result(self.data + other.data, (self, other),
                              lambda g: (g, g))

    def __sub__(self, other: "Tensor") -> "Tensor":
        _check_same_shape("sub", self, other)
        return Tensor._result(self.data - other.data, (self, other),
                              lambda g: (g, -g))

    def __mul__(self, other: "Tensor") -> "Tensor":
        _check_same_shape("mul", self, other)
        a, b = self.data, other.data
        return Tensor._result(a * b, (self, other),
                              lambda g: (g * b, g * a))

    def scale(self, c: float) -> "Tensor":
        c = float(c)
        return Tensor._result(self.data * c, (self,), lambda g: (g * c,))

    def shift(self, c: float) -> "Tensor":
        c = float(c)
        return Tensor._result(self.data + c, (self,), lambda g: (g,))

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        if self.shape[1] != other.shape[0]:
            raise ValueError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        a, b = self.data, other.data
        return Tensor._result(a @ b, (self, other),
                              lambda g: (g @ b.T, a.T @ g))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return self.matmul(other)

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ValueError("transpose expects a 2-D tensor")
        return Tensor._result(self.data.T, (self,), lambda g: (g.T,))

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)
        return Tensor._result(out_data, (self,), lambda g: (g * out_data,))

    def log(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise ValueError("log requires strictly positive inputs")
        x = self.data
        return Tensor._result(np.log(x), (self,), lambda g: (g / x,))

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        x = self.data
        factor = np.where(x > 0.0, 1.0, slope)
        return Tensor._result(x * factor, (self,), lambda g: (g * factor,))

    def elu(self) -> "Tensor":
        x = self.data
        out_data = np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))
        factor = np.where(x > 0.0, 1.0, out_data + 1.0)
        return Tensor._result(out_data, (self,), lambda g: (g * factor,))

    def sigmoid(self) -> "Tensor":
        s = _stable_sigmoid(self.data)
        return Tensor._result(s, (self,), lambda g: (g * s * (1.0 - s),))

    def clip(self, lo: float, hi: float) -> "Tensor":
        x = self.data
        inside = ((x >= lo) & (x <= hi)).astype(np.float64)
        return Tensor._result(np.clip(x, lo, hi), (self,),
                              lambda g: (g * inside,))

    # -- reductions ------------------------------------------------------------

    def sum(self, axis: int | None = None) -> "Tensor":
        x = self.data
        if axis is None:
            return Tensor._result(np.sum(x), (self,),
                                  lambda g: (np.full_like(x, float(g)),))
        out_data = np.sum(x, axis=axis)
        return Tensor._result(out_data, (self,),
                              lambda g: (np.repeat(np.expand_dims(g, axis), x.shape[axis], axis=axis),))

    def mean(self, axis: int | None = None) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis).scale(1.0 / n)

    def max_pool(self, axis: int, keepdims: bool = False) -> "Tensor":
        """Max along ``axis``; gradient flows only to the argmax positions."""
        x = self.data
        if x.ndim == 0:
            raise ValueError("max_pool needs at least one axis")
        idx = np.argmax(x, axis=axis)
        out_data = np.max(x, axis=axis, keepdims=keepdims)

        def vjp(g):
            gx = np.zeros_like(x)
            gk = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(gx, np.expand_dims(idx, axis), gk, axis=axis)
            return (gx,)

        return Tensor._result(out_data, (self,), vjp)

    def slice_rows(self, start: int, stop: int) -> "Tensor":
        x = self.data

        def vjp(g):
            gx = np.zeros_like(x)
            gx[start:stop] = g
            return (gx,)

        return Tensor._result(x[start:stop].copy(), (self,), vjp)


def _toposort(root: Tensor) -> list:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ValueError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- multi-input primitives ------------------------------------------------


def concat(tensors: list, axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(np.concatenate(datas, axis=axis), tuple(tensors), vjp)


def softmax(x: Tensor, axis: int = 1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis`` of a 2-D tensor, optionally masked.

    Masked entries get probability exactly 0 and receive zero gradient.  The
    normaliser is a value-sorted sum, so rows are reproducible under operand
    permutation.  A row with no unmasked entry is an error.
    """
    if x.data.ndim != 2:
        raise ValueError("softmax expects a 2-D tensor")
    if axis not in (0, 1, -1):
        raise ValueError(f"bad softmax axis {axis}")
    if axis == 0:
        inner = softmax(x.transpose(), axis=1, mask=None if mask is None else mask.T)
        return inner.transpose()

    data = x.data
    if mask is None:
        mask = np.ones(data.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != data.shape:
            raise ValueError(f"mask shape {mask.shape} != tensor shape {data.shape}")
        if not mask.any(axis=1).all():
            raise ValueError("softmax row is fully masked")

    neg_inf = np.where(mask, data, -np.inf)
    row_max = neg_inf.max(axis=1, keepdims=True)
    e = np.exp(neg_inf - row_max)  # exp(-inf) == 0 exactly at masked entries
    denom = _sorted_sum(e, axis=1)[:, None]
    p = e / denom

    def vjp(g):
        inner = np.sum(g * p, axis=1, keepdims=True)
        return (p * (g - inner),)

    return Tensor._result(p, (x,), vjp)


def mix_rows(weights: Tensor, values: Tensor) -> Tensor:
    """Row-stochastic mixing ``weights @ values`` with permutation-stable sums.

    weights: (N, M); values: (M, F).  Each output entry sums its M products in
    value-sorted order, so the forward pass is bit-identical under a shared
    permutation of the M axis.  Gradients use plain matrix products.
    """
    if weights.data.ndim != 2 or values.data.ndim != 2:
        raise ValueError("mix_rows expects 2-D operands")
    if weights.shape[1] != values.shape[0]:
        raise ValueError(f"mix_rows shape mismatch: {weights.shape} x {values.shape}")
    w, v = weights.data, values.data
    products = w[:, None, :] * v.T[None, :, :]  # (N, F, M)
    out_data = _sorted_sum(products, axis=2)

    def vjp(g):
        return (g @ v.T, w.T @ g)

    return Tensor._result(out_data, (weights, values), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            train: bool) -> Tensor:
    """Inverted dropout: identity at eval time or rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return Tensor._result(x.data, (x,), lambda g: (g,))
    if rng is None:
        raise ValueError("training-mode dropout needs a generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._result(x.data * keep, (x,), lambda g: (g * keep,))


def gather_rows(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    data = x.data

    def vjp(g):
        gx = np.zeros_like(data)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor._result(data[idx], (x,), vjp)


def scatter_add_rows(x: Tensor, indices, n_rows: int) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape[0] != x.shape[0]:
        raise ValueError("scatter_add_rows needs one index per input row")
    out_data = np.zeros((n_rows,) + x.shape[1:], dtype=np.float64)
    np.add.at(out_data, idx, x.data)
    return Tensor._result(out_data, (x,), lambda g: (g[idx],))


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from raw logits, stable for any magnitude."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValueError(f"targets shape {y.shape} != logits shape {logits.shape}")
    z = logits.data
    loss = np.mean(np.logaddexp(0.0, z) - z * y)
    n = z.size

    def vjp(g):
        return (float(g) * (_stable_sigmoid(z) - y) / n,)

    return Tensor._result(loss, (logits,), vjp)


# -- optimiser ----------------------------------------------------------------


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected update; returns new (param, m, v). ``t`` counts from 1."""
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in optimiser step")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over a fixed list of parameter tensors, reading their ``.grad``."""

    def __init__(self, params: list, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grad_scale: float = 1.0):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data, self.m[i], self.v[i] = adam_step(
                p.data, g * grad_scale, self.m[i], self.v[i], self.t,
                self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
