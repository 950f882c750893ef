"""Dense reverse-mode autodiff over numpy arrays.

Only the primitives the encoder, projection head, losses and linear probes
need. Every op records a closure computing the adjoints of its inputs;
``Tensor.backward`` walks the graph once in reverse topological order and
then drops the closures so saved activations are released.
"""

from __future__ import annotations

import contextlib

import numpy as np

CHECK_FINITE = True
_grad_enabled = True


class ShapeError(ValueError):
    pass


class NumericDomainError(ArithmeticError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, c: float) -> "Tensor":
        return scale(self, c)

    __rmul__ = __mul__

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                k = id(parent)
                grads[k] = pg if k not in grads else grads[k] + pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()


def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a tensor op")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) for a constant weight array; reduces any op to a scalar."""
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {w.shape} vs input {x.shape}")
    return _result(np.asarray(np.sum(x.data * w)), (x,), lambda g: (g * w,))


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),))


def mask_diagonal(x: Tensor, value: float = -1e9) -> Tensor:
    """Replace the diagonal of a square matrix by a constant; no gradient flows there."""
    n = x.shape[0]
    if x.data.ndim != 2 or x.shape[1] != n:
        raise ShapeError("mask_diagonal needs a square matrix")
    out = x.data.copy()
    np.fill_diagonal(out, value)

    def backward(g):
        g = g.copy()
        np.fill_diagonal(g, 0)
        return (g,)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------- layers

def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b with x (batch, n), w (m, n), b (m,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"affine: input {x.shape}, weight {w.shape}, bias {b.shape}")
    xd, wd = x.data, w.data

    def backward(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return _result(xd @ wd.T + b.data, (x, w, b), backward)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ShapeError(f"conv2d: size {size}, kernel {kernel}, stride {stride}, padding {padding} "
                         "gives a non-integral output")
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (B, C, H, W) with w (Co, C, K, K) plus bias (Co,)."""
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} vs kernels {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {b.shape} for {w.shape[0]} output channels")
    bsz, c, h, wd = x.shape
    co, _, k, _ = w.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    # columns laid out (B, C*K*K, Ho*Wo) so the product lands directly in NCHW order
    cols = np.empty((bsz, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(bsz, c * k * k, ho * wo)
    wmat = w.data.reshape(co, -1)
    out = (wmat @ cols).reshape(bsz, co, ho, wo) + b.data[None, :, None, None]

    def backward(g):
        gm = g.reshape(bsz, co, ho * wo)
        gw = np.einsum("bop,bqp->oq", gm, cols, optimize=True).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3))
        if not x.requires_grad:
            return None, gw, gb
        gcols = (wmat.T @ gm).reshape(bsz, c, k, k, ho, wo)
        gxp = np.zeros((bsz, c, hp, wp), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding:hp - padding, padding:wp - padding] if padding else gxp
        return gx, gw, gb

    return _result(out, (x, w, b), backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element in row-major window order."""
    if x.data.ndim != 4:
        raise ShapeError("maxpool2 expects (B, C, H, W)")
    bsz, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    xd = x.data
    # window entries in row-major order: (0,0), (0,1), (1,0), (1,1)
    quads = np.stack([xd[:, :, 0::2, 0::2], xd[:, :, 0::2, 1::2], xd[:, :, 1::2, 0::2], xd[:, :, 1::2, 1::2]])
    idx = quads.argmax(axis=0)
    out = quads.max(axis=0)

    def backward(g):
        gx = np.zeros((bsz, c, h, w), dtype=g.dtype)
        for q, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            gx[:, :, di::2, dj::2] = np.where(idx == q, g, 0)
        return (gx,)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------- similarity and losses

def cosine_similarity_matrix(z: Tensor) -> Tensor:
    """S[i, j] = <z_i, z_j> / (|z_i| |z_j|) for rows of z (n, d)."""
    zd = z.data
    norms = np.linalg.norm(zd, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericDomainError("cosine similarity of a zero-norm row")
    u = zd / norms
    s = u @ u.T

    def backward(g):
        gu = (g + g.T) @ u
        return ((gu - u * np.sum(gu * u, axis=1, keepdims=True)) / norms,)

    return _result(s, (z,), backward)


def _check_one_hot(targets: np.ndarray, shape) -> None:
    if targets.shape != shape:
        raise ValueError(f"targets {targets.shape} do not match logits {shape}")
    if not np.all((targets == 0) | (targets == 1)) or not np.all(targets.sum(axis=1) == 1):
        raise ValueError("targets must be one-hot rows")


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target] for one-hot targets."""
    t = np.asarray(targets, dtype=logits.dtype)
    _check_one_hot(t, logits.shape)
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    se = e.sum(axis=1, keepdims=True)
    lse = m + np.log(se)
    n = x.shape[0]
    loss = np.sum(lse[:, 0] - np.sum(t * x, axis=1)) / n
    p = e / se
    return _result(np.asarray(loss, dtype=x.dtype), (logits,), lambda g: (g * (p - t) / n,))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean element-wise binary cross-entropy of sigmoid(logits) against {0, 1} targets."""
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"targets {t.shape} do not match logits {logits.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("binary cross-entropy targets must be 0 or 1")
    x = logits.data
    loss = np.mean(np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x))))
    resid = sigmoid(x) - t
    n = x.size
    return _result(np.asarray(loss, dtype=x.dtype), (logits,), lambda g: (g * resid / n,))


def sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
