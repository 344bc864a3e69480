"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` records the operation that produced it; calling ``backward()`` on a
scalar loss walks the recorded graph in reverse topological order and
accumulates gradients into every reachable ``Tensor`` with ``requires_grad``.
The op set is deliberately small: exactly what the networks in this package
need (dense algebra, 1D convolution, pooling, gating nonlinearities, dropout,
and a fused weighted softmax cross-entropy).

Everything is computed in float64 so that central finite-difference checks
resolve to ~1e-7 relative error or better.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

_FFT_WORKERS = 2


class Tensor:
    """A node in the autodiff graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(g, self.data.shape))
        else:
            self.grad += g

    # -- backward pass -----------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be a scalar produced by recorded operations; calling this
        on a leaf with no recorded computation is a state error.
        """
        if self._backward is None:
            raise RuntimeError("backward() called before any recorded forward computation")
        if self.data.size != 1:
            raise RuntimeError(f"backward() requires a scalar loss, got shape {self.data.shape}")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:  # iterative DFS: BPTT graphs exceed the recursion limit
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __pow__(self, p):
        return power(self, p)

    def __truediv__(self, s):
        if isinstance(s, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, as_tensor(1.0 / float(s)))

    def __getitem__(self, idx):
        return getitem(self, idx)


class Parameter(Tensor):
    """A named trainable leaf tensor."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` over axes that were broadcast up from ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and linear algebra
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._result(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return Tensor._result(-a.data, (a,), backward)


def power(a: Tensor, p: float) -> Tensor:
    data = a.data ** p

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return Tensor._result(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2D operands")
    data = a.data @ b.data

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor._result(data, (a, b), backward)


def tsum(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(np.full_like(a.data, float(g)))

    return Tensor._result(a.data.sum(), (a,), backward)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a._accumulate(np.full_like(a.data, float(g) / n))

    return Tensor._result(a.data.mean(), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return Tensor._result(a.data.reshape(shape), (a,), backward)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice/integer) indexing; gradients scatter back into place."""
    data = a.data[idx]

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[idx] += g
        a._accumulate(buf)

    return Tensor._result(data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + n)
            t._accumulate(g[tuple(sl)])
            offset += n

    return Tensor._result(data, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return Tensor._result(a.data * mask, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # exp overflow saturates cleanly to 0 or 1
        s = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return Tensor._result(s, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    return Tensor._result(t, (a,), backward)


# ---------------------------------------------------------------------------
# 1D convolution (cross-correlation, CNN convention)
# ---------------------------------------------------------------------------


def conv1d(x: Tensor, k: Tensor, mode: str = "valid") -> Tensor:
    """Batched 1D convolution with kernels in FIR delay order.

    ``x`` has shape (B, C_in, L), ``k`` has shape (C_out, C_in, K). Kernel
    index i multiplies the input sample i steps behind the window's leading
    edge, so in ``valid`` mode

        out[t] = sum_i k[i] * x[t + K - 1 - i],   t in [0, L - K]

    and ``same`` mode (K odd) centers the window and zero-pads:

        out[n] = sum_i k[i] * x[n + (K-1)/2 - i].

    With a single channel this is exactly an FIR filter advanced by half the
    kernel length; causal filtering is the same output delayed by (K-1)/2.
    """
    from .errors import ShapeError

    if x.data.ndim != 3 or k.data.ndim != 3:
        raise ShapeError("conv1d expects x:(B,C_in,L) and k:(C_out,C_in,K)")
    B, cin, L = x.data.shape
    cout, cin_k, K = k.data.shape
    if cin != cin_k:
        raise ShapeError(f"channel mismatch: input {cin}, kernel {cin_k}")
    if K > L:
        raise ShapeError(f"kernel length {K} exceeds input length {L}")
    if mode not in ("valid", "same"):
        raise ValueError(f"unknown padding mode {mode!r}")
    if mode == "same" and K % 2 == 0:
        raise ShapeError("same-mode convolution requires an odd kernel length")

    pad = (K - 1) // 2 if mode == "same" else 0
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    Lx = xp.shape[2]
    T = Lx - K + 1

    # FFT convolution: batched transforms beat per-tap GEMMs by a wide margin
    # for the kernel lengths used here, and float64 keeps roundoff near 1e-14.
    F = next_fast_len(Lx + K - 1)
    X = rfft(xp, n=F, axis=-1, workers=_FFT_WORKERS)
    KF = rfft(k.data, n=F, axis=-1, workers=_FFT_WORKERS)

    if cin == 1:
        prod = X * KF.transpose(1, 0, 2)  # (B,1,F) x (1,O,F)
    else:
        prod = np.einsum("bcf,ocf->bof", X, KF)
    full = irfft(prod, n=F, axis=-1, workers=_FFT_WORKERS)
    data = full[:, :, K - 1: K - 1 + T].copy()

    def backward(g):
        G = rfft(g, n=F, axis=-1, workers=_FFT_WORKERS)
        # d/dkf[o,c,j] = sum_{b,t} g[b,o,t] xp[b,c,t+j]: a correlation, so conj
        corr = irfft(np.einsum("bcf,bof->ocf", X, np.conj(G)), n=F, axis=-1,
                     workers=_FFT_WORKERS)
        k._accumulate(corr[:, :, K - 1:: -1])
        # d/dxp[b,c,s] = sum_{o,j} k[o,c,j] g[b,o,s+j-(K-1)]: full convolution
        # of the upstream gradient with the time-reversed kernel
        KREV = rfft(k.data[:, :, ::-1], n=F, axis=-1, workers=_FFT_WORKERS)
        if cout == 1:
            dprod = G * KREV[0][None, :, :]  # (B,1,F) x (1,C,F)
        else:
            dprod = np.einsum("bof,ocf->bcf", G, KREV)
        dxp = irfft(dprod, n=F, axis=-1, workers=_FFT_WORKERS)[:, :, :Lx]
        x._accumulate(dxp[:, :, pad:pad + L] if pad else dxp)

    return Tensor._result(data, (x, k), backward)


def maxpool2(x: Tensor) -> Tensor:
    """Width-2, stride-2 max pooling over the last axis; odd tails are dropped.

    Ties route the gradient to the first (lower-index) element of the pair.
    """
    B, C, L = x.data.shape
    L2 = (L // 2) * 2
    a = x.data[:, :, 0:L2:2]
    b = x.data[:, :, 1:L2:2]
    take_first = a >= b
    data = np.where(take_first, a, b)

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[:, :, 0:L2:2] += g * take_first
        buf[:, :, 1:L2:2] += g * ~take_first
        x._accumulate(buf)

    return Tensor._result(data, (x,), backward)


# ---------------------------------------------------------------------------
# Regularization and losses
# ---------------------------------------------------------------------------


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity at inference time or at p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    scale = (rng.random(x.data.shape) >= p) / (1.0 - p)

    def backward(g):
        x._accumulate(g * scale)

    return Tensor._result(x.data * scale, (x,), backward)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain-numpy softmax for inference paths (no gradient)."""
    z = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray,
                          class_weights: np.ndarray | None = None) -> Tensor:
    """Mean weighted cross-entropy over a batch of logits.

    ``logits`` is (B, K), ``labels`` is (B,) integer class indices, and
    ``class_weights`` (K,) scales each example's loss by the weight of its true
    class. Uniform weights reduce exactly to the plain mean cross-entropy.
    """
    labels = np.asarray(labels)
    B, K = logits.data.shape
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {B}")
    w = np.ones(K) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (K,):
        raise ValueError(f"class_weights must have shape ({K},)")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    wy = w[labels]
    data = -(wy * logp[np.arange(B), labels]).mean()

    def backward(g):
        p = np.exp(logp)
        d = p.copy()
        d[np.arange(B), labels] -= 1.0
        logits._accumulate(float(g) * d * (wy / B)[:, None])

    return Tensor._result(data, (logits,), backward)
