"""Minimal reverse-mode automatic differentiation on numpy arrays.

The engine records a DAG of array operations and evaluates gradients by
walking the graph in reverse topological order, accumulating adjoints into
``Tensor.grad``. It implements exactly the operations the imaging pipeline
needs (elementwise arithmetic with broadcasting, matmul, 2-D convolution,
FFT-based image formation, window gathers) rather than a general framework.

Conventions:
  * dtype follows the input arrays (float32 for training, float64 for
    gradient checks); no silent upcasting.
  * backward closures are only attached when some parent requires grad, so
    inference-time calls carry no graph overhead.
  * ``backward()`` is defined for scalar outputs only.
"""

from __future__ import annotations

import numpy as np
from numpy.fft import irfft2, rfft2

from .errors import ContractError


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in (np.float32, np.float64):
        return arr.astype(np.float32)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward, op):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.op = op
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op}, grad={self.requires_grad})"

    # -- autodiff driver -----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss tensor")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor with requires_grad=False")

        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._result(out_data, (self, other), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._result(-self.data, (self,), backward, "neg")

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data - other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._result(out_data, (self, other), backward, "sub")

    def __rsub__(self, other):
        return _wrap(other, self.dtype) - self

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._result(out_data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.shape)
                )

        return Tensor._result(out_data, (self, other), backward, "div")

    def __rtruediv__(self, other):
        return _wrap(other, self.dtype) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ContractError("pow supports scalar exponents only")
        out_data = self.data**exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._result(out_data, (self,), backward, "pow")

    def __matmul__(self, other):
        other = _wrap(other, self.dtype)
        if self.ndim != 2 or other.ndim != 2:
            raise ContractError("matmul is defined for 2-D tensors")
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor._result(out_data, (self, other), backward, "matmul")

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._result(out_data, (self,), backward, "exp")

    def log(self):
        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._result(np.log(self.data), (self,), backward, "log")

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g):
            self._accumulate(g * 0.5 / out_data)

        return Tensor._result(out_data, (self,), backward, "sqrt")

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._result(out_data, (self,), backward, "sigmoid")

    def relu(self):
        mask = self.data > 0
        out_data = np.where(mask, self.data, 0.0).astype(self.dtype, copy=False)

        def backward(g):
            self._accumulate(g * mask)

        return Tensor._result(out_data, (self,), backward, "relu")

    def abs(self):
        sign = np.sign(self.data)

        def backward(g):
            self._accumulate(g * sign)

        return Tensor._result(np.abs(self.data), (self,), backward, "abs")

    def clip(self, lo, hi):
        """Clamp values; gradient is passed only through the unclipped region."""
        inside = (self.data > lo) & (self.data < hi)
        out_data = np.clip(self.data, lo, hi)

        def backward(g):
            self._accumulate(g * inside)

        return Tensor._result(out_data, (self,), backward, "clip")

    # -- reductions & shape ops ------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        return Tensor._result(np.asarray(out_data), (self,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accumulate(g.reshape(self.shape))

        return Tensor._result(out_data, (self,), backward, "reshape")

    def transpose(self, axes):
        inverse = np.argsort(axes)

        def backward(g):
            self._accumulate(g.transpose(inverse))

        return Tensor._result(self.data.transpose(axes), (self,), backward, "transpose")

    def __getitem__(self, index):
        out_data = self.data[index]

        def backward(g):
            full = np.zeros_like(self.data)
            full[index] = g
            self._accumulate(full)

        return Tensor._result(np.ascontiguousarray(out_data), (self,), backward, "slice")

    def pad2d(self, pad):
        """Zero-pad the last two axes by (top, bottom, left, right)."""
        top, bottom, left, right = pad
        width = [(0, 0)] * (self.ndim - 2) + [(top, bottom), (left, right)]
        out_data = np.pad(self.data, width)
        sl = (Ellipsis, slice(top, top + self.shape[-2]), slice(left, left + self.shape[-1]))

        def backward(g):
            self._accumulate(g[sl])

        return Tensor._result(out_data, (self,), backward, "pad2d")


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


# -- structured operations ------------------------------------------------------


def gather_rows(t: Tensor, index) -> Tensor:
    """Select rows ``t[index]``; the adjoint scatter-adds duplicates."""
    index = np.asarray(index, dtype=np.intp)
    out_data = t.data[index]

    def backward(g):
        full = np.zeros_like(t.data)
        np.add.at(full, index, g)
        t._accumulate(full)

    return Tensor._result(out_data, (t,), backward, "gather_rows")


def concat_rows(tensors) -> Tensor:
    """Stack 1-D/2-D tensors along axis 0."""
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(g[lo:hi])

    return Tensor._result(out_data, tuple(tensors), backward, "concat_rows")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D convolution (cross-correlation) on NCHW input with OIHW weights."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ContractError(f"conv2d channel mismatch: input {c}, weight {ci}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1

    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # N,C,Ho,Wo,kh,kw
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out_data = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    out_data = np.ascontiguousarray(out_data, dtype=x.dtype)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        if b is not None and b.requires_grad:
            b._accumulate(gmat.sum(axis=0))
        if w.requires_grad:
            w._accumulate((gmat.T @ cols).reshape(w.shape))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
            x._accumulate(dxp)

    return Tensor._result(out_data, parents, backward, "conv2d")


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling (spatial dims must divide by k)."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ContractError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    out_data = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        expanded = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        x._accumulate(expanded)

    return Tensor._result(out_data, (x,), backward, "avg_pool2d")


def upsample_nearest2d(x: Tensor, factor: int) -> Tensor:
    out_data = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    n, c, h, w = x.shape

    def backward(g):
        blocks = g.reshape(n, c, h, factor, w, factor)
        x._accumulate(blocks.sum(axis=(3, 5)))

    return Tensor._result(out_data, (x,), backward, "upsample_nearest2d")


def fft_conv2d_same(x: Tensor, kernel: Tensor) -> Tensor:
    """Linear 2-D convolution of NCHW input with a shared HW kernel.

    Computed in the frequency domain with full zero padding (no circular
    wrap-around) and cropped to the input size so that kernel index
    (kh//2, kw//2) aligns with the output origin. Adjoints are correlations,
    also evaluated via FFT.
    """
    n, c, h, w = x.shape
    kh, kw = kernel.shape
    ph, pw = h + kh - 1, w + kw - 1
    fx = rfft2(x.data, s=(ph, pw))
    fk = rfft2(kernel.data, s=(ph, pw))
    full = irfft2(fx * fk, s=(ph, pw))
    r0, c0 = kh // 2, kw // 2
    out_data = np.ascontiguousarray(full[:, :, r0 : r0 + h, c0 : c0 + w], dtype=x.dtype)

    def backward(g):
        gfull = np.zeros((n, c, ph, pw), dtype=x.dtype)
        gfull[:, :, r0 : r0 + h, c0 : c0 + w] = g
        fg = rfft2(gfull, s=(ph, pw))
        if x.requires_grad:
            dx = irfft2(fg * np.conj(fk), s=(ph, pw))[:, :, :h, :w]
            x._accumulate(dx.astype(x.dtype, copy=False))
        if kernel.requires_grad:
            dk = irfft2((fg * np.conj(fx)).sum(axis=(0, 1)), s=(ph, pw))[:kh, :kw]
            kernel._accumulate(dk.astype(kernel.dtype, copy=False))

    return Tensor._result(out_data, (x, kernel), backward, "fft_conv2d_same")


def gather_windows(x: Tensor, centers, out_hw) -> Tensor:
    """Extract per-sample windows of ``out_hw`` centered at integer centers.

    ``centers`` is an (N, 2) array of (row, col) positions in the input
    raster; the window is placed so each center lands on the window's
    (Ho//2, Wo//2) pixel. Out-of-range regions are zero-filled. The adjoint
    scatter-adds back into the source.
    """
    n, c, h, w = x.shape
    ho, wo = out_hw
    centers = np.asarray(centers, dtype=np.intp).reshape(n, 2)
    out_data = np.zeros((n, c, ho, wo), dtype=x.dtype)
    spans = []
    for i in range(n):
        r0 = int(centers[i, 0]) - ho // 2
        c0 = int(centers[i, 1]) - wo // 2
        sr0, sr1 = max(r0, 0), min(r0 + ho, h)
        sc0, sc1 = max(c0, 0), min(c0 + wo, w)
        dr0, dc0 = sr0 - r0, sc0 - c0
        if sr1 > sr0 and sc1 > sc0:
            out_data[i, :, dr0 : dr0 + sr1 - sr0, dc0 : dc0 + sc1 - sc0] = x.data[
                i, :, sr0:sr1, sc0:sc1
            ]
            spans.append((i, sr0, sr1, sc0, sc1, dr0, dc0))

    def backward(g):
        dx = np.zeros_like(x.data)
        for i, sr0, sr1, sc0, sc1, dr0, dc0 in spans:
            dx[i, :, sr0:sr1, sc0:sc1] += g[i, :, dr0 : dr0 + sr1 - sr0, dc0 : dc0 + sc1 - sc0]
        x._accumulate(dx)

    return Tensor._result(out_data, (x,), backward, "gather_windows")


def matmul_const(a: np.ndarray, t: Tensor) -> Tensor:
    """Product of a constant matrix with a tensor: a @ t."""
    out_data = a @ t.data

    def backward(g):
        t._accumulate(a.T @ g)

    return Tensor._result(out_data, (t,), backward, "matmul_const")


def l2_normalize_rows(t: Tensor, eps_degenerate: float = 1e-7) -> Tensor:
    """Normalize each row to unit L2 norm; rejects degenerate rows."""
    norms_sq = (t * t).sum(axis=1, keepdims=True)
    if np.any(norms_sq.data < eps_degenerate**2):
        raise ContractError("degenerate embedding: pre-normalization output is ~zero")
    return t / norms_sq.sqrt()


def logsumexp_rows(t: Tensor) -> Tensor:
    """Row-wise log-sum-exp, stabilized by a detached max subtraction."""
    m = t.data.max(axis=1, keepdims=True)
    shifted = t - Tensor(m)
    return Tensor(m[:, 0]) + shifted.exp().sum(axis=1).log()


# -- gradient checking -------------------------------------------------------


def grad_check(f, inputs, eps=1e-4, tol=1e-4):
    """Compare analytic gradients of scalar ``f(*inputs)`` to central differences.

    Each input is promoted to float64. The per-parameter relative error is
    ``max|analytic - numeric| / max(max|numeric|, 1e-12)``. Returns a report
    dict with per-parameter errors and an overall pass flag.
    """
    leaves = [Tensor(np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64),
                     requires_grad=True) for t in inputs]
    out = f(*leaves)
    if out.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]

    errors = []
    for idx, leaf in enumerate(leaves):
        numeric = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = f(*leaves).item()
            flat[j] = orig - eps
            lo = f(*leaves).item()
            flat[j] = orig
            num_flat[j] = (hi - lo) / (2 * eps)
        scale = max(np.max(np.abs(numeric)), 1e-12)
        errors.append(float(np.max(np.abs(analytic[idx] - numeric)) / scale))

    max_err = max(errors) if errors else 0.0
    return {
        "per_parameter_rel_error": errors,
        "max_rel_error": max_err,
        "passed": bool(max_err < tol),
        "analytic": analytic,
    }
