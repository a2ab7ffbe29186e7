"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Complex signals are carried as paired real tensors: a complex row vector of
length n is stored as a real row of length 2n, real parts first, imaginary
parts second. The two fused complex primitives (complex_matmul,
phase_diag_apply) operate on that layout directly so the graph stays small.
"""

import warnings

import numpy as np

LOG_EPS = 1e-12


class GraphError(ValueError):
    """Raised when an operation would build an ill-formed graph."""


def _unbroadcast(grad, shape):
    """Sum a gradient back down to `shape` after numpy broadcasting."""
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
    """One node of the computation graph: an ndarray value plus grad plumbing.

    Leaves are created directly (requires_grad=True for trainables); results
    of ops carry closures that push gradients to their parents. `decay` marks
    parameters eligible for weight decay (weight matrices only).
    """

    __slots__ = ("data", "grad", "requires_grad", "decay", "name", "op",
                 "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, decay=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.decay = decay
        self.name = name
        self.op = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"


def _lift(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _result(data, parents, backward, op=None):
    out = Tensor(data)
    out.op = op
    out._parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
    return out


def topo_order(root):
    """Topologically ordered node list (every parent precedes its children)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        # reversed keeps parent visitation in creation order
        for p in reversed(node._parents):
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Reverse-accumulate gradients of a scalar loss into the graph's leaves.

    Accumulation order is the fixed reverse topological order, so gradients
    are bit-deterministic for a fixed graph.
    """
    if loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.data.shape}")
    order = topo_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.data) if node.requires_grad else None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)


# ---------------------------------------------------------------------------
# elementwise / structural primitives
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)
    def bw(out):
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad, b.data.shape)
    return _result(a.data + b.data, (a, b), bw, op="add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    def bw(out):
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(out.grad, b.data.shape)
    return _result(a.data - b.data, (a, b), bw, op="sub")


def hadamard(a, b):
    a, b = _lift(a), _lift(b)
    def bw(out):
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad * a.data, b.data.shape)
    return _result(a.data * b.data, (a, b), bw, op="hadamard")


def scale(a, s):
    a = _lift(a)
    s = float(s)
    def bw(out):
        if a.requires_grad:
            a.grad += s * out.grad
    return _result(a.data * s, (a,), bw, op="scale")


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise GraphError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise GraphError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")
    def bw(out):
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad
    return _result(a.data @ b.data, (a, b), bw, op="matmul")


def concat(parts, axis=-1):
    parts = [_lift(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    def bw(out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                p.grad += out.grad[tuple(idx)]
    return _result(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw, op="concat")


def slice_axis(a, axis, start, length):
    a = _lift(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    def bw(out):
        if a.requires_grad:
            a.grad[idx] += out.grad
    return _result(a.data[idx].copy(), (a,), bw, op="slice")


def reduce_sum(a, axis=None, keepdims=False):
    a = _lift(a)
    def bw(out):
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.data.shape)
    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, op="reduce_sum")


def mean(a, axis=None, keepdims=False):
    a = _lift(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def pow_scalar(a, k):
    a = _lift(a)
    k = float(k)
    data = a.data ** k
    def bw(out):
        if a.requires_grad:
            # subgradient 0 at the x = 0 singularity of fractional powers
            with np.errstate(divide="ignore", invalid="ignore"):
                d = k * a.data ** (k - 1.0)
            a.grad += out.grad * np.where(np.isfinite(d), d, 0.0)
    return _result(data, (a,), bw, op="pow")


def relu(a):
    a = _lift(a)
    mask = a.data > 0
    def bw(out):
        if a.requires_grad:
            a.grad += out.grad * mask
    return _result(np.where(mask, a.data, 0.0), (a,), bw, op="relu")


def sigmoid(a):
    a = _lift(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    def bw(out):
        if a.requires_grad:
            a.grad += out.grad * y * (1.0 - y)
    return _result(y, (a,), bw, op="sigmoid")


def log(a):
    """Natural log with inputs clamped at LOG_EPS (cross-entropy stability)."""
    a = _lift(a)
    clipped = a.data < LOG_EPS
    if clipped.any():
        warnings.warn("log input clamped at 1e-12", RuntimeWarning, stacklevel=2)
    safe = np.maximum(a.data, LOG_EPS)
    def bw(out):
        if a.requires_grad:
            a.grad += out.grad / safe * (~clipped)
    return _result(np.log(safe), (a,), bw, op="log")


def softmax(a, axis=-1):
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    def bw(out):
        if a.requires_grad:
            dot = (out.grad * y).sum(axis=axis, keepdims=True)
            a.grad += y * (out.grad - dot)
    return _result(y, (a,), bw, op="softmax")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

class BatchNormState:
    """Running statistics for one batchnorm layer (per-feature)."""

    def __init__(self, width, momentum=0.9, eps=1e-5):
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def copy(self):
        out = BatchNormState(len(self.running_mean), self.momentum, self.eps)
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batchnorm(x, gamma, beta, state, training):
    """Per-feature batch normalization over axis 0.

    Training mode normalizes with batch statistics (batch >= 2 required) and
    updates the running statistics in `state`; eval mode is the affine map
    through the stored running statistics.
    """
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    if training:
        n = x.data.shape[0]
        if n < 2:
            raise GraphError("batchnorm training mode requires batch >= 2")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv_std
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mu
        state.running_var = m * state.running_var + (1.0 - m) * var

        def bw(out):
            dxhat = out.grad * gamma.data
            if gamma.requires_grad:
                gamma.grad += (out.grad * xhat).sum(axis=0)
            if beta.requires_grad:
                beta.grad += out.grad.sum(axis=0)
            if x.requires_grad:
                x.grad += inv_std / n * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return _result(gamma.data * xhat + beta.data, (x, gamma, beta), bw,
                       op="batchnorm")

    inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
    xhat = (x.data - state.running_mean) * inv_std

    def bw(out):
        if gamma.requires_grad:
            gamma.grad += (out.grad * xhat).sum(axis=0)
        if beta.requires_grad:
            beta.grad += out.grad.sum(axis=0)
        if x.requires_grad:
            x.grad += out.grad * gamma.data * inv_std
    return _result(gamma.data * xhat + beta.data, (x, gamma, beta), bw,
                   op="batchnorm")


# ---------------------------------------------------------------------------
# paired-real complex primitives
# ---------------------------------------------------------------------------

def complex_matmul(m_re, m_im, x):
    """Apply an (m x n) complex matrix to batched paired signals (B, 2n).

    Computes y = M z as four real matmuls:
    y_re = z_re A_re^T - z_im A_im^T, y_im = z_re A_im^T + z_im A_re^T.
    The matrix halves may be constants (ndarray) or trainable Tensors.
    """
    m_re, m_im, x = _lift(m_re), _lift(m_im), _lift(x)
    rows, cols = m_re.data.shape
    if m_im.data.shape != (rows, cols):
        raise GraphError("complex matrix halves must share a shape")
    if x.data.ndim != 2 or x.data.shape[1] != 2 * cols:
        raise GraphError(f"paired input width {x.data.shape} does not match 2x{cols}")
    xr, xi = x.data[:, :cols], x.data[:, cols:]
    yr = xr @ m_re.data.T - xi @ m_im.data.T
    yi = xr @ m_im.data.T + xi @ m_re.data.T

    def bw(out):
        gr, gi = out.grad[:, :rows], out.grad[:, rows:]
        if x.requires_grad:
            x.grad[:, :cols] += gr @ m_re.data + gi @ m_im.data
            x.grad[:, cols:] += -gr @ m_im.data + gi @ m_re.data
        if m_re.requires_grad:
            m_re.grad += gr.T @ xr + gi.T @ xi
        if m_im.requires_grad:
            m_im.grad += gi.T @ xr - gr.T @ xi
    return _result(np.concatenate([yr, yi], axis=1), (m_re, m_im, x), bw, op="complex_matmul")


def phase_diag_apply(theta, x):
    """Unit-modulus diagonal phase layer on paired signals (B, 2n).

    y_re = cos(t) x_re - sin(t) x_im, y_im = sin(t) x_re + cos(t) x_im; exact
    backward for both the phases and the signal. theta is unconstrained real.
    """
    theta, x = _lift(theta), _lift(x)
    n = theta.data.shape[-1]
    if theta.data.ndim != 1 or x.data.ndim != 2 or x.data.shape[1] != 2 * n:
        raise GraphError(f"phase length {theta.data.shape} does not match input {x.data.shape}")
    c, s = np.cos(theta.data), np.sin(theta.data)
    xr, xi = x.data[:, :n], x.data[:, n:]
    yr = c * xr - s * xi
    yi = s * xr + c * xi

    def bw(out):
        gr, gi = out.grad[:, :n], out.grad[:, n:]
        if theta.requires_grad:
            theta.grad += (gr * (-s * xr - c * xi) + gi * (c * xr - s * xi)).sum(axis=0)
        if x.requires_grad:
            x.grad[:, :n] += gr * c + gi * s
            x.grad[:, n:] += -gr * s + gi * c
    return _result(np.concatenate([yr, yi], axis=1), (theta, x), bw, op="phase_diag")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(build_loss, params, h=1e-6, floor=1e-3):
    """Worst-case relative error of analytic vs central-difference gradients.

    `build_loss()` must rebuild the same deterministic scalar-loss graph on
    every call (all randomness frozen outside). Per-scalar relative error is
    |ad - fd| / max(|ad|, |fd|, floor): for gradients below `floor` the
    comparison degrades to an absolute one at floor scale, which still
    catches wrong rules (a sign or factor error shows up at the gradient's
    own magnitude) while not amplifying the finite-difference noise floor on
    near-zero gradients into spurious ratios.
    """
    if not 1e-8 <= h <= 1e-4:
        raise ValueError("step size h outside [1e-8, 1e-4]")
    loss = build_loss()
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            hi = float(build_loss().data)
            flat[i] = keep - h
            lo = float(build_loss().data)
            flat[i] = keep
            fd[i] = (hi - lo) / (2.0 * h)
        fd = fd.reshape(p.data.shape)
        denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), floor)
        worst = max(worst, float(np.max(np.abs(ad - fd) / denom)))
    return worst
