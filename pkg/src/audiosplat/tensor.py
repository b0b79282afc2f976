"""Reverse-mode autodiff tape over dense numpy arrays.

Every differentiable operation in this repo is built from the fixed
primitive set below; each primitive carries an analytic vector-Jacobian
product that is verified against central finite differences (see
``finite_difference_check``). Tensors are float32 by default for training
and float64 inside gradient checks; ops follow the dtype of their inputs.

Non-finite values (NaN/Inf) are treated as an error state: every primitive
validates its output and raises ``NonFiniteError`` instead of propagating.
"""

from __future__ import annotations

import contextlib

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes violate an op's shape rule."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (used by finite-difference probe evaluations)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data, op_name):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by '{op_name}'")


class Tensor:
    """A dense array plus its position in the backward tape.

    ``data`` is always a numpy array (row-major). ``grad`` is filled by
    ``backward()`` for tensors with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self.name = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype):
        out = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)
        out.name = self.name
        return out

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse accumulation from a scalar output."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; constants are folded into the op, not recorded
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor optimized by the trainer."""

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, op_name, parents, vjp):
    """Create an op output, recording the tape edge when grads are enabled."""
    _check_finite(data, op_name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(data, "add", (a, b), vjp)


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _node(data, "sub", (a, b), vjp)


def neg(a):
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(data, "mul", (a, b), vjp)


def matmul(a, b):
    """Matrix product for 1-D and 2-D operands (numpy semantics)."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.data.ndim > 2 or b.data.ndim > 2:
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    data = a.data @ b.data

    def vjp(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:  # dot -> scalar
            return g * bd, g * ad
        if ad.ndim == 1:  # (k,) @ (k,n) -> (n,)
            return g @ bd.T, np.outer(ad, g)
        if bd.ndim == 1:  # (m,k) @ (k,) -> (m,)
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _node(data, "matmul", (a, b), vjp)


def exp(a):
    data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return _node(data, "exp", (a,), vjp)


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _node(data, "sigmoid", (a,), vjp)


def tanh(a):
    data = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _node(data, "tanh", (a,), vjp)


def relu(a):
    data = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return _node(data, "relu", (a,), vjp)


def absval(a):
    data = np.abs(a.data)

    def vjp(g):
        return (g * np.sign(a.data),)

    return _node(data, "abs", (a,), vjp)


def softmax(a, axis=-1):
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        dot = np.sum(g * data, axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _node(data, "softmax", (a,), vjp)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, "concat", tuple(tensors), vjp)


def reshape(a, shape):
    data = a.data.reshape(shape)
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _node(data, "reshape", (a,), vjp)


def transpose2d(a):
    if a.data.ndim != 2:
        raise ShapeError("transpose2d needs a 2-D tensor")
    data = a.data.T.copy()

    def vjp(g):
        return (g.T.copy(),)

    return _node(data, "transpose", (a,), vjp)


def narrow(a, axis, start, length):
    """Slice ``length`` entries along ``axis`` starting at ``start``."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(data, "narrow", (a,), vjp)


def tsum(a, axis=None):
    data = np.sum(a.data, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _node(np.asarray(data), "sum", (a,), vjp)


def tmean(a, axis=None):
    data = np.mean(a.data, axis=axis)
    count = a.data.size if axis is None else a.data.shape[axis]

    def vjp(g):
        scaled = g / count
        if axis is None:
            return (np.broadcast_to(scaled, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(scaled, axis), a.data.shape).copy(),)

    return _node(np.asarray(data), "mean", (a,), vjp)


def _bilinear_locate(coord, res):
    """Align-corners cell lookup: node i sits at i/(res-1)."""
    x = np.clip(coord, 0.0, 1.0) * (res - 1)
    i0 = np.minimum(x.astype(np.int64), res - 2)
    i0 = np.maximum(i0, 0)
    t = x - i0.astype(x.dtype)  # keep the input precision (no int64 promotion)
    inside = (coord > 0.0) & (coord < 1.0)  # clamp kills coord grads at the edge
    return i0, t, inside


def plane_sample(plane, uv):
    """Bilinear lookup of a (S, S, D) grid at N (u, v) points in [0,1]^2.

    Differentiable in both the grid values and the query coordinates.
    """
    plane = _as_tensor(plane)
    uv = _as_tensor(uv)
    res = plane.data.shape[0]
    if res == 1:
        data = np.broadcast_to(plane.data[0, 0], (uv.data.shape[0], plane.data.shape[2])).copy()

        def vjp1(g):
            gp = np.zeros_like(plane.data)
            gp[0, 0] = g.sum(axis=0)
            return gp, np.zeros_like(uv.data)

        return _node(data, "plane_sample", (plane, uv), vjp1)

    i0, ti, i_in = _bilinear_locate(uv.data[:, 0], res)
    j0, tj, j_in = _bilinear_locate(uv.data[:, 1], res)
    p00 = plane.data[i0, j0]
    p01 = plane.data[i0, j0 + 1]
    p10 = plane.data[i0 + 1, j0]
    p11 = plane.data[i0 + 1, j0 + 1]
    ti_ = ti[:, None]
    tj_ = tj[:, None]
    data = (
        p00 * (1 - ti_) * (1 - tj_)
        + p01 * (1 - ti_) * tj_
        + p10 * ti_ * (1 - tj_)
        + p11 * ti_ * tj_
    )

    def vjp(g):
        gp = np.zeros_like(plane.data)
        np.add.at(gp, (i0, j0), g * (1 - ti_) * (1 - tj_))
        np.add.at(gp, (i0, j0 + 1), g * (1 - ti_) * tj_)
        np.add.at(gp, (i0 + 1, j0), g * ti_ * (1 - tj_))
        np.add.at(gp, (i0 + 1, j0 + 1), g * ti_ * tj_)
        d_ti = np.sum(g * ((p10 - p00) * (1 - tj_) + (p11 - p01) * tj_), axis=1)
        d_tj = np.sum(g * ((p01 - p00) * (1 - ti_) + (p11 - p10) * ti_), axis=1)
        guv = np.stack([d_ti * i_in, d_tj * j_in], axis=1) * (res - 1)
        return gp, guv.astype(uv.data.dtype)

    return _node(data, "plane_sample", (plane, uv), vjp)


def line_sample(line, u):
    """Linear lookup of a (S, D) grid at N scalar coordinates in [0,1]."""
    line = _as_tensor(line)
    u = _as_tensor(u)
    res = line.data.shape[0]
    if res == 1:
        data = np.broadcast_to(line.data[0], (u.data.shape[0], line.data.shape[1])).copy()

        def vjp1(g):
            gl = np.zeros_like(line.data)
            gl[0] = g.sum(axis=0)
            return gl, np.zeros_like(u.data)

        return _node(data, "line_sample", (line, u), vjp1)

    i0, t, inside = _bilinear_locate(u.data, res)
    v0 = line.data[i0]
    v1 = line.data[i0 + 1]
    t_ = t[:, None]
    data = v0 * (1 - t_) + v1 * t_

    def vjp(g):
        gl = np.zeros_like(line.data)
        np.add.at(gl, i0, g * (1 - t_))
        np.add.at(gl, i0 + 1, g * t_)
        gu = np.sum(g * (v1 - v0), axis=1) * (res - 1) * inside
        return gl, gu.astype(u.data.dtype)

    return _node(data, "line_sample", (line, u), vjp)


def avgpool2(img):
    """2x2 box-average of an (H, W, C) image; H and W must be even."""
    h, w, c = img.data.shape
    if h % 2 or w % 2:
        raise ShapeError("avgpool2 needs even height and width")
    data = img.data.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))

    def vjp(g):
        up = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1)
        return (up * 0.25,)

    return _node(data, "avgpool2", (img,), vjp)


#: Name -> callable map of the differentiable primitive set. The gradient
#: check runner enumerates this to exercise every primitive at random points.
PRIMITIVES = {
    "add": add,
    "sub": sub,
    "neg": neg,
    "mul": mul,
    "matmul": matmul,
    "exp": exp,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "abs": absval,
    "softmax": softmax,
    "concat": concat,
    "reshape": reshape,
    "transpose": transpose2d,
    "narrow": narrow,
    "sum": tsum,
    "mean": tmean,
    "plane_sample": plane_sample,
    "line_sample": line_sample,
    "avgpool2": avgpool2,
}


# ---------------------------------------------------------------------------
# finite-difference oracle


class GradCheckReport:
    """Result of comparing analytic gradients against central differences."""

    def __init__(self, max_rel_error, worst_param, worst_index, passed, n_coords):
        self.max_rel_error = max_rel_error
        self.worst_param = worst_param
        self.worst_index = worst_index
        self.passed = passed
        self.n_coords = n_coords

    def __repr__(self):
        state = "pass" if self.passed else "FAIL"
        return (
            f"GradCheckReport({state}, max_rel_error={self.max_rel_error:.3e}, "
            f"worst={self.worst_param}{list(self.worst_index)}, coords={self.n_coords})"
        )


def finite_difference_check(build_loss, params, h=1e-6, tol=1e-5):
    """Compare analytic gradients of a scalar loss against central differences.

    ``build_loss()`` must rebuild and return the scalar loss Tensor from the
    current contents of ``params`` (a list of Parameters, float64). The
    relative error is |a - n| / max(|a|, |n|, 1e-8), checked per coordinate.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError(f"gradient checks require float64 parameters ({p.name})")
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    worst_param = params[0].name if params else ""
    worst_index = ()
    n_coords = 0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            aflat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = float(build_loss().data)
                flat[i] = orig - h
                f_minus = float(build_loss().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                rel = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
                n_coords += 1
                if rel > worst:
                    worst = rel
                    worst_param = p.name
                    worst_index = np.unravel_index(i, p.data.shape)
    return GradCheckReport(worst, worst_param, worst_index, worst <= tol, n_coords)
