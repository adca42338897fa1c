"""Minimal reverse-mode automatic differentiation on numpy arrays.

Only the pieces needed by the three regression networks are provided:
dense, 3x3 "same" convolution, 2x2 ceil-mode max-pooling, an LSTM layer with
relu candidate/cell nonlinearities, relu, reshape and the MSE loss, plus the
Adam optimizer and a central-difference gradient checker.

Images are channels-last: ``(batch, height, width, channels)``.
"""

from collections import OrderedDict
from contextlib import contextmanager

import numpy as np

from . import _kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class RankError(ValueError):
    """A scalar was required."""


class Tensor:
    """An array with an optional gradient and the recipe to backpropagate it.

    Parameters
    ----------
    data : array_like
        Values; stored as a numpy array of ``dtype`` (float32 unless given).
    requires_grad : bool
        Whether ``backward`` should populate ``grad`` for this tensor.
    name : str, optional
        Label used in error messages and checkpoints.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None,
                 _parents=(), _backward=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" \
                else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def values(self):
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Evaluate without recording backward closures (inference)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _node(data, parents, backward):
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents or not _GRAD_ENABLED[-1]:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True).reshape(t.shape)
    else:
        t.grad += g.reshape(t.shape)


def _check_activation(activation):
    if activation not in ("relu", "linear"):
        raise ValueError(f"unknown activation {activation!r}")


# --------------------------------------------------------------------- ops


def relu(x):
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _node(out, (x,), backward)


def reshape(x, shape):
    x = _as_tensor(x)
    src_shape = x.shape
    out = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(src_shape))

    return _node(out, (x,), backward)


def gather(x, index):
    """Rows of ``x`` picked by an integer array: ``x[index]``.

    The backward pass sums gradients of repeated indices, so a per-row
    function evaluated once and gathered is equivalent to evaluating it at
    every position.
    """
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def backward(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        np.add.at(gx, index.reshape(-1), g.reshape((-1,) + x.shape[1:]))
        _accumulate(x, gx)

    return _node(out, (x,), backward)


def dense(x, weight, bias, activation="linear"):
    """``act(x @ weight.T + bias)`` over the last axis of ``x``.

    ``weight`` is ``[n_out, n_in]`` and ``bias`` is ``[n_out]``.
    """
    _check_activation(activation)
    x = _as_tensor(x)
    if weight.data.ndim != 2 or bias.shape != (weight.shape[0],) \
            or x.shape[-1:] != weight.shape[1:]:
        raise DimensionError(
            f"dense: input {x.shape} incompatible with weight {weight.shape}"
            f" and bias {bias.shape}")
    out = x.data @ weight.data.T
    out += bias.data
    if activation == "relu":
        np.maximum(out, 0, out=out)

    def backward(g):
        if activation == "relu":
            g = g * (out > 0)
        g2 = g.reshape(-1, g.shape[-1])
        if weight.requires_grad:
            _accumulate(weight, g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            _accumulate(x, g @ weight.data)

    return _node(out, (x, weight, bias), backward)


def _im2col(x):
    """``[B, H, W, C]`` -> ``[B*H*W, 9*C]`` zero-padded 3x3 neighbourhoods."""
    b, h, w, c = x.shape
    cols = np.empty((b, h, w, 3, 3, c), dtype=x.dtype)
    _kernels.im2col3x3(np.ascontiguousarray(x), cols)
    return cols.reshape(b * h * w, 9 * c)


def _col2im(gcols, shape):
    gx = np.zeros(shape, dtype=gcols.dtype)
    b, h, w, c = shape
    _kernels.col2im3x3(gcols.reshape(b, h, w, 3, 3, c), gx)
    return gx


def _conv_inputs(x, kernel, bias, op):
    if kernel.data.ndim != 4 or kernel.shape[:2] != (3, 3):
        raise DimensionError(f"{op}: kernel must be [3, 3, C_in, C_out], got {kernel.shape}")
    xd = x.data[None] if x.data.ndim == 3 else x.data
    if xd.ndim != 4 or xd.shape[-1] != kernel.shape[2]:
        raise DimensionError(
            f"{op}: input {x.shape} has {x.shape[-1]} channels, kernel {kernel.shape}"
            f" expects {kernel.shape[2]}")
    if bias.shape != (kernel.shape[3],):
        raise DimensionError(f"{op}: bias {bias.shape} does not match kernel {kernel.shape}")
    return xd


def conv2d(x, kernel, bias, activation="linear"):
    """3x3 cross-correlation, stride 1, zero "same" padding.

    ``x`` is ``[B, H, W, C_in]`` (a single ``[H, W, C_in]`` image is also
    accepted), ``kernel`` is ``[3, 3, C_in, C_out]`` and ``bias`` ``[C_out]``.
    """
    _check_activation(activation)
    x = _as_tensor(x)
    single = x.data.ndim == 3
    xd = _conv_inputs(x, kernel, bias, "conv2d")
    b, h, w, cin = xd.shape
    cout = kernel.shape[3]
    cols = _im2col(xd)
    kmat = kernel.data.reshape(9 * cin, cout)
    out = cols @ kmat
    out += bias.data
    if activation == "relu":
        np.maximum(out, 0, out=out)
    out = out.reshape(b, h, w, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if activation == "relu":
            g2 = g2 * (out.reshape(-1, cout) > 0)
        if kernel.requires_grad:
            _accumulate(kernel, (cols.T @ g2).reshape(kernel.shape))
        if bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            gx = _col2im(g2 @ kmat.T, xd.shape)
            _accumulate(x, gx[0] if single else gx)

    return _node(out[0] if single else out, (x, kernel, bias), backward)


def _pool(yd):
    b, h, w, c = yd.shape
    h2, w2 = -(-h // 2), -(-w // 2)
    out = np.empty((b, h2, w2, c), dtype=yd.dtype)
    idx = np.empty((b, h2, w2, c), dtype=np.uint8)
    _kernels.maxpool2x2(np.ascontiguousarray(yd), out, idx)
    return out, idx


def _unpool(g, idx, shape, dtype):
    gy = np.empty(shape, dtype=dtype)
    _kernels.unpool2x2(np.ascontiguousarray(g, dtype=dtype).reshape(idx.shape), idx, gy)
    return gy


def maxpool2d(x):
    """2x2 max-pooling with stride 2 in ceil mode.

    Incomplete edge windows only consider the cells that exist. The gradient
    goes to the window's argmax; ties resolve to the lowest linear index.
    """
    x = _as_tensor(x)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or min(xd.shape[1:3]) < 1:
        raise DimensionError(f"maxpool2d: expected [B, H, W, C] input, got {x.shape}")
    out, idx = _pool(xd)

    def backward(g):
        gx = _unpool(g, idx, xd.shape, xd.dtype)
        _accumulate(x, gx[0] if single else gx)

    return _node(out[0] if single else out, (x,), backward)


def conv_relu_pool(x, kernel, bias):
    """Fused ``maxpool2d(conv2d(x, kernel, bias, "relu"))``.

    Pooling is applied before the relu, which gives identical values and
    gradients but only keeps the quarter-size pooled activations alive.
    """
    x = _as_tensor(x)
    xd = _conv_inputs(x, kernel, bias, "conv_relu_pool")
    if x.data.ndim == 3:
        raise DimensionError("conv_relu_pool expects a batch [B, H, W, C]")
    b, h, w, cin = xd.shape
    cout = kernel.shape[3]
    cols = _im2col(xd)
    kmat = kernel.data.reshape(9 * cin, cout)
    y = cols @ kmat
    y += bias.data
    pooled, idx = _pool(y.reshape(b, h, w, cout))
    del y
    np.maximum(pooled, 0, out=pooled)

    def backward(g):
        gp = g * (pooled > 0)
        gy = _unpool(gp, idx, (b, h, w, cout), xd.dtype).reshape(-1, cout)
        if kernel.requires_grad:
            _accumulate(kernel, (cols.T @ gy).reshape(kernel.shape))
        if bias.requires_grad:
            _accumulate(bias, gp.reshape(-1, cout).sum(axis=0))
        if x.requires_grad:
            _accumulate(x, _col2im(gy @ kmat.T, xd.shape))

    return _node(pooled, (x, kernel, bias), backward)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_step(x, h, c, w_ih, w_hh, b):
    """One LSTM recurrence on plain arrays; returns ``(h_new, c_new)``.

    Gates are ordered input, forget, candidate, output. The candidate and the
    cell-output nonlinearity are relu.
    """
    z = x @ w_ih.T + h @ w_hh.T + b
    n = h.shape[-1]
    i = _sigmoid(z[..., :n])
    f = _sigmoid(z[..., n:2 * n])
    g = np.maximum(z[..., 2 * n:3 * n], 0)
    o = _sigmoid(z[..., 3 * n:])
    c_new = f * c + i * g
    return o * np.maximum(c_new, 0), c_new


def lstm(x, w_ih, w_hh, bias, return_sequence=True):
    """Run an LSTM over ``x`` of shape ``[B, T, n_in]`` (or ``[T, n_in]``).

    ``w_ih`` is ``[4*n_h, n_in]``, ``w_hh`` is ``[4*n_h, n_h]`` and ``bias``
    ``[4*n_h]``; initial hidden and cell states are zero. Returns
    ``[B, T, n_h]`` or, without ``return_sequence``, the last step ``[B, n_h]``.
    """
    x = _as_tensor(x)
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"lstm: expected [B, T, n_in] input, got {x.shape}")
    if x.shape[-2] == 0:
        raise ValueError("lstm: empty sequence")
    n = w_hh.shape[1]
    n_in = x.shape[-1]
    if w_ih.shape != (4 * n, n_in) or w_hh.shape != (4 * n, n) or bias.shape != (4 * n,):
        raise DimensionError(
            f"lstm: input {x.shape} incompatible with w_ih {w_ih.shape},"
            f" w_hh {w_hh.shape}, bias {bias.shape}")
    return lstm_recurrence(dense(x, w_ih, bias), w_hh, return_sequence)


def lstm_recurrence(zx, w_hh, return_sequence=True):
    """LSTM recurrence given the input pre-activations ``zx = x W_ih^T + b``.

    ``zx`` is ``[B, T, 4*n_h]`` (or ``[T, 4*n_h]``). Splitting the input
    projection off lets callers compute it once per distinct input step.
    """
    zx = _as_tensor(zx)
    single = zx.data.ndim == 2
    zd = zx.data[None] if single else zx.data
    if zd.ndim != 3:
        raise DimensionError(f"lstm: expected [B, T, 4n] pre-activations, got {zx.shape}")
    bsz, steps, n4 = zd.shape
    if steps == 0:
        raise ValueError("lstm: empty sequence")
    n = w_hh.shape[1]
    if n4 != 4 * n or w_hh.shape != (4 * n, n):
        raise DimensionError(f"lstm: pre-activations {zx.shape} incompatible with w_hh {w_hh.shape}")

    dt = zd.dtype
    gates = np.empty((bsz, steps, 4 * n), dtype=dt)  # activated i, f, g, o
    cs = np.zeros((bsz, steps + 1, n), dtype=dt)
    hs = np.zeros((bsz, steps + 1, n), dtype=dt)
    for t in range(steps):
        z = zd[:, t] + hs[:, t] @ w_hh.data.T
        a = gates[:, t]
        a[:, :2 * n] = _sigmoid(z[:, :2 * n])
        a[:, 2 * n:3 * n] = np.maximum(z[:, 2 * n:3 * n], 0)
        a[:, 3 * n:] = _sigmoid(z[:, 3 * n:])
        cs[:, t + 1] = a[:, n:2 * n] * cs[:, t] + a[:, :n] * a[:, 2 * n:3 * n]
        hs[:, t + 1] = a[:, 3 * n:] * np.maximum(cs[:, t + 1], 0)

    out = hs[:, 1:] if return_sequence else hs[:, -1]

    def backward(gout):
        if return_sequence:
            gh_all = gout.reshape(bsz, steps, n)
        else:
            gh_all = np.zeros((bsz, steps, n), dtype=dt)
            gh_all[:, -1] = gout.reshape(bsz, n)
        gz = np.empty((bsz, steps, 4 * n), dtype=dt)
        gh = np.zeros((bsz, n), dtype=dt)
        gc = np.zeros((bsz, n), dtype=dt)
        for t in range(steps - 1, -1, -1):
            a = gates[:, t]
            i, f, g, o = a[:, :n], a[:, n:2 * n], a[:, 2 * n:3 * n], a[:, 3 * n:]
            c = cs[:, t + 1]
            gh = gh + gh_all[:, t]
            rc = np.maximum(c, 0)
            gc = gc + gh * o * (c > 0)
            gzt = gz[:, t]
            gzt[:, 3 * n:] = gh * rc * o * (1 - o)
            gzt[:, :n] = gc * g * i * (1 - i)
            gzt[:, n:2 * n] = gc * cs[:, t] * f * (1 - f)
            gzt[:, 2 * n:3 * n] = gc * i * (g > 0)
            gc = gc * f
            if t > 0:
                gh = gzt @ w_hh.data
        if w_hh.requires_grad:
            _accumulate(w_hh, gz.reshape(-1, 4 * n).T @ hs[:, :-1].reshape(-1, n))
        _accumulate(zx, gz[0] if single else gz)

    return _node(out[0] if single else out, (zx, w_hh), backward)


def mse_loss(pred, target):
    """Mean over all elements of the squared difference; returns a scalar node."""
    pred = _as_tensor(pred)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != tgt.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs target {tgt.shape}")
    diff = pred.data - tgt
    out = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def backward(g):
        scale = 2.0 * g / diff.size
        _accumulate(pred, scale * diff)
        if isinstance(target, Tensor):
            _accumulate(target, -scale * diff)

    parents = (pred, target) if isinstance(target, Tensor) else (pred,)
    return _node(out, parents, backward)


# ---------------------------------------------------------------- backprop


def _topological(root):
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


def backward(loss):
    """Populate ``grad`` on every tensor reachable from the scalar ``loss``.

    Gradients are reset first, so repeated calls never accumulate.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise RankError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = None
    if not loss.requires_grad:
        return
    loss.grad = np.ones(loss.shape, dtype=loss.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # interior activations are not needed once propagated
            if node._parents:
                node._backward = None


# ------------------------------------------------------------------ layers


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class: a callable with named parameters."""

    def parameters(self):
        return OrderedDict()

    def __call__(self, x):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in, n_out, activation="linear", name="dense"):
        _check_activation(activation)
        self.n_in, self.n_out, self.activation, self.name = n_in, n_out, activation, name
        self.weight = Tensor(np.zeros((n_out, n_in), np.float32), True, f"{name}.weight")
        self.bias = Tensor(np.zeros(n_out, np.float32), True, f"{name}.bias")

    def init(self, rng):
        self.weight.data[...] = glorot_uniform(rng, self.weight.shape, self.n_in, self.n_out)
        self.bias.data[...] = 0

    def parameters(self):
        return OrderedDict([(self.weight.name, self.weight), (self.bias.name, self.bias)])

    def __call__(self, x):
        return dense(x, self.weight, self.bias, self.activation)


class Conv2D(Layer):
    def __init__(self, c_in, c_out, activation="relu", name="conv"):
        _check_activation(activation)
        self.c_in, self.c_out, self.activation, self.name = c_in, c_out, activation, name
        self.kernel = Tensor(np.zeros((3, 3, c_in, c_out), np.float32), True, f"{name}.kernel")
        self.bias = Tensor(np.zeros(c_out, np.float32), True, f"{name}.bias")

    def init(self, rng):
        self.kernel.data[...] = glorot_uniform(
            rng, self.kernel.shape, 9 * self.c_in, 9 * self.c_out)
        self.bias.data[...] = 0

    def parameters(self):
        return OrderedDict([(self.kernel.name, self.kernel), (self.bias.name, self.bias)])

    def __call__(self, x):
        return conv2d(x, self.kernel, self.bias, self.activation)


class ConvPool(Conv2D):
    """A relu :class:`Conv2D` followed by :func:`maxpool2d`, run fused."""

    def __init__(self, c_in, c_out, name="conv"):
        super().__init__(c_in, c_out, "relu", name)

    def __call__(self, x):
        return conv_relu_pool(x, self.kernel, self.bias)


class MaxPool2D(Layer):
    def __init__(self, name="pool"):
        self.name = name

    def __call__(self, x):
        return maxpool2d(x)


class Flatten(Layer):
    """Flatten everything after the batch axis."""

    def __init__(self, name="flatten"):
        self.name = name

    def __call__(self, x):
        return reshape(x, (x.shape[0], -1))


class LSTM(Layer):
    def __init__(self, n_in, n_hidden, return_sequence=True, name="lstm"):
        self.n_in, self.n_hidden, self.name = n_in, n_hidden, name
        self.return_sequence = return_sequence
        self.w_ih = Tensor(np.zeros((4 * n_hidden, n_in), np.float32), True, f"{name}.w_ih")
        self.w_hh = Tensor(np.zeros((4 * n_hidden, n_hidden), np.float32), True, f"{name}.w_hh")
        self.bias = Tensor(np.zeros(4 * n_hidden, np.float32), True, f"{name}.bias")

    def init(self, rng):
        n = self.n_hidden
        self.w_ih.data[...] = glorot_uniform(rng, self.w_ih.shape, self.n_in, 4 * n)
        self.w_hh.data[...] = glorot_uniform(rng, self.w_hh.shape, n, 4 * n)
        self.bias.data[...] = 0
        self.bias.data[n:2 * n] = 1.0  # forget gate

    def parameters(self):
        return OrderedDict([(t.name, t) for t in (self.w_ih, self.w_hh, self.bias)])

    def __call__(self, x):
        if isinstance(x, WindowBatch):
            # project each distinct step once, then lay out the windows
            zx = gather(dense(x.frames, self.w_ih, self.bias), x.index)
            return lstm_recurrence(zx, self.w_hh, self.return_sequence)
        return lstm(x, self.w_ih, self.w_hh, self.bias, self.return_sequence)


class TimeDistributed(Layer):
    """Apply a stack of layers independently to every step of ``[B, T, ...]``.

    The wrapped layers' weights are shared across steps.
    """

    def __init__(self, layers, name="time"):
        self.layers = list(layers)
        self.name = name

    def init(self, rng):
        for layer in self.layers:
            if hasattr(layer, "init"):
                layer.init(rng)

    def parameters(self):
        params = OrderedDict()
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def __call__(self, x):
        if isinstance(x, WindowBatch):
            y = x.frames
            for layer in self.layers:
                y = layer(y)
            return WindowBatch(y, x.index)
        bsz, steps = x.shape[:2]
        y = reshape(x, (bsz * steps,) + x.shape[2:])
        for layer in self.layers:
            y = layer(y)
        return reshape(y, (bsz, steps) + y.shape[1:])


class WindowBatch:
    """Overlapping windows stored as unique frames plus an index.

    ``frames`` holds ``U`` distinct steps and ``index[b, t]`` says which one
    sits at step ``t`` of window ``b``. Equivalent to ``frames[index]`` but
    lets a :class:`TimeDistributed` stack run once per distinct frame.
    """

    def __init__(self, frames, index):
        self.frames = frames
        self.index = np.asarray(index, dtype=np.intp)

    @property
    def shape(self):
        return self.index.shape + tuple(self.frames.shape[1:])

    def dense(self):
        return np.asarray(self.frames.data if isinstance(self.frames, Tensor)
                          else self.frames)[self.index]


class ModelGraph:
    """An ordered stack of layers with every parameter registered once."""

    def __init__(self, layers, kind="custom", input_shape=None):
        self.layers = list(layers)
        self.kind = kind
        self.input_shape = input_shape
        self._params = OrderedDict()
        for layer in self.layers:
            for name, p in layer.parameters().items():
                if name in self._params:
                    raise ValueError(f"parameter {name!r} registered twice")
                self._params[name] = p

    def init(self, seed=0):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if hasattr(layer, "init"):
                layer.init(rng)
        return self

    def parameters(self):
        return self._params

    def count_parameters(self):
        return int(sum(p.size for p in self._params.values()))

    def astype(self, dtype):
        for p in self._params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    @property
    def dtype(self):
        return next(iter(self._params.values())).dtype

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self._params.items())

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self._params.items():
            if state[k].shape != p.shape:
                raise DimensionError(f"{k}: checkpoint shape {state[k].shape} vs {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype, copy=True)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def __call__(self, x):
        if isinstance(x, WindowBatch):
            frames = x.frames if isinstance(x.frames, Tensor) else Tensor(
                np.asarray(x.frames, dtype=self.dtype))
            y = WindowBatch(frames, x.index)
        else:
            y = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        for layer in self.layers:
            y = layer(y)
        return y


# --------------------------------------------------------------- optimizer


class AdamState:
    """Moments and step counter for :func:`adam_step`."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())
        self.v = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())


def adam_step(params, state):
    """Apply one bias-corrected Adam update in place and advance ``state.t``.

    ``params`` maps names to tensors whose ``grad`` has been populated.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        m, v, g = state.m[name], state.v[name], p.grad
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (state.lr * step).astype(p.dtype)
    return params, state


# ------------------------------------------------------------ grad checking


def finite_difference_check(loss_fn, params, eps=1e-5, floor=1e-6):
    """Compare analytic gradients against central differences.

    Parameters
    ----------
    loss_fn : callable
        Builds the graph from the current parameter values and returns a
        scalar :class:`Tensor`. Should run in float64.
    params : iterable of Tensor
        Tensors to perturb, element by element.
    eps : float
        Central-difference step.
    floor : float
        Gradient magnitude below which errors are measured absolutely. In
        double precision the central difference carries roundoff of about
        1e-11, which would swamp a relative comparison of tiny gradients.

    Returns
    -------
    float
        ``max |analytic - numeric| / max(|analytic|, |numeric|, floor)`` over
        every element of every parameter.
    """
    params = list(params)
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else np.array(p.grad, dtype=np.float64)
                for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = float(loss_fn().data)
            flat[idx] = orig - eps
            down = float(loss_fn().data)
            flat[idx] = orig
            num = (up - down) / (2 * eps)
            a = ga.reshape(-1)[idx]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
