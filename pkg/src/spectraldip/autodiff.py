"""Dense float64 tensors with a small reverse-mode tape and an Adam optimizer.

Every operation here works on unbatched ``(C, H, W)`` feature maps, which is all a
single-image prior ever needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class TapeError(RuntimeError):
    """The gradient tape was used in an invalid state."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array plus the tape node that produced it.

    Leaves created with ``requires_grad=True`` are parameters; their ``grad`` starts
    at zero and accumulates over calls to :meth:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), Tensor(-1.0)))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def sum(self) -> "Tensor":
        return sum_all(self)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of an operation on ``parents``.

    ``backward_fn`` maps the output gradient to one gradient per parent (``None``
    for parents that need none). Other modules register custom ops through this.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    out._consumed = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable parameter's ``grad``.

    The tape is released as it is walked, so a second call on the same graph
    raises :class:`TapeError`; run a fresh forward pass instead.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise TapeError("backward already ran on this tape; rebuild the graph with a new forward pass")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._consumed:
            raise TapeError("backward reached a node whose tape was already released")
        if node._backward is None:
            if g is not None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            continue
        node._consumed = True
        fn, parents = node._backward, node._parents
        node._backward = None
        node._parents = ()
        if g is None:
            continue
        for parent, pg in zip(parents, fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    loss._consumed = True


# ----------------------------------------------------------------------------
# elementwise and reduction ops


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    return make_node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return make_node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sum_all(x: Tensor) -> Tensor:
    return make_node(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        gd = g * (2.0 / n) * diff
        return gd, -gd

    return make_node(np.array(np.mean(diff * diff)), (pred, target), bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1:] != b.shape[1:]:
        raise DimensionError(f"concat_channels spatial mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[0]
    return make_node(
        np.concatenate([a.data, b.data], axis=0),
        (a, b),
        lambda g: (g[:ca], g[ca:]),
    )


def channel_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel to zero spatial mean and unit variance.

    This is batch normalization with a batch of one and no running statistics.
    Scale and shift are a separate op, :func:`affine_channels`.
    """
    c = x.shape[0]
    if x.data[0].size < 2:
        raise DimensionError("channel_norm needs at least two spatial positions")
    flat = x.data.reshape(c, -1)
    mean = flat.mean(axis=1, keepdims=True)
    centered = flat - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def bw(g):
        gf = g.reshape(c, -1)
        gx = inv_std * (gf - gf.mean(axis=1, keepdims=True)
                        - xhat * np.mean(gf * xhat, axis=1, keepdims=True))
        return (gx.reshape(x.shape),)

    return make_node(xhat.reshape(x.shape), (x,), bw)


def affine_channels(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel ``scale * x + shift`` with ``scale``/``shift`` of shape ``(C,)``."""
    s = scale.data[:, None, None]
    b = shift.data[:, None, None]

    def bw(g):
        return g * s, (g * x.data).sum(axis=(1, 2)), g.sum(axis=(1, 2))

    return make_node(x.data * s + b, (x, scale, shift), bw)


# ----------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    cin = xp.shape[0]
    cols = np.empty((cin, k, k, ho, wo))
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xp[:, dy:dy + stride * ho:stride, dx:dx + stride * wo:stride]
    return cols


def _flat_columns(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """Columns ``[Cin*k*k, H*(W+2p)]`` of a stride-1 "same" convolution.

    Rows are padded to ``W + 2p`` and flattened, which turns every kernel tap into a
    constant offset into one buffer; a strided view then gathers all taps at once.
    Each output row carries ``2p`` junk columns that callers crop away.
    """
    cin, h, wd = x.shape
    wp = wd + 2 * pad
    n_out = h * wp
    buf = np.zeros((cin, (h + 2 * pad) * wp + 2 * pad))
    buf[:, :(h + 2 * pad) * wp].reshape(cin, h + 2 * pad, wp)[:, pad:pad + h, pad:pad + wd] = x
    s_c, s = buf.strides
    view = np.lib.stride_tricks.as_strided(buf, (cin, k, k, n_out), (s_c, wp * s, s, s), writeable=False)
    return view.reshape(cin * k * k, n_out)


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2D cross-correlation of ``x[Cin,H,W]`` with ``kernel[Cout,Cin,k,k]``, zero padded."""
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d expects (C,H,W) input and (Co,Ci,k,k) kernel, got {x.shape}, {kernel.shape}")
    cout, cin, k, k2 = kernel.shape
    if k != k2:
        raise DimensionError("conv2d kernel must be square")
    if x.shape[0] != cin:
        raise DimensionError(f"conv2d channel mismatch: input has {x.shape[0]}, kernel expects {cin}")
    _, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d output would be empty for input {x.shape}")
    if k == 1 and stride == 1 and padding == 0:
        return _conv_pointwise(x, kernel, bias)
    if stride == 1 and 2 * padding == k - 1:
        return _conv_same(x, kernel, bias, padding)
    return _conv_im2col(x, kernel, bias, stride, padding, ho, wo)


def _finish(out: np.ndarray, x: Tensor, kernel: Tensor, bias: Tensor | None, bw) -> Tensor:
    if bias is not None:
        out += bias.data[:, None, None]
        return make_node(out, (x, kernel, bias), bw)
    return make_node(out, (x, kernel), lambda g: bw(g)[:2])


def _conv_pointwise(x, kernel, bias):
    cout, cin = kernel.shape[:2]
    wmat = kernel.data.reshape(cout, cin)
    xf = x.data.reshape(cin, -1)
    out = (wmat @ xf).reshape(cout, *x.shape[1:])

    def bw(g):
        g2 = g.reshape(cout, -1)
        gx = (wmat.T @ g2).reshape(x.shape) if x.requires_grad else None
        gk = (g2 @ xf.T).reshape(kernel.shape) if kernel.requires_grad else None
        return gx, gk, g2.sum(axis=1)

    return _finish(out, x, kernel, bias, bw)


def _conv_same(x, kernel, bias, pad):
    cout, cin, k, _ = kernel.shape
    _, h, w = x.shape
    wp = w + 2 * pad
    wmat = kernel.data.reshape(cout, -1)
    cols = _flat_columns(x.data, k, pad)
    out = np.ascontiguousarray((wmat @ cols).reshape(cout, h, wp)[:, :, :w])

    def bw(g):
        gf = np.zeros((cout, h, wp))
        gf[:, :, :w] = g
        gf = gf.reshape(cout, h * wp)
        gk = (gf @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            # the adjoint of a "same" correlation is a "same" correlation with the
            # flipped kernel and swapped channel axes
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
            gx = (flipped @ _flat_columns(g, k, pad)).reshape(cin, h, wp)[:, :, :w]
        return gx, gk, g.sum(axis=(1, 2))

    return _finish(out, x, kernel, bias, bw)


def _conv_im2col(x, kernel, bias, stride, padding, ho, wo):
    cout, cin, k, _ = kernel.shape
    _, h, w = x.shape
    wmat = kernel.data.reshape(cout, -1)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, ho, wo).reshape(cin * k * k, -1)
    out = (wmat @ cols).reshape(cout, ho, wo)

    def bw(g):
        g2 = g.reshape(cout, -1)
        gk = (g2 @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(cin, k, k, ho, wo)
            gxp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
            for dy in range(k):
                for dx in range(k):
                    gxp[:, dy:dy + stride * ho:stride, dx:dx + stride * wo:stride] += gcols[:, dy, dx]
            gx = gxp[:, padding:padding + h, padding:padding + w]
        return gx, gk, g2.sum(axis=1)

    return _finish(out, x, kernel, bias, bw)


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Adam moments for a flat list of parameter arrays."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Iterable[np.ndarray], learning_rate: float = 0.01,
                   beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> "OptimizerState":
        params = list(params)
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise DimensionError("adam_step: params, grads and optimizer state disagree in length")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise FloatingPointError(
                f"adam_step: parameter {i} (shape {np.shape(g)}) has {bad} non-finite gradient entries "
                f"at step {state.step_count + 1}"
            )
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


class Adam:
    """Adam over a list of parameter tensors, reading their accumulated ``grad``."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState.for_params((p.data for p in self.params), lr, beta1, beta2, eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)


__all__ = [
    "Adam",
    "DimensionError",
    "OptimizerState",
    "TapeError",
    "Tensor",
    "adam_step",
    "add",
    "affine_channels",
    "backward",
    "channel_norm",
    "concat_channels",
    "conv2d",
    "leaky_relu",
    "make_node",
    "mse_loss",
    "mul",
    "relu",
    "sigmoid",
    "sum_all",
]
