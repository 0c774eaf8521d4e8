"""Dense float64 tensors with tape-style reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` holding a
reference to its inputs and an adjoint rule. ``backward`` collects the nodes
reachable from a scalar loss into a :class:`Graph` (topological order) and
replays the adjoint rules in reverse. Cached forward values are released
after replay, so a second backward through the same nodes is an error.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A precondition of an operation was violated."""


class GraphStateError(RuntimeError):
    """The graph was already consumed by a previous backward pass."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = rule
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


class Graph:
    """Nodes reachable from a root, in topological order (inputs first)."""

    def __init__(self, root: Tensor):
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
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = order

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphStateError("backward already ran on this graph")
    if not loss.requires_grad:
        loss._consumed = True
        return
    graph = Graph(loss)
    for node in graph.nodes:
        if node._consumed:
            raise GraphStateError("graph contains nodes freed by an earlier backward")
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = adjoints.pop(id(node), None)
        if node._backward is None:
            # leaf
            if node.requires_grad and g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + pg
                else:
                    adjoints[key] = pg
        node._backward = None
        node._parents = ()
        node._consumed = True


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def scale(a, factor: float) -> Tensor:
    a = _lift(a)
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: (g * factor,))


def square(a) -> Tensor:
    a = _lift(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sin(a) -> Tensor:
    a = _lift(a)
    ad = a.data
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {"tanh": tanh, "relu": relu, "sin": sin}


def elementwise(op: str, *args, factor: float | None = None) -> Tensor:
    """Dispatch by name: add, sub, mul, tanh, relu, sin, exp, scale."""
    binary = {"add": add, "sub": sub, "mul": mul}
    unary = {"tanh": tanh, "relu": relu, "sin": sin, "exp": exp}
    if op in binary:
        return binary[op](*args)
    if op in unary:
        return unary[op](*args)
    if op == "scale":
        return scale(args[0], factor if factor is not None else args[1])
    raise ValueError(f"unknown elementwise op {op!r}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    shape = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), rule)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swap_last(a) -> Tensor:
    a = _lift(a)
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(a, index) -> Tensor:
    a = _lift(a)
    shape = a.shape

    basic = all(
        isinstance(i, (slice, int, type(Ellipsis))) or i is None
        for i in (index if isinstance(index, tuple) else (index,))
    )

    def rule(g):
        full = np.zeros(shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), rule)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    return _make(out, tuple(ts), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise DimensionError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None
    n = len(ts)
    return _make(out, tuple(ts), lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def broadcast_to(a, shape) -> Tensor:
    a = _lift(a)
    old = a.shape
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, old),))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def rule(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _make(out, (a, b), rule)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``x`` of shape [..., in]; fused for speed."""
    x, weight = _lift(x), _lift(weight)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    flat = xd.reshape(-1, xd.shape[-1])
    out = (flat @ wd).reshape(xd.shape[:-1] + (wd.shape[1],))
    if bias is None:
        def rule(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ wd.T).reshape(xd.shape), flat.T @ g2

        return _make(out, (x, weight), rule)
    bias = _lift(bias)
    out = out + bias.data

    def rule_b(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g2 @ wd.T).reshape(xd.shape), flat.T @ g2, g2.sum(axis=0).reshape(bias.shape)

    return _make(out, (x, weight, bias), rule_b)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    span = n + 2 * padding - k
    if span < 0 or span % stride:
        raise ConfigError(
            f"conv2d: size {n} with kernel {k}, stride {stride}, padding {padding} "
            "does not give an integer output size"
        )
    return span // stride + 1


def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [C_in,H,W] (or [B,C_in,H,W]) with [C_out,C_in,k,k]."""
    x, kernels = _lift(x), _lift(kernels)
    if stride < 1 or padding < 0:
        raise ConfigError("conv2d: stride must be positive and padding nonnegative")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    wd = kernels.data
    if xd.ndim != 4 or wd.ndim != 4 or wd.shape[1] != xd.shape[1] or wd.shape[2] != wd.shape[3]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernels {kernels.shape}")
    nb, cin, h, w = xd.shape
    cout, _, k, _ = wd.shape
    ho = _conv_out(h, k, stride, padding)
    wo = _conv_out(w, k, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # [B, Cin, Ho, Wo, k, k]
    out = np.einsum("bchwij,ocij->bohw", windows, wd, optimize=True)
    parents: tuple[Tensor, ...] = (x, kernels)
    if bias is not None:
        bias = _lift(bias)
        out = out + bias.data[None, :, None, None]
        parents = parents + (bias,)

    def rule(g):
        if unbatched:
            g = g.reshape((1,) + g.shape)
        gw = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.einsum(
                    "bohw,oc->bchw", g, wd[:, :, i, j]
                )
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if unbatched:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out[0] if unbatched else out, parents, rule)


# ---------------------------------------------------------------------------
# recurrent
# ---------------------------------------------------------------------------


def lstm_step(x, h, c, w_input, w_hidden, bias) -> tuple[Tensor, Tensor]:
    """One LSTM cell update with gate order (i, f, g, o).

    ``x``: [..., d_in]; ``h``, ``c``: [..., d_h]; ``w_input``: [d_in, 4 d_h];
    ``w_hidden``: [d_h, 4 d_h]; ``bias``: [4 d_h]. Returns ``(h', c')``.
    """
    x, h, c = _lift(x), _lift(h), _lift(c)
    w_input, w_hidden, bias = _lift(w_input), _lift(w_hidden), _lift(bias)
    d_h = h.shape[-1]
    if (
        w_input.shape != (x.shape[-1], 4 * d_h)
        or w_hidden.shape != (d_h, 4 * d_h)
        or bias.shape != (4 * d_h,)
        or c.shape != h.shape
    ):
        raise DimensionError(
            f"lstm_step: x {x.shape}, h {h.shape}, c {c.shape}, "
            f"W_x {w_input.shape}, W_h {w_hidden.shape}, b {bias.shape}"
        )
    xd, hd, cd = x.data, h.data, c.data
    z = xd @ w_input.data + hd @ w_hidden.data + bias.data
    i = _sigmoid(z[..., :d_h])
    f = _sigmoid(z[..., d_h : 2 * d_h])
    g = np.tanh(z[..., 2 * d_h : 3 * d_h])
    o = _sigmoid(z[..., 3 * d_h :])
    c_new = f * cd + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    packed = np.concatenate([h_new, c_new], axis=-1)

    def rule(grad):
        gh = grad[..., :d_h]
        gc = grad[..., d_h:] + gh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                gc * g * i * (1.0 - i),
                gc * cd * f * (1.0 - f),
                gc * i * (1.0 - g * g),
                gh * tc * o * (1.0 - o),
            ],
            axis=-1,
        )
        dz2 = dz.reshape(-1, 4 * d_h)
        gx = dz @ w_input.data.T
        ghp = dz @ w_hidden.data.T
        gcp = gc * f
        gwi = xd.reshape(-1, xd.shape[-1]).T @ dz2
        gwh = hd.reshape(-1, d_h).T @ dz2
        gb = dz2.sum(axis=0)
        return gx, ghp, gcp, gwi, gwh, gb

    out = _make(packed, (x, h, c, w_input, w_hidden, bias), rule)
    return out[..., :d_h], out[..., d_h:]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias-corrected moments; clears gradients after each step."""

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = list(params)
        self.learning_rate = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError(f"parameter {p.name or p.shape} has no gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params: Sequence[Tensor], state: Adam) -> None:
    """Functional alias; ``state`` must track exactly ``params``."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ContractError("optimizer state does not track the given parameters")
    state.step()
