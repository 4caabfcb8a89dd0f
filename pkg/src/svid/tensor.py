"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is exactly what the encoder-decoder denoiser and its losses
need: 2-D cross-correlation, leaky ReLU, 2x average pooling, 2x
nearest-neighbor upsampling, channel concatenation, same-shape elementwise
arithmetic, mean-squared error, and a stop-gradient barrier. Image batches
are laid out NCHW.

Graphs are built eagerly by the op functions and consumed once by
:func:`backward`; calling backward a second time on a graph that shares
already-consumed nodes raises :class:`GraphError` rather than silently
accumulating. Leaf ``grad`` buffers do accumulate across independent
graphs; callers reset them with :func:`zero_grad` between steps.

Everything here is deterministic: identical inputs produce bitwise
identical forward values and gradients.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import GraphError, ShapeError


class Tensor:
    """A float64 array plus its position in a differentiation graph.

    ``grad`` is populated (same shape as ``data``) during backward for
    every tensor with ``requires_grad``. Data buffers are treated as
    immutable once an op has consumed them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable] = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no graph history, no gradient requirement."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Same-shape elementwise arithmetic (no broadcasting by contract;
    # scalars are the one exception).
    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __radd__(self, other):
        return add(_as_tensor(other, self.shape), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(value, shape) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape == ():
        arr = np.full(shape, float(arr))
    return Tensor(arr)


def _make_node(out_data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(out_data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes differ: {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# Array-level primitives. The Tensor ops below and the graph-free network
# prediction path both call these, so the two paths are bitwise identical.
# ---------------------------------------------------------------------------


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    out[:, :, p : p + h, p : p + w] = x
    return out


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided (N, C, Ho, Wo, kh, kw) view over a padded NCHW array."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    ns, cs, hs, ws = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, ho, wo, kh, kw), (ns, cs, stride * hs, stride * ws, hs, ws)
    )


def _dilate2d(x: np.ndarray, s: int) -> np.ndarray:
    if s == 1:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, (h - 1) * s + 1, (w - 1) * s + 1), dtype=x.dtype)
    out[:, :, ::s, ::s] = x
    return out


def conv2d_shape(in_shape, w_shape, stride: int, padding: int):
    """Validate a conv, returning the output shape (N, Cout, Ho, Wo)."""
    if len(in_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(
            f"conv2d: expected 4-D input and weight, got input {tuple(in_shape)} and weight {tuple(w_shape)}"
        )
    n, c, h, w = in_shape
    cout, cin, kh, kw = w_shape
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d: padding must be >= 0, got {padding}")
    if cin != c:
        raise ShapeError(
            f"conv2d: input channels {c} (input {tuple(in_shape)}) do not match "
            f"weight channels {cin} (weight {tuple(w_shape)})"
        )
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(
            f"conv2d: kernel {tuple(w_shape)} does not fit padded input {tuple(in_shape)} with padding {padding}"
        )
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ShapeError(
            f"conv2d: padded input {(hp, wp)} minus kernel {(kh, kw)} is not divisible by stride {stride}"
        )
    return n, cout, (hp - kh) // stride + 1, (wp - kw) // stride + 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int) -> np.ndarray:
    conv2d_shape(x.shape, w.shape, stride, padding)
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match out channels ({w.shape[0]},)")
    xp = _pad2d(x, padding)
    win = _windows(xp, w.shape[2], w.shape[3], stride)
    # (N, Ho, Wo, Cout) <- contract over (Cin, kh, kw); tensordot lowers to BLAS
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += b[None, :, None, None]
    return out


def conv2d_backward_w(xp: np.ndarray, g: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = _windows(xp, kh, kw, stride)
    # (Cin, kh, kw, Cout) <- contract over (N, Ho, Wo)
    dw = np.tensordot(win, g, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(dw.transpose(3, 0, 1, 2))


def conv2d_backward_x(g: np.ndarray, w: np.ndarray, in_shape, stride: int, padding: int) -> np.ndarray:
    n, c, h, wd = in_shape
    cout, cin, kh, kw = w.shape
    # Dilate by the forward stride, pad by kernel-1, then correlate with
    # the 180-degree-rotated kernel: the adjoint of the forward pass.
    gd = _dilate2d(g, stride)
    nn, cc, hh, ww = gd.shape
    padded = np.zeros((nn, cc, hh + 2 * (kh - 1), ww + 2 * (kw - 1)), dtype=g.dtype)
    padded[:, :, kh - 1 : kh - 1 + hh, kw - 1 : kw - 1 + ww] = gd
    win = _windows(padded, kh, kw, 1)
    rot = w[:, :, ::-1, ::-1]
    dxp = np.tensordot(win, rot, axes=([1, 4, 5], [0, 2, 3]))
    dxp = np.ascontiguousarray(dxp.transpose(0, 3, 1, 2))
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + wd])
    return dxp


def leaky_relu_forward(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def avgpool2x_forward(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"downsample2x: spatial dims must be even, got {(h, w)}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def upsample2x_forward(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def concat_channels_forward(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels: expected 4-D operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: N/H/W mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


# ---------------------------------------------------------------------------
# Graph ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with per-output-channel bias.

    Output spatial extent is (H + 2*padding - kh) / stride + 1; the
    division must be exact. Differentiable in input, weight, and bias.
    """
    out_data = conv2d_forward(x.data, weight.data, bias.data, stride, padding)
    xp = _pad2d(x.data, padding)
    kh, kw = weight.data.shape[2], weight.data.shape[3]
    w_data = weight.data
    in_shape = x.data.shape

    def backward_fn(g):
        gx = conv2d_backward_x(g, w_data, in_shape, stride, padding) if x.requires_grad else None
        gw = conv2d_backward_w(xp, g, kh, kw, stride) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return gx, gw, gb

    return _make_node(out_data, (x, weight, bias), backward_fn)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """Elementwise max(v, slope*v); the subgradient at 0 is the slope."""
    if not 0.0 <= slope < 1.0:
        raise ShapeError(f"leaky_relu: slope must be in [0, 1), got {slope}")
    out_data = leaky_relu_forward(x.data, slope)
    mask = np.where(x.data > 0.0, 1.0, slope)

    def backward_fn(g):
        return (g * mask,)

    return _make_node(out_data, (x,), backward_fn)


def downsample2x(x: Tensor) -> Tensor:
    """2x2 average pooling; spatial dims must be even."""
    out_data = avgpool2x_forward(x.data)

    def backward_fn(g):
        return (upsample2x_forward(g) * 0.25,)

    return _make_node(out_data, (x,), backward_fn)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling."""
    out_data = upsample2x_forward(x.data)

    def backward_fn(g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return _make_node(out_data, (x,), backward_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two NCHW tensors along the channel axis; grads route back."""
    out_data = concat_channels_forward(a.data, b.data)
    ca = a.data.shape[1]

    def backward_fn(g):
        return g[:, :ca], g[:, ca:]

    return _make_node(out_data, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def backward_fn(g):
        return g, g

    return _make_node(a.data + b.data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)

    def backward_fn(g):
        return g, -g

    return _make_node(a.data - b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward_fn(g):
        return g * bd, g * ad

    return _make_node(ad * bd, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    def backward_fn(g):
        return (g * c,)

    return _make_node(a.data * c, (a,), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    """Sum over all elements, producing a scalar."""

    def backward_fn(g):
        return (np.full(a.data.shape, float(g.reshape(()))),)

    return _make_node(a.data.sum(), (a,), backward_fn)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences (mean, not sum, so the magnitude is
    invariant to crop size)."""
    _check_same_shape("mse", a, b)
    diff = a.data - b.data
    n = diff.size

    def backward_fn(g):
        gs = float(g.reshape(())) * 2.0 / n
        return gs * diff, -gs * diff

    return _make_node(np.mean(diff * diff), (a, b), backward_fn)


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity that contributes exactly zero gradient upstream.

    The result shares the input's values bitwise but has no parents, so
    backward traversal never reaches anything behind it.
    """
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# Backward pass and verification
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    order: list[Tensor] = []
    seen = set()
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


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss.

    Each graph node may be consumed once; reuse raises GraphError. Leaf
    grads accumulate into existing buffers (zero them between steps).
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("backward: loss does not require grad; nothing to differentiate")
    order = _topo_order(loss)
    for node in order:
        if node._backward_fn is not None and node._consumed:
            raise GraphError("backward: graph already consumed by a previous backward call")
    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    for node in reversed(order):
        if node._backward_fn is None:
            continue
        grads = node._backward_fn(node.grad)
        node._consumed = True
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def reachable(loss: Tensor, leaf: Tensor) -> bool:
    """True if ``leaf`` is connected to ``loss`` through differentiable
    edges (stop-gradient nodes sever the path)."""
    return any(node is leaf for node in _topo_order(loss))


def finite_diff_check(f: Callable[[Tensor], Tensor], at: Tensor, eps: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference
    gradients of a scalar-valued ``f`` with respect to ``at``.

    Relative error per coordinate is |a - n| / (|a| + |n| + 1e-12). If
    ``at`` only reaches the output through a stop-gradient (its analytic
    gradient is zero by contract, not calculus) the check is skipped and
    0.0 returned. A leaf feeding the loss both through and around a
    stop-gradient is outside this checker's domain: the difference
    quotient sees the detached path too.
    """
    if not at.requires_grad:
        raise GraphError("finite_diff_check: `at` must require grad")
    at.grad = None
    out = f(at)
    if out.data.size != 1:
        raise GraphError(f"finite_diff_check: f must be scalar-valued, got shape {out.data.shape}")
    if not out.requires_grad or not reachable(out, at):
        return 0.0
    backward(out)
    analytic = at.grad.copy()
    flat = at.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(at).item()
        flat[i] = orig - eps
        lo = f(at).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)
    numeric = numeric.reshape(at.data.shape)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(rel.max())
