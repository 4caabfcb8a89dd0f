"""The denoiser: a small configurable U-Net mapping NCHW batches to
equally-shaped restored batches.

Architecture: ``depth`` encoder levels of two 3x3 conv + leaky-ReLU pairs
with 2x average pooling between levels, a symmetric decoder using
nearest-neighbor upsampling followed by a 3x3 conv (no transposed convs)
and skip concatenations, then a final linear 3x3 conv back to the input
channel count. The network predicts the restored image directly, not the
noise. No normalization layers: the training batch size is 1, which makes
batch statistics degenerate.

Initialization is He fan-in normal with zero biases, drawn from a
generator seeded by the config, so (config, seed) fully determines the
initial parameters bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError, ValidationError
from .tensor import Tensor


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    base_channels: int = 16
    depth: int = 3
    kernel: int = 3
    slope: float = 0.1
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.in_channels < 1:
            problems.append(f"in_channels must be >= 1, got {self.in_channels}")
        if self.base_channels < 1:
            problems.append(f"base_channels must be >= 1, got {self.base_channels}")
        if self.depth < 1:
            problems.append(f"depth must be >= 1, got {self.depth}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            problems.append(f"kernel must be odd and >= 1, got {self.kernel}")
        if not 0.0 <= self.slope < 1.0:
            problems.append(f"slope must be in [0, 1), got {self.slope}")
        if problems:
            raise ValidationError("invalid UNetConfig: " + "; ".join(problems), problems)

    @property
    def divisor(self) -> int:
        """Required divisibility of input spatial dims."""
        return 2 ** (self.depth - 1)


def layer_channel_plan(cfg: UNetConfig):
    """Ordered (name, cin, cout) conv specs; the architecture in data form.

    Parameter count and build order both derive from this single plan.
    """
    c = cfg.base_channels
    plan = []
    for i in range(cfg.depth):
        cin = cfg.in_channels if i == 0 else c * 2 ** (i - 1)
        cout = c * 2**i
        plan.append((f"enc{i}.conv1", cin, cout))
        plan.append((f"enc{i}.conv2", cout, cout))
    for i in range(cfg.depth - 2, -1, -1):
        upper = c * 2 ** (i + 1)
        lower = c * 2**i
        plan.append((f"dec{i}.up", upper, lower))
        plan.append((f"dec{i}.conv1", 2 * lower, lower))
        plan.append((f"dec{i}.conv2", lower, lower))
    plan.append(("out", c, cfg.in_channels))
    return plan


class Network:
    """Parameter set for one U-Net; mutated only by optimizer updates."""

    def __init__(self, config: UNetConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def param_items(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def clone(self) -> "Network":
        return Network(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.params.items()},
        )

    def forward(self, y: Tensor) -> Tensor:
        return forward(self, y)

    def predict(self, y: np.ndarray) -> np.ndarray:
        """Graph-free forward pass; bitwise identical to :func:`forward`."""
        _check_input(self.config, y.shape)
        return _run(self, _ArrayOps, np.asarray(y, dtype=np.float64))


def build(config: UNetConfig) -> Network:
    """Construct a freshly initialized network from a config."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(config.seed)))
    k = config.kernel
    params: dict[str, Tensor] = {}
    for name, cin, cout in layer_channel_plan(config):
        fan_in = cin * k * k
        std = np.sqrt(2.0 / fan_in)
        params[f"{name}.w"] = Tensor(rng.standard_normal((cout, cin, k, k)) * std, requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)
    return Network(config, params)


def _check_input(cfg: UNetConfig, shape) -> None:
    if len(shape) != 4:
        raise ShapeError(f"forward: expected NCHW input, got shape {tuple(shape)}")
    n, c, h, w = shape
    if c != cfg.in_channels:
        raise ShapeError(f"forward: input has {c} channels, network expects {cfg.in_channels}")
    d = cfg.divisor
    if h % d or w % d:
        pad_h = (d - h % d) % d
        pad_w = (d - w % d) % d
        raise ShapeError(
            f"forward: spatial dims {(h, w)} must be divisible by {d} for depth {cfg.depth}; "
            f"pad by ({pad_h}, {pad_w}) to {(h + pad_h, w + pad_w)}"
        )


class _TensorOps:
    """Primitives building the differentiation graph."""

    wrap = staticmethod(lambda arr: Tensor(arr))
    conv = staticmethod(lambda x, w, b, pad: T.conv2d(x, w, b, stride=1, padding=pad))
    act = staticmethod(T.leaky_relu)
    down = staticmethod(T.downsample2x)
    up = staticmethod(T.upsample2x)
    cat = staticmethod(T.concat_channels)


class _ArrayOps:
    """The same primitives on raw arrays (no graph)."""

    wrap = staticmethod(lambda arr: arr)
    conv = staticmethod(lambda x, w, b, pad: T.conv2d_forward(x, w, b, stride=1, padding=pad))
    act = staticmethod(T.leaky_relu_forward)
    down = staticmethod(T.avgpool2x_forward)
    up = staticmethod(T.upsample2x_forward)
    cat = staticmethod(T.concat_channels_forward)


def _run(net: Network, ops, x):
    cfg = net.config
    pad = cfg.kernel // 2
    tensor_mode = ops is _TensorOps

    def p(name):
        t = net.params[name]
        return (t.data if not tensor_mode else t)

    def block(x, name):
        x = ops.act(ops.conv(x, p(f"{name}.conv1.w"), p(f"{name}.conv1.b"), pad), cfg.slope)
        x = ops.act(ops.conv(x, p(f"{name}.conv2.w"), p(f"{name}.conv2.b"), pad), cfg.slope)
        return x

    skips = []
    for i in range(cfg.depth):
        if i > 0:
            x = ops.down(x)
        x = block(x, f"enc{i}")
        skips.append(x)
    for i in range(cfg.depth - 2, -1, -1):
        x = ops.up(x)
        x = ops.act(ops.conv(x, p(f"dec{i}.up.w"), p(f"dec{i}.up.b"), pad), cfg.slope)
        x = ops.cat(skips[i], x)
        x = block(x, f"dec{i}")
    return ops.conv(x, p("out.w"), p("out.b"), pad)


def forward(net: Network, y: Tensor) -> Tensor:
    """Run the denoiser, building the differentiation graph.

    Output shape equals input shape; spatial dims must be divisible by
    2**(depth-1).
    """
    _check_input(net.config, y.data.shape)
    return _run(net, _TensorOps, y)
