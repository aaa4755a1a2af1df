"""Small convolutional networks built on the autodiff core.

Two architectures cover the pipeline: an embedding network producing
unit-norm feature vectors (teacher and lensless student share it) and a
coordinate regressor for face-center detection. Both are declared through a
compact layer-spec list so tests and configs can vary them without code
changes.

Layer spec strings:
    conv:<out>k<k>[s<stride>][p<pad>]   2-D convolution (pad defaults to k//2)
    relu | sigmoid                      elementwise nonlinearity
    avgpool:<k>                         non-overlapping average pooling
    gap                                 global average pool to (N, C)
    flatten                             flatten to (N, features)
    linear:<out>                        fully connected
    l2norm                              row-wise L2 normalization
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import SpecError

_CONV_RE = re.compile(r"^conv:(\d+)k(\d+)(?:s(\d+))?(?:p(\d+))?$")


@dataclass(frozen=True)
class NetConfig:
    """Declarative network description; validated against an input shape."""

    layers: tuple = ()
    embedding_dim: int = 128

    def with_embedding_head(self) -> "NetConfig":
        """Append the standard embedding head (linear + L2 normalize)."""
        return NetConfig(
            layers=tuple(self.layers) + (f"linear:{self.embedding_dim}", "l2norm"),
            embedding_dim=self.embedding_dim,
        )


def embedding_net_config(embedding_dim: int = 128, widths=(12, 24, 48)) -> NetConfig:
    """Default embedding backbone: strided conv blocks + GAP + linear head.

    Global average pooling keeps the network usable on inputs of any spatial
    size at or above the nominal one, which the raw-capture evaluation needs.
    """
    layers = []
    for width in widths:
        layers += [f"conv:{width}k3s2", "relu"]
    layers += ["gap", f"linear:{embedding_dim}", "l2norm"]
    return NetConfig(layers=tuple(layers), embedding_dim=embedding_dim)


def center_net_config(widths=(8, 16), hidden: int = 64) -> NetConfig:
    """Default face-center regressor: conv features + MLP to (cy, cx) in [0,1]."""
    layers = []
    for width in widths:
        layers += [f"conv:{width}k3s2", "relu"]
    layers += ["flatten", f"linear:{hidden}", "relu", "linear:2", "sigmoid"]
    return NetConfig(layers=tuple(layers), embedding_dim=2)


class _Conv:
    def __init__(self, name, out_ch, k, stride, pad):
        self.name = name
        self.out_ch, self.k, self.stride, self.pad = out_ch, k, stride, pad
        self.w = None
        self.b = None

    def build(self, shape, rng, dtype):
        c, h, w = shape
        std = np.sqrt(2.0 / (c * self.k * self.k))
        self.w = Tensor(
            rng.normal(0.0, std, size=(self.out_ch, c, self.k, self.k)).astype(dtype),
            requires_grad=True,
        )
        self.b = Tensor(np.zeros(self.out_ch, dtype=dtype), requires_grad=True)
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise SpecError(f"{self.name}: output collapses to {ho}x{wo}")
        return (self.out_ch, ho, wo)

    def params(self):
        return [(self.name + ".w", self.w), (self.name + ".b", self.b)]

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, stride=self.stride, padding=self.pad)


class _Linear:
    def __init__(self, name, out_features):
        self.name = name
        self.out_features = out_features
        self.w = None
        self.b = None

    def build(self, shape, rng, dtype):
        if len(shape) != 1:
            raise SpecError(f"{self.name}: linear layer needs flat input, got {shape}")
        (fin,) = shape
        std = np.sqrt(2.0 / fin)
        self.w = Tensor(rng.normal(0.0, std, size=(fin, self.out_features)).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(self.out_features, dtype=dtype), requires_grad=True)
        return (self.out_features,)

    def params(self):
        return [(self.name + ".w", self.w), (self.name + ".b", self.b)]

    def __call__(self, x):
        return x @ self.w + self.b


class _Stateless:
    def __init__(self, name, fn, shape_fn):
        self.name = name
        self.fn = fn
        self.shape_fn = shape_fn

    def build(self, shape, rng, dtype):
        return self.shape_fn(shape)

    def params(self):
        return []

    def __call__(self, x):
        return self.fn(x)


def _parse_layer(spec: str, index: int):
    name = f"layer{index}.{spec.split(':')[0]}"
    m = _CONV_RE.match(spec)
    if m:
        out_ch, k = int(m.group(1)), int(m.group(2))
        stride = int(m.group(3)) if m.group(3) else 1
        pad = int(m.group(4)) if m.group(4) is not None else k // 2
        return _Conv(name, out_ch, k, stride, pad)
    if spec == "relu":
        return _Stateless(name, lambda x: x.relu(), lambda s: s)
    if spec == "sigmoid":
        return _Stateless(name, lambda x: x.sigmoid(), lambda s: s)
    if spec.startswith("avgpool:"):
        k = int(spec.split(":")[1])

        def pool_shape(s):
            c, h, w = s
            if h % k or w % k:
                raise SpecError(f"avgpool:{k} does not divide {h}x{w}")
            return (c, h // k, w // k)

        return _Stateless(name, lambda x: ad.avg_pool2d(x, k), pool_shape)
    if spec == "gap":
        return _Stateless(name, lambda x: x.mean(axis=(2, 3)),
                          lambda s: (s[0],) if len(s) == 3 else _bad(spec, s))
    if spec == "flatten":
        return _Stateless(
            name,
            lambda x: x.reshape(x.shape[0], int(np.prod(x.shape[1:]))),
            lambda s: (int(np.prod(s)),),
        )
    if spec.startswith("linear:"):
        return _Linear(name, int(spec.split(":")[1]))
    if spec == "l2norm":
        return _Stateless(name, ad.l2_normalize_rows, lambda s: s)
    raise SpecError(f"unknown layer spec {spec!r}")


def _bad(spec, shape):
    raise SpecError(f"{spec} applied to incompatible shape {shape}")


class Network:
    """A sequential network instantiated from a NetConfig.

    Construction performs full shape inference over the nominal input shape,
    so malformed specs fail before any training starts.
    """

    def __init__(self, cfg: NetConfig, input_shape, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x6E65])))
        self.layers = [_parse_layer(spec, i) for i, spec in enumerate(cfg.layers)]
        self._fixed_spatial = any(spec == "flatten" for spec in cfg.layers)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
        self.output_shape = shape

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != len(self.input_shape) + 1:
            raise SpecError(
                f"expected batched input with {len(self.input_shape)} sample dims, got shape {x.shape}"
            )
        if x.shape[1] != self.input_shape[0]:
            raise SpecError(f"expected {self.input_shape[0]} channels, got {x.shape[1]}")
        if self._fixed_spatial and tuple(x.shape[2:]) != tuple(self.input_shape[1:]):
            raise SpecError(
                f"network with flatten requires input {self.input_shape}, got {tuple(x.shape[1:])}"
            )
        for layer in self.layers:
            x = layer(x)
        return x

    __call__ = forward

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def state_arrays(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_arrays(self, arrays: dict):
        for name, t in self.named_parameters():
            if name not in arrays:
                raise SpecError(f"missing parameter {name} in state")
            if arrays[name].shape != t.data.shape:
                raise SpecError(
                    f"parameter {name} shape {arrays[name].shape} != expected {t.data.shape}"
                )
            t.data = arrays[name].astype(self.dtype, copy=True)
            t.grad = None


class SkipDecoder:
    """Shallow 4-scale encoder-decoder with additive skips (plaintext attack).

    A stride-2 stem moves all convolution work to half resolution and the
    final nearest-neighbor upsample restores the input size, which keeps the
    attack cheap at desk scale. Input spatial dims must be divisible by 8.
    The output is a linear-valued image batch with ``out_channels`` channels.
    """

    def __init__(self, input_shape, out_channels: int = 3, base: int = 8, seed: int = 0,
                 dtype=np.float32):
        c, h, w = input_shape
        if h % 8 or w % 8:
            raise SpecError(f"decoder input {h}x{w} must be divisible by 8")
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xDEC0])))
        b1, b2, b3 = base, base * 2, base * 4
        self._convs = {}

        def mk(name, cin, cout, stride=1):
            conv = _Conv(name, cout, 3, stride, 1)
            conv.build((cin, 8, 8), rng, self.dtype)
            self._convs[name] = conv
            return conv

        self.enc0 = mk("enc0", c, b1, stride=2)
        self.down1 = mk("down1", b1, b2, stride=2)
        self.down2 = mk("down2", b2, b3, stride=2)
        self.bottleneck = mk("bottleneck", b3, b3)
        self.up2 = mk("up2", b3, b2)
        self.up1 = mk("up1", b2, b1)
        self.out = mk("out", b1, out_channels)

    def forward(self, x: Tensor) -> Tensor:
        e0 = self.enc0(x).relu()
        e1 = self.down1(e0).relu()
        e2 = self.down2(e1).relu()
        d2 = self.bottleneck(e2).relu() + e2
        d1 = self.up2(ad.upsample_nearest2d(d2, 2)).relu() + e1
        d0 = self.up1(ad.upsample_nearest2d(d1, 2)).relu() + e0
        return ad.upsample_nearest2d(self.out(d0), 2)

    __call__ = forward

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_parameters(self):
        out = []
        for name in ("enc0", "down1", "down2", "bottleneck", "up2", "up1", "out"):
            out.extend(self._convs[name].params())
        return out

    def state_arrays(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_arrays(self, arrays: dict):
        for name, t in self.named_parameters():
            t.data = arrays[name].astype(self.dtype, copy=True)
            t.grad = None
