"""Encoder-decoder segmentation network on fused RGB + motion input.

Parameters live in an ordered ``dict`` of float32 arrays named
``"<layer>.weight"`` / ``"<layer>.bias"``. The forward pass returns an
activation cache that :func:`backward` consumes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import tensorops as ops

CHECKPOINT_MAGIC = b"FUNT"
CHECKPOINT_VERSION = 1
# pad the 2x2 up-convolution on the bottom/right only so extents are preserved
UPCONV_PADDING = (0, 0, 1, 1)


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class FUNetConfig:
    in_channels: int = 4
    widths: tuple = (16, 32)
    bottleneck: int = 64
    out_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths:
            raise ValueError("need at least one encoder stage")
        if min(self.widths + (self.bottleneck, self.in_channels, self.out_channels)) <= 0:
            raise ValueError(f"all widths must be positive: {self}")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def divisor(self) -> int:
        return 2**self.depth

    def to_text(self) -> str:
        return (
            f"in_channels={self.in_channels}\n"
            f"widths={','.join(str(w) for w in self.widths)}\n"
            f"bottleneck={self.bottleneck}\n"
            f"out_channels={self.out_channels}\n"
            f"depth={self.depth}\n"
        )


class Layer(NamedTuple):
    name: str
    cin: int
    cout: int
    kernel: int
    padding: object


def layer_plan(config: FUNetConfig) -> list[Layer]:
    """All conv layers in parameter order."""
    layers = []
    cin = config.in_channels
    for i, w in enumerate(config.widths, start=1):
        layers += [Layer(f"enc{i}.conv1", cin, w, 3, 1), Layer(f"enc{i}.conv2", w, w, 3, 1)]
        cin = w
    b = config.bottleneck
    layers += [Layer("bottleneck.conv1", cin, b, 3, 1), Layer("bottleneck.conv2", b, b, 3, 1)]
    below = b
    for i in range(config.depth, 0, -1):
        w = config.widths[i - 1]
        layers += [
            Layer(f"up{i}.conv", below, w, 2, UPCONV_PADDING),
            Layer(f"dec{i}.conv1", 2 * w, w, 3, 1),
            Layer(f"dec{i}.conv2", w, w, 3, 1),
        ]
        below = w
    layers.append(Layer("head", below, config.out_channels, 1, 0))
    return layers


def param_shapes(config: FUNetConfig) -> dict:
    shapes = {}
    for layer in layer_plan(config):
        shapes[f"{layer.name}.weight"] = (layer.cout, layer.cin, layer.kernel, layer.kernel)
        shapes[f"{layer.name}.bias"] = (layer.cout,)
    return shapes


def param_count(config: FUNetConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


class LCG64:
    """Knuth's MMIX 64-bit linear congruential generator.

    Used for weight initialisation so parameters are identical on every
    platform and numpy version.
    """

    MULTIPLIER = 6364136223846793005
    INCREMENT = 1442695040888963407
    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = int(seed) & self.MASK

    def next_u64(self) -> int:
        self.state = (self.MULTIPLIER * self.state + self.INCREMENT) & self.MASK
        return self.state

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) from the top 53 bits of successive states."""
        out = np.empty(n, dtype=np.float64)
        a, c, m, s = self.MULTIPLIER, self.INCREMENT, self.MASK, self.state
        for k in range(n):
            s = (a * s + c) & m
            out[k] = (s >> 11) * (1.0 / (1 << 53))
        self.state = s
        return out


def init_params(config: FUNetConfig = FUNetConfig(), seed: int = 0) -> dict:
    """He-uniform weights in ``+-sqrt(6 / fan_in)``, zero biases."""
    rng = LCG64(seed)
    params = {}
    for layer in layer_plan(config):
        shape = (layer.cout, layer.cin, layer.kernel, layer.kernel)
        bound = np.sqrt(6.0 / (layer.cin * layer.kernel * layer.kernel))
        u = rng.uniform(int(np.prod(shape)))
        params[f"{layer.name}.weight"] = ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(shape)
        params[f"{layer.name}.bias"] = np.zeros(layer.cout, dtype=np.float32)
    return params


def check_input(x, config: FUNetConfig) -> None:
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise ValueError(f"expected (N, {config.in_channels}, H, W) input, got {x.shape}")
    h, w = x.shape[2:]
    if h % config.divisor or w % config.divisor:
        raise ValueError(f"input extents {h}x{w} must be divisible by {config.divisor}")


def _conv(params, layer: Layer, x, cache):
    z = ops.conv2d_forward(x, params[f"{layer.name}.weight"], params[f"{layer.name}.bias"], padding=layer.padding)
    cache[layer.name] = x
    return z


def forward(params: dict, x: np.ndarray, config: FUNetConfig = FUNetConfig()):
    """Return ``(logits (N, out, H, W), cache)``."""
    check_input(x, config)
    plan = {layer.name: layer for layer in layer_plan(config)}
    cache = {}

    def double_conv(stage, h):
        for j in (1, 2):
            name = f"{stage}.conv{j}"
            z = _conv(params, plan[name], h, cache)
            cache[name + ".pre"] = z
            h = ops.relu_forward(z)
        return h

    skips = []
    h = x
    for i in range(1, config.depth + 1):
        h = double_conv(f"enc{i}", h)
        skips.append(h)
        h, cache[f"pool{i}"] = ops.maxpool2x2_forward(h)
    h = double_conv("bottleneck", h)
    for i in range(config.depth, 0, -1):
        h = _conv(params, plan[f"up{i}.conv"], ops.upsample2x_nearest(h), cache)
        h = ops.concat_channels(skips[i - 1], h)
        h = double_conv(f"dec{i}", h)
    logits = _conv(params, plan["head"], h, cache)
    return logits, cache


def backward(params: dict, cache: dict, grad_logits: np.ndarray, config: FUNetConfig = FUNetConfig()) -> dict:
    """Gradients of the loss w.r.t. every parameter, keyed like ``params``."""
    plan = {layer.name: layer for layer in layer_plan(config)}
    grads = {}

    def conv_back(name, g):
        layer = plan[name]
        x = cache[name]
        w = params[f"{name}.weight"]
        try:
            res = ops.conv2d_backward(x, w, g, padding=layer.padding)
        except ValueError as exc:
            raise ValueError(f"{name}: {exc} (stale cache?)") from None
        grads[f"{name}.weight"] = res.weight.astype(w.dtype, copy=False)
        grads[f"{name}.bias"] = res.bias.astype(w.dtype, copy=False)
        return res.input

    def double_conv_back(stage, g):
        for j in (2, 1):
            name = f"{stage}.conv{j}"
            g = ops.relu_backward(cache[name + ".pre"], g)
            g = conv_back(name, g)
        return g

    g = conv_back("head", grad_logits)
    skip_grads = {}
    for i in range(1, config.depth + 1):
        g = double_conv_back(f"dec{i}", g)
        w = config.widths[i - 1]
        skip_grads[i], g = ops.split_channels(g, w)
        g = conv_back(f"up{i}.conv", g)
        g = ops.upsample2x_backward(g)
    g = double_conv_back("bottleneck", g)
    for i in range(config.depth, 0, -1):
        g = ops.maxpool2x2_backward(cache[f"pool{i}"], g)
        g = g + skip_grads[i]
        g = double_conv_back(f"enc{i}", g)
    return {name: grads[name] for name in params}


def predict_logits(params: dict, x: np.ndarray, config: FUNetConfig = FUNetConfig()) -> np.ndarray:
    return forward(params, x, config)[0]


def save_checkpoint(params: dict, path, config: FUNetConfig | None = None) -> None:
    """Write the binary checkpoint, plus a ``<path>.config`` text sidecar when ``config`` is given."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name, value in params.items():
        encoded = name.encode("utf-8")
        value = np.asarray(value)
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))
    if config is not None:
        Path(sidecar_path(path)).write_text(config.to_text())


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".config")


def read_sidecar(path) -> dict:
    """Parse a ``key=value`` sidecar into a dict of strings."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def config_from_sidecar(path) -> FUNetConfig:
    fields = read_sidecar(path)
    try:
        return FUNetConfig(
            in_channels=int(fields["in_channels"]),
            widths=tuple(int(w) for w in fields["widths"].split(",")),
            bottleneck=int(fields["bottleneck"]),
            out_channels=int(fields["out_channels"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: sidecar missing field {exc.args[0]}") from None


def load_checkpoint(path, config: FUNetConfig | None = None) -> dict:
    """Read a checkpoint.

    Shapes are validated against ``config``, or against the sidecar config when
    one sits next to the file. Without either the raw tensors are returned.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    magic = take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"{name} rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} extents"))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * n, f"{name} data"), dtype="<f4")
        params[name] = data.astype(np.float32).reshape(shape)
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")

    if config is None and sidecar_path(path).is_file():
        config = config_from_sidecar(sidecar_path(path))
    if config is not None:
        expected = param_shapes(config)
        if list(expected) != list(params):
            raise CheckpointError(f"{path}: parameter names do not match config")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, config expects {shape}")
    return params
