"""Network descriptions, composite fire layers, and forward execution.

A network is described by a small line-oriented text format::

    input 3x24x24
    conv out=16 k=3            # pad defaults to k // 2, s to 1
    prelu
    maxpool k=2 s=2
    fire s=8 e1=16 e3=16 e5=8  # e5 makes it an extended fire module
    conv out=16 k=3 binary
    fc out=2
    softmax

An optional ``classes <n>`` line pins the class count; otherwise it is the
size of the final layer's output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .binary import BinarizedFilterBank, binarize_weights, xnor_conv_forward
from .errors import FormatError, ShapeError
from .kernels import ConvParams, out_size
from .tensor import DTYPE, channel_concat

KINDS = ("conv", "fire", "extended_fire", "maxpool", "relu", "prelu", "fc", "softmax")
CONV_KINDS = ("conv", "fire", "extended_fire")
PRELU_INIT = 0.25

Shape = tuple[int, int, int]


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int = 0
    k: int = 0
    stride: int = 1
    pad: int = 0
    s: int = 0
    e1: int = 0
    e3: int = 0
    e5: int = 0
    binary: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.binary and self.kind not in CONV_KINDS:
            raise ShapeError(f"{self.kind} layers cannot be binary")
        if self.kind in ("conv", "fc") and self.out < 1:
            raise ShapeError(f"{self.kind} needs out >= 1")
        if self.kind in ("conv", "maxpool") and (self.k < 1 or self.stride < 1 or self.pad < 0):
            raise ShapeError(f"{self.kind} needs k >= 1, s >= 1, pad >= 0")
        if self.kind in ("fire", "extended_fire") and min(self.s, self.e1, self.e3) < 1:
            raise ShapeError("fire needs s, e1, e3 >= 1")
        if self.kind == "extended_fire" and self.e5 < 1:
            raise ShapeError("extended fire needs e5 >= 1")
        if self.kind == "fire" and self.e5:
            raise ShapeError("plain fire modules have no e5 branch")

    @property
    def expand_channels(self) -> int:
        return self.e1 + self.e3 + self.e5


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: Shape
    layers: tuple[LayerSpec, ...]
    classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    @classmethod
    def build(cls, input_shape: Shape, layers: Sequence[LayerSpec],
              classes: int | None = None) -> "NetworkSpec":
        """Shape-check ``layers`` and fill in the class count if omitted."""
        shapes = infer_shapes(input_shape, layers)
        produced = math.prod(shapes[-1])
        if classes is None:
            classes = produced
        elif produced != classes:
            raise ShapeError(f"network produces {produced} outputs but declares {classes} classes")
        return cls(tuple(input_shape), tuple(layers), classes)

    def shapes(self) -> list[Shape]:
        return infer_shapes(self.input_shape, self.layers)

    def to_text(self) -> str:
        return format_netspec(self)


def _layer_out(layer: LayerSpec, shape: Shape) -> Shape:
    c, h, w = shape
    kind = layer.kind
    if kind == "conv":
        return (layer.out, out_size(h, layer.k, layer.stride, layer.pad),
                out_size(w, layer.k, layer.stride, layer.pad))
    if kind in ("fire", "extended_fire"):
        return (layer.expand_channels, h, w)
    if kind == "maxpool":
        if layer.k > h or layer.k > w:
            raise ShapeError(f"pool window {layer.k} exceeds input {h}x{w}")
        return (c, out_size(h, layer.k, layer.stride, 0), out_size(w, layer.k, layer.stride, 0))
    if kind == "fc":
        return (layer.out, 1, 1)
    return shape


def infer_shapes(input_shape: Shape, layers: Sequence[LayerSpec]) -> list[Shape]:
    """Output shape of the input and of every layer, in order."""
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise ShapeError(f"input shape must be CxHxW with positive extents, got {input_shape}")
    if not layers:
        raise ShapeError("network has no layers")
    shapes = [tuple(input_shape)]
    for i, layer in enumerate(layers):
        try:
            shapes.append(_layer_out(layer, shapes[-1]))
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
    return shapes


# -- text format ---------------------------------------------------------

_ALLOWED = {
    "conv": {"out", "k", "s", "pad"},
    "fire": {"s", "e1", "e3", "e5"},
    "maxpool": {"k", "s"},
    "fc": {"out"},
    "relu": set(),
    "prelu": set(),
    "softmax": set(),
}
_REQUIRED = {"conv": {"out", "k"}, "fire": {"s", "e1", "e3"}, "maxpool": {"k"}, "fc": {"out"}}


def _parse_layer(words: list[str], lineno: int) -> LayerSpec:
    kind = words[0]
    if kind not in _ALLOWED:
        raise FormatError(f"unknown layer kind {kind!r}", lineno)
    opts: dict[str, int] = {}
    binary = False
    for tok in words[1:]:
        if tok == "binary":
            binary = True
            continue
        key, eq, val = tok.partition("=")
        if not eq or key not in _ALLOWED[kind]:
            raise FormatError(f"unexpected token {tok!r} for {kind}", lineno)
        try:
            opts[key] = int(val)
        except ValueError:
            raise FormatError(f"{key} must be an integer, got {val!r}", lineno) from None
    missing = _REQUIRED.get(kind, set()) - opts.keys()
    if missing:
        raise FormatError(f"{kind} is missing {', '.join(sorted(missing))}", lineno)
    try:
        if kind == "conv":
            return LayerSpec("conv", out=opts["out"], k=opts["k"], stride=opts.get("s", 1),
                             pad=opts.get("pad", opts["k"] // 2), binary=binary)
        if kind == "fire":
            e5 = opts.get("e5", 0)
            return LayerSpec("extended_fire" if "e5" in opts else "fire", s=opts["s"],
                             e1=opts["e1"], e3=opts["e3"], e5=e5, binary=binary)
        if kind == "maxpool":
            return LayerSpec("maxpool", k=opts["k"], stride=opts.get("s", 1))
        if kind == "fc":
            return LayerSpec("fc", out=opts["out"], binary=binary)
        return LayerSpec(kind, binary=binary)
    except ShapeError as exc:
        raise FormatError(str(exc), lineno) from None


def parse_netspec(text: str, classes: int | None = None) -> NetworkSpec:
    """Parse and shape-check a netspec; errors carry the offending line."""
    input_shape = None
    layers: list[LayerSpec] = []
    linenos: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        for stmt in raw.split("#", 1)[0].split(";"):
            words = stmt.split()
            if not words:
                continue
            if words[0] == "input":
                if input_shape is not None or layers:
                    raise FormatError("input must appear once, before any layer", lineno)
                try:
                    dims = tuple(int(v) for v in words[1].lower().split("x")) if len(words) == 2 else ()
                except ValueError:
                    dims = ()
                if len(dims) != 3:
                    raise FormatError("expected 'input CxHxW'", lineno)
                input_shape = dims
                input_line = lineno
            elif words[0] == "classes":
                if len(words) != 2 or not words[1].isdigit():
                    raise FormatError("expected 'classes <n>'", lineno)
                if classes is None:
                    classes = int(words[1])
            else:
                if input_shape is None:
                    raise FormatError("layer before the input line", lineno)
                layers.append(_parse_layer(words, lineno))
                linenos.append(lineno)
    if input_shape is None:
        raise FormatError("missing input line", 1)
    if not layers:
        raise FormatError("network has no layers", input_line)
    if min(input_shape) < 1:
        raise FormatError("input extents must be positive", input_line)
    shapes = [input_shape]
    for layer, lineno in zip(layers, linenos):
        try:
            shapes.append(_layer_out(layer, shapes[-1]))
        except ShapeError as exc:
            raise FormatError(f"{layer.kind}: {exc}", lineno) from None
    produced = math.prod(shapes[-1])
    if classes is not None and produced != classes:
        raise FormatError(f"network produces {produced} outputs but declares {classes} classes",
                          linenos[-1])
    return NetworkSpec(input_shape, tuple(layers), classes if classes is not None else produced)


def format_layer(layer: LayerSpec) -> str:
    kind = layer.kind
    if kind == "conv":
        text = f"conv out={layer.out} k={layer.k} s={layer.stride} pad={layer.pad}"
    elif kind in ("fire", "extended_fire"):
        text = f"fire s={layer.s} e1={layer.e1} e3={layer.e3}"
        if kind == "extended_fire":
            text += f" e5={layer.e5}"
    elif kind == "maxpool":
        text = f"maxpool k={layer.k} s={layer.stride}"
    elif kind == "fc":
        text = f"fc out={layer.out}"
    else:
        text = kind
    return text + (" binary" if layer.binary else "")


def format_netspec(net: NetworkSpec) -> str:
    c, h, w = net.input_shape
    lines = [f"input {c}x{h}x{w}", f"classes {net.classes}"]
    lines += [format_layer(layer) for layer in net.layers]
    return "\n".join(lines) + "\n"


# -- validation and accounting -------------------------------------------

def validate_binarization(net: NetworkSpec) -> list[str]:
    """Warn about binary flags on the first or last convolution layer.

    Binarizing the outermost convolutions loses too much information to be
    worth it; this is advisory, so nothing is raised.
    """
    conv_idx = [i for i, layer in enumerate(net.layers) if layer.kind in CONV_KINDS]
    if not conv_idx:
        return []
    warnings = []
    for pos, i in (("first", conv_idx[0]), ("last", conv_idx[-1])):
        if net.layers[i].binary and (pos == "first" or i != conv_idx[0]):
            warnings.append(f"layer {i} ({net.layers[i].kind}) is binary but is the {pos}"
                            " convolution layer; binarizing it costs accuracy")
    return warnings


def _fire_branches(layer: LayerSpec) -> list[tuple[int, int]]:
    """(out_channels, kernel) for each expand branch."""
    branches = [(layer.e1, 1), (layer.e3, 3)]
    if layer.kind == "extended_fire":
        branches.append((layer.e5, 5))
    return branches


def param_shapes(net: NetworkSpec) -> list[list[tuple[int, ...]]]:
    """Shapes of every trainable tensor, per layer, weights before bias."""
    shapes = net.shapes()
    out = []
    for layer, (c, h, w) in zip(net.layers, shapes):
        if layer.kind == "conv":
            out.append([(layer.out, c, layer.k, layer.k), (layer.out,)])
        elif layer.kind in ("fire", "extended_fire"):
            group = [(layer.s, c, 1, 1), (layer.s,)]
            for e, k in _fire_branches(layer):
                group += [(e, layer.s, k, k), (e,)]
            out.append(group)
        elif layer.kind == "prelu":
            out.append([(c,)])
        elif layer.kind == "fc":
            out.append([(layer.out, c * h * w), (layer.out,)])
        else:
            out.append([])
    return out


def count_params(net: NetworkSpec) -> int:
    return sum(math.prod(s) for group in param_shapes(net) for s in group)


def estimate_macs(net: NetworkSpec) -> int:
    """Multiply-accumulates of one forward pass (conv, fire and fc only)."""
    shapes = net.shapes()
    total = 0
    for layer, (c, h, w), (co, ho, wo) in zip(net.layers, shapes, shapes[1:]):
        if layer.kind == "conv":
            total += co * ho * wo * c * layer.k * layer.k
        elif layer.kind in ("fire", "extended_fire"):
            total += h * w * c * layer.s
            total += sum(h * w * layer.s * e * k * k for e, k in _fire_branches(layer))
        elif layer.kind == "fc":
            total += c * h * w * layer.out
    return total


def init_params(net: NetworkSpec, rng: np.random.Generator) -> list[list[np.ndarray]]:
    """Glorot-uniform weights, zero biases, PReLU slopes at 0.25."""
    params = []
    for layer, group in zip(net.layers, param_shapes(net)):
        tensors = []
        if layer.kind == "prelu":
            tensors.append(np.full(group[0], PRELU_INIT, dtype=DTYPE))
        else:
            for shape in group:
                if len(shape) == 1:
                    tensors.append(np.zeros(shape, dtype=DTYPE))
                    continue
                receptive = math.prod(shape[2:])
                limit = math.sqrt(6.0 / (shape[1] * receptive + shape[0] * receptive))
                tensors.append(rng.uniform(-limit, limit, size=shape).astype(DTYPE))
        params.append(tensors)
    return params


def check_params(net: NetworkSpec, params) -> None:
    expected = param_shapes(net)
    if len(params) != len(expected):
        raise ShapeError(f"weights cover {len(params)} layers, network has {len(expected)}")
    for i, (group, shapes) in enumerate(zip(params, expected)):
        got = [tuple(np.shape(t)) for t in group]
        if got != [tuple(s) for s in shapes]:
            raise ShapeError(f"layer {i} ({net.layers[i].kind}): weight shapes {got} != {shapes}")


# -- execution -----------------------------------------------------------

@dataclass
class Model:
    """A network spec bound to weights, ready for inference.

    Binary-flagged convolutions are binarized once at construction.
    ``binary=False`` runs every layer in full precision instead.
    """

    spec: NetworkSpec
    params: list[list[np.ndarray]]
    binary: bool = True
    input_scaling: bool = True
    _banks: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        check_params(self.spec, self.params)
        self.params = [[np.asarray(t, dtype=DTYPE) for t in g] for g in self.params]
        self._shapes = self.spec.shapes()
        for i, layer in enumerate(self.spec.layers):
            for slot, conv in enumerate(self.convs(i)):
                if layer.binary:
                    self._banks[i, slot] = binarize_weights(conv)

    def convs(self, i: int) -> list[ConvParams]:
        """ConvParams of layer ``i`` (squeeze first, then expand branches)."""
        layer, group = self.spec.layers[i], self.params[i]
        c = self._shapes[i][0]
        if layer.kind == "conv":
            return [ConvParams(c, layer.out, layer.k, layer.stride, layer.pad, group[0], group[1])]
        if layer.kind in ("fire", "extended_fire"):
            convs = [ConvParams(c, layer.s, 1, 1, 0, group[0], group[1])]
            for j, (e, k) in enumerate(_fire_branches(layer)):
                convs.append(ConvParams(layer.s, e, k, 1, k // 2, group[2 + 2 * j], group[3 + 2 * j]))
            return convs
        return []

    def _conv(self, i: int, slot: int, conv: ConvParams, x: np.ndarray, binary: bool) -> np.ndarray:
        bank: BinarizedFilterBank | None = self._banks.get((i, slot))
        if binary and bank is not None:
            return xnor_conv_forward(x, bank, self.input_scaling)[0]
        return kernels.conv_forward(x, conv)[0]

    def run_layer(self, i: int, x: np.ndarray, binary: bool | None = None) -> np.ndarray:
        """Apply layer ``i`` to a [C,H,W] activation."""
        binary = self.binary if binary is None else binary
        layer = self.spec.layers[i]
        kind = layer.kind
        if kind == "conv":
            return self._conv(i, 0, self.convs(i)[0], x, binary)
        if kind in ("fire", "extended_fire"):
            convs = self.convs(i)
            squeezed = kernels.relu(self._conv(i, 0, convs[0], x, binary))
            branches = [kernels.relu(self._conv(i, j, conv, squeezed, binary))
                        for j, conv in enumerate(convs[1:], start=1)]
            return channel_concat(branches)
        if kind == "maxpool":
            return kernels.maxpool(x, layer.k, layer.stride)
        if kind == "relu":
            return kernels.relu(x)
        if kind == "prelu":
            return kernels.prelu(x, self.params[i][0])
        if kind == "fc":
            w, b = self.params[i]
            return (w @ x.reshape(-1) + b).reshape(-1, 1, 1).astype(DTYPE)
        return kernels.softmax(x).reshape(x.shape)

    def forward(self, x: np.ndarray, binary: bool | None = None,
                hook: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
        """Run the whole network on one image; returns the flat output."""
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim == 4 and x.shape[0] == 1:
            x = x[0]
        if x.shape != self.spec.input_shape:
            raise ShapeError(f"input shape {x.shape} != declared {self.spec.input_shape}")
        for i in range(len(self.spec.layers)):
            try:
                x = self.run_layer(i, x, binary)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({self.spec.layers[i].kind}): {exc}") from None
            if hook is not None:
                hook(i, x)
        return x.reshape(-1)


def forward(net: NetworkSpec, params, x: np.ndarray, binary: bool = True) -> np.ndarray:
    return Model(net, params, binary=binary).forward(x)


def with_layers(net: NetworkSpec, layers: Sequence[LayerSpec],
                input_shape: Shape | None = None) -> NetworkSpec:
    """A shape-checked copy of ``net`` with new layers (and input shape)."""
    return NetworkSpec.build(input_shape or net.input_shape, layers, net.classes)


__all__ = [
    "LayerSpec", "NetworkSpec", "Model", "parse_netspec", "format_netspec", "format_layer",
    "validate_binarization", "param_shapes", "count_params", "estimate_macs", "init_params",
    "check_params", "forward", "infer_shapes", "with_layers", "replace",
]
