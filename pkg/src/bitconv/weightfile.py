"""Binary weight file.

Layout (all little-endian)::

    b"BCV1"
    uint32  layer count
    per layer:
        uint64   float count
        float32  values (weights, then bias, then slopes)

Only full-precision weights are stored; binary layers are binarized when
a :class:`~bitconv.netgraph.Model` is built from the loaded weights.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .netgraph import NetworkSpec, check_params, param_shapes

MAGIC = b"BCV1"


def save_weights(net: NetworkSpec, params, path) -> None:
    check_params(net, params)
    chunks = [MAGIC, struct.pack("<I", len(params))]
    for group in params:
        flat = [np.asarray(t, dtype="<f4").reshape(-1) for t in group]
        count = sum(f.size for f in flat)
        chunks.append(struct.pack("<Q", count))
        chunks.extend(f.tobytes() for f in flat)
    Path(path).write_bytes(b"".join(chunks))


def load_weights(net: NetworkSpec, path) -> list[list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header")
    (n_layers,) = struct.unpack_from("<I", data, 4)
    expected = param_shapes(net)
    if n_layers != len(expected):
        raise FormatError(f"{path}: file has {n_layers} layers, network has {len(expected)}")
    pos = 8
    params = []
    for i, shapes in enumerate(expected):
        if pos + 8 > len(data):
            raise FormatError(f"{path}: truncated at layer {i}")
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        want = sum(math.prod(s) for s in shapes)
        if count != want:
            raise FormatError(f"{path}: layer {i} stores {count} floats, network needs {want}")
        if pos + 4 * count > len(data):
            raise FormatError(f"{path}: truncated at layer {i}")
        flat = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float32)
        pos += 4 * count
        group, off = [], 0
        for shape in shapes:
            size = math.prod(shape)
            group.append(flat[off:off + size].reshape(shape).copy())
            off += size
        params.append(group)
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    check_params(net, params)
    return params
