"""Sequential network container and the NPIM model file format.

NPIM layout (little-endian)::

    b"NPIM" | u32 version | u32 role length | role (utf-8)
    | u32 table length | layer descriptor table (JSON list, utf-8)
    | u64 parameter count | f32 parameters, flattened in layer order
"""

from __future__ import annotations

import itertools
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ContractError, FormatError
from .layers import Layer, layer_from_descriptor

MODEL_MAGIC = b"NPIM"
MODEL_VERSION = 1

_stamp = itertools.count(1)


class ForwardCache:
    __slots__ = ("model_id", "version", "layers")

    def __init__(self, model_id, version, layers):
        self.model_id, self.version, self.layers = model_id, version, layers


class NetworkModel:
    """An ordered stack of layers with a shared parameter list.

    ``version`` increases whenever parameters change through the model API;
    a backward pass against a cache recorded under an older version raises
    :class:`ContractError`.
    """

    def __init__(self, layers: list[Layer], role: str = ""):
        self.layers = list(layers)
        self.role = role
        self.version = next(_stamp)

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def touch(self) -> None:
        self.version = next(_stamp)

    def forward(self, x):
        h = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.layers:
            h, c = layer.forward(h)
            caches.append(c)
        return h, ForwardCache(id(self), self.version, caches)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, gy):
        if cache.model_id != id(self) or cache.version != self.version:
            raise ContractError("backward called with a stale or foreign forward cache")
        g = np.asarray(gy, dtype=np.float64)
        grads = []
        for layer, c in zip(reversed(self.layers), reversed(cache.layers)):
            g, gr = layer.backward(c, g)
            grads = gr + grads
        return g, grads

    def get_flat(self) -> np.ndarray:
        ps = self.params()
        return np.concatenate([p.ravel() for p in ps]) if ps else np.zeros(0)

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count():
            raise FormatError(f"expected {self.param_count()} parameters, got {flat.size}")
        off = 0
        for p in self.params():
            p[...] = flat[off:off + p.size].reshape(p.shape)
            off += p.size
        self.touch()

    def zero_(self) -> "NetworkModel":
        for p in self.params():
            p[...] = 0.0
        self.touch()
        return self

    def copy(self) -> "NetworkModel":
        clone = NetworkModel([layer_from_descriptor(l.descriptor()) for l in self.layers], self.role)
        clone.set_flat(self.get_flat())
        return clone

    def descriptors(self) -> list[dict]:
        return [l.descriptor() for l in self.layers]

    # -- persistence --

    def to_bytes(self) -> bytes:
        table = json.dumps(self.descriptors(), sort_keys=True, separators=(",", ":")).encode()
        role = self.role.encode()
        flat = self.get_flat().astype("<f4")
        return b"".join([
            MODEL_MAGIC,
            struct.pack("<II", MODEL_VERSION, len(role)), role,
            struct.pack("<I", len(table)), table,
            struct.pack("<Q", flat.size), flat.tobytes(),
        ])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "NetworkModel":
        if raw[:4] != MODEL_MAGIC:
            raise FormatError(f"bad model magic {raw[:4]!r}")
        version, rlen = struct.unpack_from("<II", raw, 4)
        if version != MODEL_VERSION:
            raise FormatError(f"unsupported model version {version}")
        off = 12
        role = raw[off:off + rlen].decode()
        off += rlen
        (tlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        try:
            table = json.loads(raw[off:off + tlen].decode())
            layers = [layer_from_descriptor(d) for d in table]
        except (ValueError, KeyError) as exc:
            raise FormatError(f"invalid layer descriptor table: {exc}") from exc
        off += tlen
        model = cls(layers, role)
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
        if count != model.param_count():
            raise FormatError(f"descriptor table implies {model.param_count()} parameters, payload declares {count}")
        if len(raw) - off != 4 * count:
            raise FormatError("parameter payload truncated or oversized")
        model.set_flat(np.frombuffer(raw, dtype="<f4", count=count, offset=off))
        return model

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "NetworkModel":
        return cls.from_bytes(Path(path).read_bytes())


def mlp(sizes, rng, hidden: str = "relu", out: str = "linear", zero_last: bool = False, role: str = "") -> NetworkModel:
    """Dense stack ``sizes[0] -> ... -> sizes[-1]``."""
    from .layers import Dense

    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(Dense(a, b, out if last else hidden, rng=rng, zero=zero_last and last))
    return NetworkModel(layers, role)
