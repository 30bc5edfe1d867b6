"""Binary container shared by model checkpoints and binary feature files.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"FANETCKP"
    8       4     uint32 format version (currently 1)
    12      4     uint32 manifest length L in bytes
    16      L     UTF-8 JSON manifest, keys sorted, no whitespace:
                  {"arrays": [{"name": str, "shape": [int, ...]}, ...],
                   "kind": str, "meta": {...}}
    16+L    ...   float64 little-endian payload, each array in C order,
                  concatenated in manifest order; nothing follows it

Integers and strings travel in ``meta``; every float lives in the payload
so that a round trip is bit-exact.
"""
import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"FANETCKP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")


def encode(kind, meta, arrays):
    """Serialize ``arrays`` (sequence of ``(name, ndarray)``) to bytes."""
    entries, blobs = [], []
    for name, arr in arrays:
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": str(name), "shape": [int(d) for d in arr.shape]})
        blobs.append(np.ascontiguousarray(arr).astype("<f8", copy=False).tobytes())
    manifest = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                          sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)) + manifest + b"".join(blobs)


def decode(data, expect_kind=None):
    """Inverse of :func:`encode`; returns ``(kind, meta, {name: array})``."""
    if len(data) < _HEADER.size:
        raise FormatError("checkpoint truncated: header incomplete")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("not a FANet checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}")
    start = _HEADER.size
    try:
        manifest = json.loads(data[start : start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint manifest: {exc}") from None
    kind = manifest.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"expected a {expect_kind!r} checkpoint, found {kind!r}")
    offset = start + mlen
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise FormatError(f"checkpoint truncated inside array {entry['name']!r}")
        arr = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset)
        arrays[entry["name"]] = arr.astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} unexpected trailing bytes in checkpoint")
    return kind, manifest.get("meta", {}), arrays


def write(path, kind, meta, arrays):
    with open(path, "wb") as fh:
        fh.write(encode(kind, meta, arrays))


def read(path, expect_kind=None):
    with open(path, "rb") as fh:
        return decode(fh.read(), expect_kind)


def network_arrays(net, prefix=""):
    out = []
    for i, layer in enumerate(net.layers):
        for j, p in enumerate(layer.params):
            out.append((f"{prefix}layer{i}.{j}", p))
    return out


def restore_network(manifest, arrays, prefix=""):
    from .nn import Network

    net = Network.from_manifest(manifest)
    values = []
    for i, layer in enumerate(net.layers):
        for j in range(len(layer.params)):
            key = f"{prefix}layer{i}.{j}"
            if key not in arrays:
                raise FormatError(f"checkpoint lacks array {key!r}")
            values.append(arrays[key])
    net.set_parameters(values)
    return net


def save_network(path, net, meta=None):
    write(path, "network", {"network": net.manifest(), **(meta or {})}, network_arrays(net))


def load_network(path):
    _, meta, arrays = read(path, expect_kind="network")
    return restore_network(meta["network"], arrays), meta
