"""Binary checkpoint format and weight import.

Layout, all integers little-endian: magic "PLCN", version u32, preset tag
(u32 length + UTF-8), iteration u64, record count u32, then per record the
name (u32 length + UTF-8), rank u32, dims as u32 each, and the float32
payload. Records are sorted by name and cover trainables and running
statistics alike, so save/load round-trips bit-identically.
"""

import os
import struct

import numpy as np

from .errors import ConfigurationError
from .graph import Parameters

MAGIC = b"PLCN"
VERSION = 1

_BUFFER_SUFFIXES = (".running_mean", ".running_var")


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(path, preset, iteration, params):
    """Serialize params (values and buffers) atomically; returns path."""
    records = dict(params.values)
    records.update(params.buffers)
    blob = [MAGIC, struct.pack("<I", VERSION), _pack_str(preset),
            struct.pack("<Q", iteration), struct.pack("<I", len(records))]
    for name in sorted(records):
        arr = np.ascontiguousarray(records[name], dtype="<f4")
        blob.append(_pack_str(name))
        blob.append(struct.pack("<I", arr.ndim))
        blob.append(struct.pack("<%dI" % arr.ndim, *arr.shape))
        blob.append(arr.tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(blob))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ConfigurationError("checkpoint %s is truncated" % self.path)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def text(self):
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path):
    """Read a checkpoint; returns (preset, iteration, Parameters)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise ConfigurationError("%s is not a checkpoint (bad magic)" % path)
    version = r.u32()
    if version != VERSION:
        raise ConfigurationError(
            "unsupported checkpoint version %d in %s" % (version, path))
    preset = r.text()
    iteration = r.u64()
    params = Parameters()
    for _ in range(r.u32()):
        name = r.text()
        rank = r.u32()
        dims = struct.unpack("<%dI" % rank, r.take(4 * rank))
        count = int(np.prod(dims))
        arr = np.frombuffer(r.take(4 * count), "<f4").reshape(dims)
        pool = params.buffers if name.endswith(_BUFFER_SUFFIXES) else params.values
        pool[name] = arr.astype(np.float32)
    if r.pos != len(buf):
        raise ConfigurationError(
            "checkpoint %s has %d trailing bytes" % (path, len(buf) - r.pos))
    return preset, iteration, params


def import_weights(params, source, mapping):
    """Copy mapped (source_name, target_name) tensors from source into
    params; unmapped targets keep their values. Returns (params, list of
    unmapped parameter names)."""
    pools = (params.values, params.buffers)
    mapped = set()
    for src_name, dst_name in mapping:
        src = source.values.get(src_name, source.buffers.get(src_name))
        if src is None:
            raise ConfigurationError("source has no tensor %r" % src_name)
        pool = next((p for p in pools if dst_name in p), None)
        if pool is None:
            raise ConfigurationError("network has no parameter %r" % dst_name)
        if pool[dst_name].shape != src.shape:
            raise ConfigurationError(
                "cannot map %s %s onto %s %s" % (src_name, src.shape,
                                                 dst_name, pool[dst_name].shape))
        pool[dst_name] = src.copy()
        mapped.add(dst_name)
    unmapped = sorted((set(params.values) | set(params.buffers)) - mapped)
    return params, unmapped


def read_mapping(path):
    """Parse a mapping file: one `source target` pair per line, # comments."""
    pairs = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigurationError(
                    "bad mapping line %d in %s: %r" % (line_no, path, line))
            pairs.append((parts[0], parts[1]))
    return pairs
