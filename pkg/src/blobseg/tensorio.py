"""Binary tensor files, PGM masks, and stacked-weight checkpoints.

Tensor file layout (the single interchange format used across the toolkit):

    magic    4 bytes  b"CSEG"
    version  1 byte   0x01
    rank     1 byte   unsigned
    dims     rank x u32, little endian
    data     product(dims) x f64, little endian, row-major

Integer maps (labels, blob ids, super-pixels) are stored in the same format
with exactly representable values.

A checkpoint bundles one descriptor string plus named weight tensors:

    magic    4 bytes  b"CSTK"
    version  1 byte   0x01
    desc     u32 length + UTF-8 bytes
    count    u32 number of entries
    entry    u32 name length + UTF-8 name + embedded tensor file bytes
"""

import os
import struct
import tempfile

import numpy as np

from .errors import DimensionError, FormatError
from .validation import check_finite

TENSOR_MAGIC = b"CSEG"
STACK_MAGIC = b"CSTK"
VERSION = 1


def tensor_to_bytes(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0 or t.size == 0 or any(d <= 0 for d in t.shape):
        raise DimensionError(f"tensor dims must be positive, got {t.shape}")
    if t.ndim > 255:
        raise DimensionError("tensor rank exceeds 255")
    check_finite(t, "tensor")
    header = TENSOR_MAGIC + struct.pack("<BB", VERSION, t.ndim)
    dims = struct.pack(f"<{t.ndim}I", *t.shape)
    payload = np.ascontiguousarray(t, dtype="<f8").tobytes()
    return header + dims + payload


def tensor_from_bytes(buf, offset=0):
    """Decode one tensor from ``buf`` starting at ``offset``.

    Returns ``(array, next_offset)`` so callers can parse concatenated blobs.
    """
    if len(buf) - offset < 6:
        raise FormatError("tensor blob truncated before header")
    if buf[offset : offset + 4] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic bytes")
    version, rank = struct.unpack_from("<BB", buf, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    if rank == 0:
        raise FormatError("tensor rank must be positive")
    pos = offset + 6
    if len(buf) - pos < 4 * rank:
        raise FormatError("tensor blob truncated in dims")
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    if any(d == 0 for d in dims):
        raise FormatError("tensor dims must be positive")
    count = int(np.prod(dims, dtype=np.int64))
    nbytes = 8 * count
    if len(buf) - pos < nbytes:
        raise FormatError("tensor blob truncated in payload")
    data = np.frombuffer(buf[pos : pos + nbytes], dtype="<f8").astype(np.float64)
    return data.reshape(dims), pos + nbytes


def write_tensor(t, path):
    _atomic_write(path, tensor_to_bytes(t))


def read_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after tensor payload")
    return t


def write_int_tensor(t, path):
    """Store an integer map as float64 values (exactly representable)."""
    t = np.asarray(t)
    as_float = t.astype(np.float64)
    if not np.array_equal(as_float.astype(np.int64), t):
        raise DimensionError("integer tensor not exactly representable as float64")
    write_tensor(as_float, path)


def read_int_tensor(path):
    t = read_tensor(path)
    r = np.round(t)
    if not np.array_equal(r, t):
        raise FormatError("tensor payload is not integral")
    return r.astype(np.int64)


# ---------------------------------------------------------------------------
# PGM (binary P5) masks and label maps
# ---------------------------------------------------------------------------

def write_pgm(values, path, scale_binary=False):
    """Write an H x W uint map as binary PGM.

    With ``scale_binary`` a {0,1} mask is stored as {0,255}; label maps keep
    their raw small values.
    """
    a = np.asarray(values)
    if a.ndim != 2:
        raise DimensionError(f"PGM payload must be H x W, got shape {a.shape}")
    if np.any(a < 0) or np.any(a > 255):
        raise DimensionError("PGM values must fit in a byte")
    if scale_binary:
        a = np.where(a > 0, 255, 0)
    h, w = a.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    _atomic_write(path, header + a.astype(np.uint8).tobytes())


def read_pgm(path, binarize=False):
    with open(path, "rb") as fh:
        buf = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        fields.append(buf[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise FormatError("malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}")
    if len(buf) - pos < w * h:
        raise FormatError("truncated PGM payload")
    a = np.frombuffer(buf[pos : pos + w * h], dtype=np.uint8).reshape(h, w)
    a = a.astype(np.int64)
    if binarize:
        a = (a > 0).astype(np.uint8)
    return a


# ---------------------------------------------------------------------------
# Weight checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(descriptor_text, named_tensors, path):
    """Serialize a descriptor string plus ordered (name, tensor) pairs."""
    parts = [STACK_MAGIC, struct.pack("<B", VERSION)]
    desc = descriptor_text.encode("utf-8")
    parts.append(struct.pack("<I", len(desc)))
    parts.append(desc)
    parts.append(struct.pack("<I", len(named_tensors)))
    for name, tensor in named_tensors:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(tensor_to_bytes(tensor))
    _atomic_write(path, b"".join(parts))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 5 or buf[:4] != STACK_MAGIC:
        raise FormatError("bad checkpoint magic bytes")
    if buf[4] != VERSION:
        raise FormatError(f"unsupported checkpoint version {buf[4]}")
    pos = 5
    try:
        (dlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        descriptor = buf[pos : pos + dlen].decode("utf-8")
        pos += dlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
    except struct.error as exc:
        raise FormatError("truncated checkpoint header") from exc
    entries = []
    for _ in range(count):
        if len(buf) - pos < 4:
            raise FormatError("truncated checkpoint entry")
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        tensor, pos = tensor_from_bytes(buf, pos)
        entries.append((name, tensor))
    if pos != len(buf):
        raise FormatError("trailing bytes after checkpoint entries")
    return descriptor, entries


def _atomic_write(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
