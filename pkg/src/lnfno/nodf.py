"""NODF: a small binary container for datasets and checkpoints.

Layout (all integers little-endian):

    magic     6 bytes  b"NODF1\\0"
    version   u16
    metadata  u32 length + UTF-8 "key=value" lines joined by "\\n"
    directory u32 count, then per component:
                  u16 name length + UTF-8 name
                  u8 role   (0 input, 1 output, 2 aux blob)
                  u8 dtype  (0 f64, 1 u32, 2 raw bytes)
                  u8 rank, u32 dims[rank]
    header crc u32     CRC-32 of every byte above
    payload   components in directory order, row-major, each starting at
              an offset that is a multiple of 8 (zero padding)

Input and output components carry ``dims[0] = n_samples``. The header CRC
makes every corruption of the header bytes detectable.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError

MAGIC = b"NODF1\x00"
VERSION = 1

ROLE_INPUT, ROLE_OUTPUT, ROLE_AUX = 0, 1, 2
ROLES = {"input": ROLE_INPUT, "output": ROLE_OUTPUT, "aux": ROLE_AUX}
ROLE_NAMES = {v: k for k, v in ROLES.items()}

DTYPE_F64, DTYPE_U32, DTYPE_RAW = 0, 1, 2
_NP_DTYPES = {DTYPE_F64: np.dtype("<f8"), DTYPE_U32: np.dtype("<u4"), DTYPE_RAW: np.dtype("u1")}


@dataclass
class Component:
    name: str
    role: str
    data: np.ndarray

    @property
    def dtype_code(self):
        kind = self.data.dtype
        if kind == np.float64:
            return DTYPE_F64
        if kind == np.uint32:
            return DTYPE_U32
        if kind == np.uint8:
            return DTYPE_RAW
        raise ContractError(f"component {self.name!r}: unsupported dtype {kind}")


def blob(name, payload):
    """An aux component holding raw bytes."""
    return Component(name, "aux", np.frombuffer(bytes(payload), dtype=np.uint8).copy())


def _pad(n):
    return (-n) % 8


def encode_metadata(metadata):
    lines = []
    for k, v in metadata.items():
        k, v = str(k), str(v)
        if "=" in k or "\n" in k or "\n" in v or not k:
            raise ContractError(f"metadata entry {k!r} cannot be encoded")
        lines.append(f"{k}={v}")
    return "\n".join(lines).encode("utf-8")


def _header(components, metadata):
    out = bytearray(MAGIC)
    out += struct.pack("<H", VERSION)
    meta = encode_metadata(metadata)
    out += struct.pack("<I", len(meta)) + meta
    out += struct.pack("<I", len(components))
    for c in components:
        name = c.name.encode("utf-8")
        if not name or len(name) > 0xFFFF:
            raise ContractError(f"bad component name {c.name!r}")
        if c.role not in ROLES:
            raise ContractError(f"component {c.name!r}: unknown role {c.role!r}")
        arr = np.asarray(c.data)
        if arr.ndim > 255 or any(d > 0xFFFFFFFF for d in arr.shape):
            raise ContractError(f"component {c.name!r}: shape {arr.shape} not representable")
        out += struct.pack("<H", len(name)) + name
        out += struct.pack("<BBB", ROLES[c.role], c.dtype_code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def encode_nodf(components, metadata):
    components = list(components)
    counts = {int(np.asarray(c.data).shape[0]) for c in components
              if c.role != "aux" and np.asarray(c.data).ndim > 0}
    if any(c.role != "aux" and np.asarray(c.data).ndim == 0 for c in components):
        raise ContractError("input/output components need a leading sample axis")
    if len(counts) > 1:
        raise ContractError(f"inconsistent sample counts {sorted(counts)}")
    names = [c.name for c in components]
    if len(set(names)) != len(names):
        raise ContractError("duplicate component names")
    out = bytearray(_header(components, metadata))
    for c in components:
        out += b"\x00" * _pad(len(out))
        arr = np.ascontiguousarray(c.data, dtype=_NP_DTYPES[c.dtype_code])
        out += arr.tobytes()
    return bytes(out)


def write_nodf(components, metadata, path):
    data = encode_nodf(components, metadata)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, field):
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"{field}: truncated at byte {self.pos}", field=field)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, field):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def decode_metadata(raw):
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"metadata: not UTF-8 ({exc.reason})", field="metadata") from None
    meta = {}
    if not text:
        return meta
    for line in text.split("\n"):
        key, sep, value = line.partition("=")
        if not sep or not key:
            raise FormatError(f"metadata: malformed line {line!r}", field="metadata")
        if key in meta:
            raise FormatError(f"metadata: duplicate key {key!r}", field="metadata")
        meta[key] = value
    return meta


def decode_nodf(buf):
    """Parse and validate a complete NODF byte string."""
    buf = bytes(buf)
    rd = _Reader(buf)
    if rd.take(6, "magic") != MAGIC:
        raise FormatError("magic: not a NODF file", field="magic")
    (version,) = rd.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"version: unsupported {version}", field="version")
    (mlen,) = rd.unpack("<I", "metadata length")
    meta_raw = rd.take(mlen, "metadata")
    (count,) = rd.unpack("<I", "component count")
    entries = []
    for i in range(count):
        (nlen,) = rd.unpack("<H", f"component {i} name length")
        try:
            name = rd.take(nlen, f"component {i} name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"component {i} name: not UTF-8", field="name") from None
        role, dtype, rank = rd.unpack("<BBB", f"component {i} descriptor")
        if role not in ROLE_NAMES:
            raise FormatError(f"component {name!r} role: bad code {role}", field="role")
        if dtype not in _NP_DTYPES:
            raise FormatError(f"component {name!r} dtype: bad code {dtype}", field="dtype")
        dims = rd.unpack(f"<{rank}I", f"component {name!r} dims")
        entries.append((name, role, dtype, dims))
    header_end = rd.pos
    (crc,) = rd.unpack("<I", "header crc")
    if zlib.crc32(buf[:header_end]) != crc:
        raise FormatError("header crc: checksum mismatch", field="header crc")
    metadata = decode_metadata(meta_raw)

    components = []
    counts = set()
    for name, role, dtype, dims in entries:
        if role != ROLE_AUX:
            if not dims:
                raise FormatError(f"component {name!r} dims: missing sample axis", field="dims")
            counts.add(dims[0])
        rd.take(_pad(rd.pos), f"component {name!r} padding")
        dt = _NP_DTYPES[dtype]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if rd.pos + nbytes > len(buf):
            raise FormatError(f"component {name!r}: payload short", field="payload")
        raw = rd.take(nbytes, f"component {name!r} payload")
        arr = np.frombuffer(raw, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        components.append(Component(name, ROLE_NAMES[role], arr))
    if len(counts) > 1:
        raise FormatError(f"dims: inconsistent sample counts {sorted(counts)}", field="dims")
    if rd.pos != len(buf):
        raise FormatError(f"payload: {len(buf) - rd.pos} trailing bytes", field="payload")
    return components, metadata


def read_nodf(path):
    with open(path, "rb") as fh:
        return decode_nodf(fh.read())


def header_length(buf):
    """Number of bytes up to and including the header CRC."""
    rd = _Reader(bytes(buf))
    rd.take(8, "magic")
    (mlen,) = rd.unpack("<I", "metadata length")
    rd.take(mlen, "metadata")
    (count,) = rd.unpack("<I", "component count")
    for i in range(count):
        (nlen,) = rd.unpack("<H", "name length")
        rd.take(nlen + 2, "name")
        (rank,) = rd.unpack("<B", "rank")
        rd.take(4 * rank, "dims")
    return rd.pos + 4


def by_name(components):
    return {c.name: c for c in components}
