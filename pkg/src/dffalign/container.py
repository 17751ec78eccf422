"""Binary container for named tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"DFFT"
    version u32      currently 1
    count   u32      number of tensors
    then per tensor:
        nameLen u16, name bytes (utf-8)
        dtype   u8   0=float32 1=float64 2=uint32 3=uint8
        rank    u8
        dims    rank * u32
        data    raw C-order values, little-endian

Tensor names must be unique within a file.  A record named
``__provenance__`` (a uint8 tensor holding utf-8 text) carries the
provenance string when one is attached; readers treat it like any other
tensor.
"""

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"DFFT"
VERSION = 1
PROVENANCE_KEY = "__provenance__"

# dtype code <-> numpy dtype, always little-endian on disk
_CODE_TO_DTYPE = {0: "<f4", 1: "<f8", 2: "<u4", 3: "|u1"}
_KIND_TO_CODE = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.uint32): 2,
    np.dtype(np.uint8): 3,
}


def write_container(path, tensors, provenance=None):
    """Write an ordered mapping name -> ndarray to `path`.

    Arrays must have dtype float32, float64, uint32 or uint8 (cast before
    calling for anything else).  If `provenance` is given it is stored as
    a uint8 tensor under the reserved name.
    """
    items = list(tensors.items())
    if provenance is not None:
        if any(name == PROVENANCE_KEY for name, _ in items):
            raise ValueError(f"tensor name {PROVENANCE_KEY!r} is reserved")
        blob = np.frombuffer(provenance.encode("utf-8"), dtype=np.uint8)
        items.insert(0, (PROVENANCE_KEY, blob))

    seen = set()
    for name, _ in items:
        if name in seen:
            raise ValueError(f"duplicate tensor name {name!r}")
        seen.add(name)

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            arr = np.asarray(arr)
            if arr.dtype not in _KIND_TO_CODE:
                raise ValueError(
                    f"unsupported dtype {arr.dtype} for tensor {name!r}"
                )
            code = _KIND_TO_CODE[arr.dtype]
            nbytes = name.encode("utf-8")
            if len(nbytes) > 0xFFFF:
                raise ValueError("tensor name too long")
            fh.write(struct.pack("<H", len(nbytes)))
            fh.write(nbytes)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes())


def read_container(path):
    """Read a container file back into an OrderedDict name -> ndarray.

    Raises ValueError on bad magic, unknown version, unknown dtype code,
    duplicate names or truncated payload.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    if data[:4] != MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")

    out = OrderedDict()
    off = 12
    for _ in range(count):
        if off + 2 > len(data):
            raise ValueError("truncated container (header)")
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        if off + 2 > len(data):
            raise ValueError("truncated container (dtype/rank)")
        code, rank = struct.unpack_from("<BB", data, off)
        off += 2
        if code not in _CODE_TO_DTYPE:
            raise ValueError(f"unknown dtype code {code} for tensor {name!r}")
        dims = struct.unpack_from(f"<{rank}I", data, off) if rank else ()
        off += 4 * rank
        dt = np.dtype(_CODE_TO_DTYPE[code])
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize if rank else dt.itemsize
        if rank == 0:
            nbytes = dt.itemsize
        if off + nbytes > len(data):
            raise ValueError(f"truncated container (payload of {name!r})")
        arr = np.frombuffer(data[off : off + nbytes], dtype=dt).reshape(dims)
        off += nbytes
        if name in out:
            raise ValueError(f"duplicate tensor name {name!r}")
        out[name] = arr.copy()  # own the memory, native byte order below
    # normalise to native-endian dtypes so downstream code never sees '<f8' vs
    # '=f8' quirks (astype keeps rank-0 shapes, ascontiguousarray would not)
    for k in list(out):
        out[k] = out[k].astype(out[k].dtype.newbyteorder("="), copy=False)
    return out


def read_provenance(path):
    """Return the embedded provenance string, or None if absent."""
    tensors = read_container(path)
    if PROVENANCE_KEY not in tensors:
        return None
    return bytes(tensors[PROVENANCE_KEY]).decode("utf-8")
