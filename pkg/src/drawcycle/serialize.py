"""Binary state container and RNG state round-tripping.

Checkpoints are a flat list of named entries (float64 / uint64 arrays or
raw bytes) in an explicit little-endian format with a version tag, so
save/load round trips are bit-exact across platforms.
"""

import struct

import numpy as np

MAGIC = b"DCK1"

_KIND_F8 = 0
_KIND_U8 = 1
_KIND_RAW = 2


class CheckpointError(Exception):
    pass


def rng_state_to_array(rng):
    """Pack a PCG64 generator's full state into a uint64 array."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 generators are supported")
    s = st["state"]["state"]
    inc = st["state"]["inc"]
    return np.array(
        [s & (2**64 - 1), s >> 64, inc & (2**64 - 1), inc >> 64,
         st["has_uint32"], st["uinteger"]],
        dtype=np.uint64,
    )


def rng_state_from_array(arr):
    """Rebuild a PCG64 generator from a packed state array."""
    a = [int(v) for v in np.asarray(arr, dtype=np.uint64)]
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": a[0] | (a[1] << 64), "inc": a[2] | (a[3] << 64)},
        "has_uint32": a[4],
        "uinteger": a[5],
    }
    return rng


def write_entries(path, entries):
    """Write named entries to ``path``.

    ``entries`` is an ordered list of (name, value) where value is a
    float64 array, a uint64 array, or bytes.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name, value in entries:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            if isinstance(value, bytes):
                fh.write(struct.pack("<BB", _KIND_RAW, 0))
                fh.write(struct.pack("<Q", len(value)))
                fh.write(value)
                continue
            arr = np.asarray(value)
            if arr.dtype == np.uint64:
                kind, dt = _KIND_U8, "<u8"
            else:
                kind, dt = _KIND_F8, "<f8"
                arr = arr.astype(np.float64, copy=False)
            fh.write(struct.pack("<BB", kind, arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(np.ascontiguousarray(arr).astype(dt).tobytes())


def read_entries(path):
    """Read a container written by ``write_entries`` into an ordered dict."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError("cannot read %s: %s" % (path, exc))
    if blob[:4] != MAGIC:
        raise CheckpointError("%s is not a drawcycle checkpoint (bad magic)" % (path,))
    off = 4
    try:
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            kind, ndim = struct.unpack_from("<BB", blob, off)
            off += 2
            if kind == _KIND_RAW:
                (size,) = struct.unpack_from("<Q", blob, off)
                off += 8
                out[name] = blob[off:off + size]
                if len(out[name]) != size:
                    raise CheckpointError("truncated entry %r" % (name,))
                off += size
                continue
            shape = []
            for _ in range(ndim):
                (extent,) = struct.unpack_from("<Q", blob, off)
                off += 8
                shape.append(extent)
            dt = "<u8" if kind == _KIND_U8 else "<f8"
            size = int(np.prod(shape)) * 8 if shape else 8
            raw = blob[off:off + size]
            if len(raw) != size:
                raise CheckpointError("truncated entry %r" % (name,))
            off += size
            arr = np.frombuffer(raw, dtype=dt)
            out[name] = arr.reshape(shape) if shape else arr.reshape(())
        return out
    except struct.error:
        raise CheckpointError("corrupt checkpoint %s" % (path,))
