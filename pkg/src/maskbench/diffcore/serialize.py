"""Tensor wire format: ``shape=d1,d2,...\\n`` then little-endian float32 payload."""
import numpy as np


class SerializationError(ValueError):
    pass


def tensor_to_bytes(arr):
    arr = np.asarray(arr)
    header = "shape=" + ",".join(str(d) for d in arr.shape) + "\n"
    return header.encode("ascii") + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def read_tensor(stream):
    """Read one tensor from a binary stream positioned at its header line."""
    line = stream.readline()
    if not line.startswith(b"shape="):
        raise SerializationError(f"expected tensor header, got {line[:40]!r}")
    dims = line[6:].strip()
    shape = tuple(int(d) for d in dims.split(b",")) if dims else ()
    count = int(np.prod(shape, dtype=np.int64))
    payload = stream.read(4 * count)
    if len(payload) != 4 * count:
        raise SerializationError(f"truncated payload for tensor of shape {shape}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def tensor_from_bytes(buf):
    import io
    return read_tensor(io.BytesIO(buf))
