"""UVT1 tensor containers: named, typed, row-major little-endian records.

Layout::

    b"UVT1" | u32 record count
    per record: u32 name length | UTF-8 name | u32 rank | u32 dims... |
                u8 dtype tag (1 float32, 2 int32, 3 uint8) | payload
"""

import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from engine.errors import ContainerError

MAGIC = b"UVT1"

DTYPE_TAGS = {
    np.dtype("<f4"): 1,
    np.dtype("<i4"): 2,
    np.dtype("u1"): 3,
}
TAG_DTYPES = {tag: dtype for dtype, tag in DTYPE_TAGS.items()}


def _canonical(name: str, array) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype == np.bool_:
        array = array.astype(np.uint8)
    elif np.issubdtype(array.dtype, np.floating):
        array = array.astype("<f4")
    elif np.issubdtype(array.dtype, np.integer):
        if array.dtype == np.uint8:
            array = array.astype("u1")
        else:
            if array.size and (array.min() < -2**31 or array.max() >= 2**31):
                raise ContainerError(f"tensor '{name}' does not fit in int32")
            array = array.astype("<i4")
    else:
        raise ContainerError(f"tensor '{name}' has unsupported dtype {array.dtype}")
    # ascontiguousarray promotes 0-d arrays to 1-d
    return np.ascontiguousarray(array).reshape(array.shape)


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named tensors into UVT1 bytes."""
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        array = _canonical(name, array)
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(struct.pack("<B", DTYPE_TAGS[array.dtype]))
        chunks.append(array.tobytes(order="C"))
    return b"".join(chunks)


def decode(data: bytes) -> Dict[str, np.ndarray]:
    """Parse UVT1 bytes into a name -> array dict."""
    if data[:4] != MAGIC:
        raise ContainerError("not a UVT1 container (bad magic)")
    offset = 4

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise ContainerError("truncated UVT1 container")
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    (count,) = take("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if offset + name_len > len(data):
            raise ContainerError("truncated record name")
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        (tag,) = take("<B")
        if tag not in TAG_DTYPES:
            raise ContainerError(f"tensor '{name}' has unknown dtype tag {tag}")
        dtype = TAG_DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(data):
            raise ContainerError(f"payload of '{name}' is truncated")
        if name in tensors:
            raise ContainerError(f"duplicate tensor name '{name}'")
        tensors[name] = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize,
                                      offset=offset).reshape(dims).copy()
        offset += nbytes
    if offset != len(data):
        raise ContainerError("trailing bytes after last record")
    return tensors


def save(path: Union[str, Path], tensors: Mapping[str, np.ndarray]):
    """Write tensors to path, replacing it atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(tensors))
    tmp.replace(path)


def load(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Read every tensor of a UVT1 file."""
    path = Path(path)
    if not path.exists():
        raise ContainerError(f"container not found: {path}")
    return decode(path.read_bytes())


def pick(tensors: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    """Fetch a tensor, raising ContainerError naming it when missing."""
    if name not in tensors:
        raise ContainerError(f"container has no tensor '{name}'")
    return tensors[name]
