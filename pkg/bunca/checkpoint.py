"""Binary named-tensor container.

Layout: one format-version byte, a little-endian u32 tensor count, then per
tensor a u16 name length, the UTF-8 name, u32 rows and u32 cols. Tensor data
follows the header as little-endian float64 values in header order.
"""

import struct
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from bunca import BuncaError
from bunca.autograd import ParameterSet, Tensor
from bunca.enums import CHECKPOINT_VERSION


class CheckpointError(BuncaError):
    """Raised on malformed, truncated or incompatible checkpoint files."""


PathLike = Union[str, Path]


def dumps(tensors: Dict[str, np.ndarray]) -> bytes:
    header = [struct.pack("<BI", CHECKPOINT_VERSION, len(tensors))]
    body = []
    for name, values in tensors.items():
        values = np.asarray(values)
        if values.ndim != 2:
            raise CheckpointError(f"{name} is not a matrix")
        encoded = name.encode("utf8")
        header.append(struct.pack("<H", len(encoded)) + encoded)
        header.append(struct.pack("<II", *values.shape))
        body.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
    return b"".join(header + body)


def loads(blob: bytes) -> Dict[str, np.ndarray]:
    view = memoryview(blob)
    pos = 0

    def take(count: int) -> memoryview:
        nonlocal pos
        if pos + count > len(view):
            raise CheckpointError("checkpoint file is truncated")
        chunk = view[pos : pos + count]
        pos += count
        return chunk

    (version,) = struct.unpack("<B", take(1))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
        )
    (count,) = struct.unpack("<I", take(4))
    shapes = []
    for _ in range(count):
        (length,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(length)).decode("utf8")
        except UnicodeDecodeError as ex:
            raise CheckpointError("tensor name is not valid UTF-8") from ex
        rows, cols = struct.unpack("<II", take(8))
        shapes.append((name, rows, cols))
    tensors = {}
    for name, rows, cols in shapes:
        raw = take(8 * rows * cols)
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after tensor data")
    return tensors


def save_checkpoint(params: ParameterSet, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps({name: t.values for name, t in params.items()}))
    return path


def read_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as ex:
        raise CheckpointError(f"cannot read checkpoint {path}: {ex}") from ex
    return loads(blob)


def load_checkpoint(path: PathLike, params: Optional[ParameterSet] = None) -> ParameterSet:
    """Read ``path`` into a new ParameterSet, or into ``params`` in place.

    When filling ``params`` the names and shapes must match exactly.
    """
    tensors = read_checkpoint(path)
    if params is None:
        params = ParameterSet()
        for name, values in tensors.items():
            params.register(name, Tensor(values))
        return params
    unknown = sorted(set(tensors) - set(params.names()))
    if unknown:
        raise CheckpointError(f"unknown tensor name {unknown[0]!r} in {path}")
    missing = sorted(set(params.names()) - set(tensors))
    if missing:
        raise CheckpointError(f"checkpoint {path} has no tensor {missing[0]!r}")
    for name, t in params.items():
        if tensors[name].shape != t.shape:
            raise CheckpointError(
                f"tensor {name!r} is {tensors[name].shape} in {path}, model expects {t.shape}"
            )
    for name, t in params.items():
        t.values = tensors[name].astype(t.dtype)
    return params
