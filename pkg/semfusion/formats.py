"""
On-disk formats.

    cloud.bin   little-endian float32 records (x, y, z, intensity), no header
    *.sem       "SEM2", u32 h, u32 w, u32 m, then h*w*m float32 (class fastest)
    *.bin       parameter container: 4-byte magic, then per tensor
                u32 rank, u32 dims[rank], float64 data (row-major)
    confusion   text, one whitespace-separated row per line

All integers and floats are little-endian.
"""

from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from semfusion.errors import FormatError
from semfusion.geometry import PointCloud

PathLike = Union[str, Path]

SEM_MAGIC = b"SEM2"
AAF_MAGIC = b"AAF1"
DFF_MAGIC = b"DFF1"
HEAD_MAGIC = b"HED1"

_F32 = np.dtype("<f4")
_F64 = np.dtype("<f8")
_U32 = np.dtype("<u4")


# --- Point clouds ---

def encode_cloud(cloud: PointCloud) -> bytes:
    records = np.column_stack([cloud.points, cloud.intensity]).astype(_F32)
    return records.tobytes()


def decode_cloud(blob: bytes) -> PointCloud:
    if len(blob) % (4 * _F32.itemsize):
        raise FormatError(f"cloud blob of {len(blob)} bytes is not a whole number of 16-byte records")
    if not blob:
        return PointCloud(np.zeros((0, 3)))
    records = np.frombuffer(blob, dtype=_F32).reshape(-1, 4).astype(np.float64)
    return PointCloud(records[:, :3], records[:, 3])


def write_cloud(path: PathLike, cloud: PointCloud) -> None:
    Path(path).write_bytes(encode_cloud(cloud))


def read_cloud(path: PathLike) -> PointCloud:
    return decode_cloud(Path(path).read_bytes())


# --- Semantic maps ---

def encode_sem(scores: np.ndarray) -> bytes:
    scores = np.asarray(scores)
    if scores.ndim != 3:
        raise FormatError(f"semantic map must be h x w x m, got {scores.shape}")
    header = SEM_MAGIC + np.array(scores.shape, dtype=_U32).tobytes()
    return header + np.ascontiguousarray(scores, dtype=_F32).tobytes()


def decode_sem(blob: bytes) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != SEM_MAGIC:
        raise FormatError("not a SEM2 semantic map")
    h, w, m = (int(v) for v in np.frombuffer(blob, dtype=_U32, count=3, offset=4))
    expected = 16 + h * w * m * _F32.itemsize
    if len(blob) != expected:
        raise FormatError(f"SEM2 map {h}x{w}x{m} needs {expected} bytes, got {len(blob)}")
    if h * w * m == 0:
        return np.zeros((h, w, m))
    return np.frombuffer(blob, dtype=_F32, offset=16).reshape(h, w, m).astype(np.float64)


def write_sem(path: PathLike, scores: np.ndarray) -> None:
    Path(path).write_bytes(encode_sem(scores))


def read_sem(path: PathLike) -> np.ndarray:
    return decode_sem(Path(path).read_bytes())


# --- Parameter containers ---

def encode_tensors(magic: bytes, arrays: Sequence[np.ndarray]) -> bytes:
    if len(magic) != 4:
        raise FormatError(f"magic must be 4 bytes, got {magic!r}")
    parts = [magic]
    for array in arrays:
        array = np.asarray(array, dtype=np.float64)
        parts.append(np.array([array.ndim, *array.shape], dtype=_U32).tobytes())
        parts.append(np.ascontiguousarray(array, dtype=_F64).tobytes())
    return b"".join(parts)


def decode_tensors(blob: bytes, magic: bytes) -> List[np.ndarray]:
    if blob[:4] != magic:
        raise FormatError(f"expected magic {magic!r}, found {blob[:4]!r}")
    arrays = []
    offset = 4
    while offset < len(blob):
        if offset + 4 > len(blob):
            raise FormatError(f"truncated tensor header at byte {offset}")
        rank = int(np.frombuffer(blob, dtype=_U32, count=1, offset=offset)[0])
        offset += 4
        if offset + 4 * rank > len(blob):
            raise FormatError(f"truncated dims at byte {offset}")
        dims = tuple(int(d) for d in np.frombuffer(blob, dtype=_U32, count=rank, offset=offset)) if rank else ()
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        if offset + count * _F64.itemsize > len(blob):
            raise FormatError(f"truncated tensor data at byte {offset}")
        if count:
            data = np.frombuffer(blob, dtype=_F64, count=count, offset=offset).astype(np.float64)
        else:
            data = np.zeros(0)
        arrays.append(data.reshape(dims))
        offset += count * _F64.itemsize
    return arrays


def write_tensors(path: PathLike, magic: bytes, arrays: Sequence[np.ndarray]) -> None:
    Path(path).write_bytes(encode_tensors(magic, arrays))


def read_tensors(path: PathLike, magic: bytes) -> List[np.ndarray]:
    return decode_tensors(Path(path).read_bytes(), magic)


# --- Confusion matrices ---

def parse_confusion(text: str) -> Tuple[Tuple[float, ...], ...]:
    """Whitespace-separated square matrix, one row per line, ``#`` comments allowed."""
    rows = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append(tuple(float(v) for v in line.split()))
        except ValueError as exc:
            raise FormatError(f"line {number}: non-numeric confusion entry") from exc
    if not rows or any(len(row) != len(rows) for row in rows):
        raise FormatError(f"confusion matrix must be square, got rows of {[len(r) for r in rows]}")
    return tuple(rows)


def read_confusion(path: PathLike) -> Tuple[Tuple[float, ...], ...]:
    return parse_confusion(Path(path).read_text(encoding="utf-8"))
