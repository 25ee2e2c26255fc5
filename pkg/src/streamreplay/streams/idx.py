"""IDX (MNIST-style) binary reader/writer and per-image rotation."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Unsigned-byte IDX arrays only; that is all MNIST uses."""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxFormatError(path, 0, "truncated magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(path, 0, f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(path, 4, "truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise IdxFormatError(path, len(raw), f"truncated payload: need {count} bytes after offset {header}")
    if len(raw) > header + count:
        raise IdxFormatError(path, header + count, "trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx_images(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Return (n, rows, cols) images scaled to [0, 1] and (n,) int labels."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(labels_path, 4, f"{labels.shape[0]} labels for {images.shape[0]} images")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only uint8 IDX files are written")
    magic = 0x00000800 | array.ndim
    payload = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "wb") as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def rotate_images(images: np.ndarray, angles_deg) -> np.ndarray:
    """Bilinear rotation about each image centre; pixels leaving the frame become 0."""
    images = np.asarray(images, dtype=np.float64)
    out = np.empty_like(images)
    for i, (img, angle) in enumerate(zip(images, np.broadcast_to(angles_deg, images.shape[:1]))):
        if angle == 0:
            out[i] = img
        else:
            out[i] = ndimage.rotate(img, float(angle), reshape=False, order=1,
                                    mode="constant", cval=0.0, prefilter=False)
    return out


def rotate_dataset(images, labels, seed: int, max_angle: float = 45.0):
    """Rotate each image by an angle uniform in [-max_angle, max_angle] degrees.

    Returns (rotated images, labels, angles) so the angles can be logged.
    """
    rng = np.random.default_rng(seed)
    angles = rng.uniform(-max_angle, max_angle, size=len(images))
    return rotate_images(images, angles), np.asarray(labels), angles
