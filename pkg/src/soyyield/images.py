"""Image helpers and file formats.

Images are float arrays shaped (H, W, C) with values in [0, 1]. Two on-disk
formats are supported: 8-bit PNG (via Pillow) and FIMG, a raw planar float
container::

    b"FIMG" | u32 width | u32 height | u32 channels | f32[channels][height][width]

All integers and floats are little-endian. FIMG is also used for feature
maps, where ``channels`` is the feature depth.
"""

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

FIMG_MAGIC = b"FIMG"
_HEADER = struct.Struct("<4sIII")


def as_image(img):
    """Return ``img`` as a float64 (H, W, C) array, validating its values."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W[, 1|3]) image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def to_luma(img):
    """Rec. 601 luma for 3-channel input; single channel passes through."""
    arr = as_image(img)
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    return arr @ np.array([0.299, 0.587, 0.114])


def to_uint8(img):
    # round half up
    arr = np.clip(as_image(img), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def read_png(path):
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        data = np.asarray(im, dtype=np.float64) / 255.0
    return as_image(data)


def write_png(path, img):
    data = to_uint8(img)
    mode = "L" if data.shape[2] == 1 else "RGB"
    if mode == "L":
        data = data[:, :, 0]
    PILImage.fromarray(data, mode=mode).save(path, format="PNG")


def write_fimg(path, chw):
    """Write a (C, H, W) array as FIMG."""
    arr = np.asarray(chw, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"FIMG payload must be (C, H, W), got {arr.shape}")
    c, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIMG_MAGIC, w, h, c))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_fimg(path):
    """Read a FIMG file as a float64 (C, H, W) array."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated FIMG header")
    magic, w, h, c = _HEADER.unpack_from(raw)
    if magic != FIMG_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    n = w * h * c
    payload = raw[_HEADER.size:]
    if len(payload) != 4 * n:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {4 * n}")
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float64)


def read_image(path):
    """Read PNG or FIMG (by suffix) as an (H, W, C) image."""
    path = Path(path)
    if path.suffix.lower() == ".fimg":
        return as_image(np.transpose(read_fimg(path), (1, 2, 0)))
    return read_png(path)


def write_image(path, img):
    path = Path(path)
    if path.suffix.lower() == ".fimg":
        write_fimg(path, np.transpose(as_image(img), (2, 0, 1)))
    else:
        write_png(path, img)
