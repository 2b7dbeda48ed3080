"""Binary tensor container and 8-bit image export.

The container format (magic "ACST") stores one array: a version byte, a
dtype code, the rank, little-endian uint64 dims, then the payload row-major
little-endian with complex values interleaved (re, im). Round-trips preserve
shape, dtype, and every payload byte.
"""

import struct

import numpy as np
from PIL import Image

TENSOR_MAGIC = b"ACST"
TENSOR_VERSION = 1

_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<c8", 3: "<c16"}
_CODE_FOR_KIND = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.complex64): 2,
    np.dtype(np.complex128): 3,
}


class TensorFormatError(ValueError):
    pass


def save_tensor(path, array):
    """Write one float or complex array as an ACST container."""
    array = np.asarray(array)
    dtype = array.dtype
    if dtype not in _CODE_FOR_KIND:
        if np.issubdtype(dtype, np.floating):
            array = array.astype(np.float64)
        elif np.issubdtype(dtype, np.complexfloating):
            array = array.astype(np.complex128)
        else:
            raise TensorFormatError(f"unsupported dtype {dtype}")
        dtype = array.dtype
    code = _CODE_FOR_KIND[dtype]
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<BBB", TENSOR_VERSION, code, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype=_DTYPE_CODES[code]).tobytes())


def load_tensor(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TENSOR_MAGIC:
        raise TensorFormatError(f"bad magic {blob[:4]!r}, expected {TENSOR_MAGIC!r}")
    if len(blob) < 7:
        raise TensorFormatError("truncated header")
    version, code, ndim = struct.unpack_from("<BBB", blob, 4)
    if version != TENSOR_VERSION:
        raise TensorFormatError(f"unsupported container version {version}")
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code}")
    header_end = 7 + 8 * ndim
    if len(blob) < header_end:
        raise TensorFormatError("truncated dimension list")
    shape = struct.unpack_from(f"<{ndim}Q", blob, 7)
    dtype = np.dtype(_DTYPE_CODES[code])
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(blob) < header_end + count * dtype.itemsize:
        raise TensorFormatError(
            f"truncated payload: expected {count * dtype.itemsize} bytes after header"
        )
    values = np.frombuffer(blob, dtype=dtype, count=count, offset=header_end)
    return values.reshape(shape).astype(dtype.newbyteorder("="))


def export_image(path, image, window=None):
    """Save a real 2D array as 8-bit grayscale PNG or PGM (by extension).

    ``window`` is the (lo, hi) intensity range mapped to 0..255; defaults to
    the image min/max. A constant image comes out uniform.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    if window is None:
        lo, hi = float(image.min()), float(image.max())
    else:
        lo, hi = float(window[0]), float(window[1])
    if hi > lo:
        scaled = (image - lo) * (255.0 / (hi - lo))
    else:
        scaled = np.zeros_like(image)
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)

    name = str(path)
    if name.lower().endswith(".pgm"):
        header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
        with open(name, "wb") as fh:
            fh.write(header)
            fh.write(pixels.tobytes())
    elif name.lower().endswith(".png"):
        Image.fromarray(pixels, mode="L").save(name)
    else:
        raise ValueError(f"unsupported image extension on {name!r} (use .png or .pgm)")
