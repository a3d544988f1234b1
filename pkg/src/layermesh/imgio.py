"""Readers and writers for P6 PPM, P5 PGM, and PFM image files.

PPM/PGM are 8-bit binary netpbm formats used for color images and masks.
PFM stores float32 data; following the de-facto standard the scale line is
-1.0 (little-endian) and rows are stored bottom-to-top.  PFM roundtrips are
bit-exact.  Flow fields are written as 3-channel PFM with the validity mask
in the third channel (standard PFM has no 2-channel variant).
"""

from __future__ import annotations

import numpy as np

from .errors import IoError


def _read_token(f) -> bytes:
    """Next whitespace-delimited token, skipping '#' comments."""
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise IoError("unexpected end of file in netpbm header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def write_ppm(path, img: np.ndarray) -> None:
    """Write an (H, W, 3) image to binary P6 PPM.

    Float inputs are assumed in [0, 1] and quantized round-half-to-even;
    uint8 inputs are written as-is.
    """
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise IoError(f"PPM needs an (H, W, 3) image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM into a float64 (H, W, 3) image in [0, 1]."""
    with open(path, "rb") as f:
        if _read_token(f) != b"P6":
            raise IoError(f"{path}: not a P6 PPM")
        w = int(_read_token(f))
        h = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval != 255:
            raise IoError(f"{path}: only maxval 255 supported, got {maxval}")
        data = f.read(h * w * 3)
    if len(data) != h * w * 3:
        raise IoError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def write_pgm(path, img: np.ndarray) -> None:
    """Write an (H, W) grayscale/mask image to binary P5 PGM.

    Boolean masks map to {0, 255}; float inputs are quantized from [0, 1].
    """
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise IoError(f"PGM needs an (H, W) image, got shape {arr.shape}")
    if arr.dtype == np.bool_:
        arr = np.where(arr, np.uint8(255), np.uint8(0))
    elif arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM into a uint8 (H, W) array."""
    with open(path, "rb") as f:
        if _read_token(f) != b"P5":
            raise IoError(f"{path}: not a P5 PGM")
        w = int(_read_token(f))
        h = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval != 255:
            raise IoError(f"{path}: only maxval 255 supported, got {maxval}")
        data = f.read(h * w)
    if len(data) != h * w:
        raise IoError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def write_pfm(path, data: np.ndarray) -> None:
    """Write (H, W) or (H, W, 3) float data as little-endian PFM (scale -1.0)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    elif arr.ndim == 2:
        header = b"Pf"
    else:
        raise IoError(f"PFM supports (H, W) or (H, W, 3) data, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(arr[::-1].tobytes())  # PFM stores rows bottom-to-top


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array of shape (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic not in (b"PF", b"Pf"):
            raise IoError(f"{path}: not a PFM file")
        channels = 3 if magic == b"PF" else 1
        w = int(_read_token(f))
        h = int(_read_token(f))
        scale = float(_read_token(f))
        dtype = "<f4" if scale < 0 else ">f4"
        data = f.read(h * w * channels * 4)
    if len(data) != h * w * channels * 4:
        raise IoError(f"{path}: truncated pixel data")
    arr = np.frombuffer(data, dtype=dtype).reshape(h, w, channels)[::-1]
    arr = arr.astype(np.float32)
    return arr[..., 0].copy() if channels == 1 else arr.copy()


def write_flow_pfm(path, coords: np.ndarray, valid: np.ndarray) -> None:
    """Write an absolute-coordinate flow (H, W, 2) + validity as 3-channel PFM."""
    c = np.asarray(coords, dtype=np.float32)
    v = np.asarray(valid, dtype=np.float32)
    if c.ndim != 3 or c.shape[2] != 2 or v.shape != c.shape[:2]:
        raise IoError(f"flow needs (H, W, 2) coords and (H, W) validity, got {c.shape} / {v.shape}")
    write_pfm(path, np.concatenate([c, v[..., None]], axis=2))


def read_flow_pfm(path):
    """Read a flow PFM written by write_flow_pfm; returns (coords, valid)."""
    arr = read_pfm(path)
    if arr.ndim != 3:
        raise IoError(f"{path}: flow PFM must have 3 channels")
    return arr[..., :2].astype(np.float64), arr[..., 2] > 0.5
