"""Float image io: PFM for full-precision frames, PNG for 8-bit previews/masks."""

from __future__ import annotations

import numpy as np
from PIL import Image


def write_pfm(path, img):
    """Little-endian PFM; 'PF' for HxWx3 color, 'Pf' for HxW grayscale.

    Rows are stored bottom-to-top per the format convention.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 3:
        header = b"PF"
    elif img.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError("PFM supports HxW or HxWx3 images")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # negative scale = little-endian
        f.write(img[::-1].astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError("not a PFM file")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        count = w * h * (3 if header == b"PF" else 1)
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(count * 4), dtype=dtype, count=count)
    if header == b"PF":
        img = data.reshape(h, w, 3)
    else:
        img = data.reshape(h, w)
    return img[::-1].astype(np.float32)


def write_png(path, img):
    """Tone-map floats by clamping to [0,1] and quantizing to 8 bits."""
    img = np.asarray(img)
    arr = np.clip(img, 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path)
    else:
        Image.fromarray(arr, mode="RGB").save(path)


def read_png(path):
    """PNG to float image in [0,1]; grayscale files come back HxW."""
    img = Image.open(path)
    arr = np.asarray(img).astype(np.float32) / 255.0
    return arr


def read_mask_png(path):
    """8-bit grayscale mask thresholded at 0.5 into a binary {0,1} float map."""
    img = Image.open(path).convert("L")
    arr = np.asarray(img).astype(np.float32) / 255.0
    return (arr > 0.5).astype(np.float32)
