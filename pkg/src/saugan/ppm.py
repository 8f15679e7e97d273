"""Binary P6 PPM export for generated images (bit-exact, no compression)."""

from __future__ import annotations

import numpy as np


def to_bytes(image: np.ndarray) -> bytes:
    """Quantize a (1,3,H,W) or (3,H,W) image in [0,1] to a P6 file body.

    Values are clamped to [0,1] then mapped with floor(v*255 + 0.5).
    Rows run top to bottom, pixels are interleaved RGB, maxval 255.
    """
    img = np.asarray(image)
    if img.ndim == 4:
        if img.shape[0] != 1:
            raise ValueError("expected a single image")
        img = img[0]
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {img.shape}")
    _, h, w = img.shape
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + q.transpose(1, 2, 0).tobytes()


def export_ppm(image: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(image))


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file back into a (3,H,W) uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ValueError("not a P6 PPM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment to end of line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    body = data[pos : pos + 3 * w * h]
    if len(body) != 3 * w * h:
        raise ValueError("truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
