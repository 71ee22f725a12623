"""Portable graymap/pixmap frame output."""
import numpy as np

from splatcam.scene import write_atomic


def to_bytes(pixels):
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def encode_pgm(mask):
    data = to_bytes(mask)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode() + data.tobytes()


def encode_ppm(rgb):
    data = to_bytes(rgb)
    h, w, _ = data.shape
    return f"P6\n{w} {h}\n255\n".encode() + data.tobytes()


def decode_pnm(raw: bytes):
    """Read back a binary P5/P6 file written by this module."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    magic, w, h = tokens[0], int(tokens[1]), int(tokens[2])
    body = np.frombuffer(raw[pos + 1:], dtype=np.uint8)
    if magic == b"P5":
        return body.reshape(h, w)
    if magic == b"P6":
        return body.reshape(h, w, 3)
    raise ValueError(f"unsupported magic {magic!r}")


def frame_name(index, t, ext):
    return f"frame_{index:03d}_{t:.4f}.{ext}"


def write_pgm(path, mask):
    write_atomic(path, encode_pgm(mask))


def write_ppm(path, rgb):
    write_atomic(path, encode_ppm(rgb))
