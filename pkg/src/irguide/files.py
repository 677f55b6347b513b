"""Image files (binary PGM, grayscale PNG) and the parameter container.

Parameter container
-------------------
An uncompressed ``.npz`` archive.  The entry ``__meta__`` is a 0-d unicode
array holding JSON with at least ``format`` (always ``"irguide-container"``),
``version`` (currently 1) and ``kind`` (e.g. ``"conv_denoiser"`` or
``"feature_extractor"``); the remaining entries are float64 arrays named
by the owning object.  Archives are loaded with ``allow_pickle=False``.
"""

import json
import os
import zipfile

import numpy as np

from .errors import ImageFormatError

CONTAINER_FORMAT = "irguide-container"
CONTAINER_VERSION = 1


def save_container(path, kind, meta, arrays):
    header = {"format": CONTAINER_FORMAT, "version": CONTAINER_VERSION, "kind": kind, **meta}
    payload = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}
    if "__meta__" in payload:
        raise ValueError("'__meta__' is reserved")
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(header, sort_keys=True)), **payload)


def load_container(path, kind=None):
    """Return ``(meta, arrays)``; checks format, version and optionally kind."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise ImageFormatError(f"unreadable container {path}: {exc}") from exc
    if meta.get("format") != CONTAINER_FORMAT:
        raise ImageFormatError(f"{path}: not an {CONTAINER_FORMAT} file")
    if meta.get("version") != CONTAINER_VERSION:
        raise ImageFormatError(f"{path}: unsupported container version {meta.get('version')}")
    if kind is not None and meta.get("kind") != kind:
        raise ImageFormatError(f"{path}: expected kind {kind!r}, found {meta.get('kind')!r}")
    return meta, arrays


def _pgm_tokens(data, count):
    """Parse ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, i, n = [], 2, len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("corrupt header: truncated PGM header")
        tokens.append(data[start:i])
    if i >= n or not data[i:i + 1].isspace():
        raise ImageFormatError("corrupt header: missing separator before raster")
    return tokens, i + 1


def _read_pgm(data):
    tokens, offset = _pgm_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError("corrupt header: non-integer field") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError(f"corrupt header: {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    raster = data[offset:offset + need]
    if len(raster) < need:
        raise ImageFormatError(f"corrupt header: raster truncated ({len(raster)} of {need} bytes)")
    pix = np.frombuffer(raster, dtype=dtype).astype(np.float64)
    return pix.reshape(height, width) / maxval


def read_image(path):
    """Read a binary P5 PGM (8 or 16 bit) or grayscale PNG into [0, 1] floats."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"io failure: {exc}") from exc
    if data[:2] == b"P5":
        return _read_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise ImageFormatError(f"unsupported format: {os.path.basename(path)}")


def _read_png(path):
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"io failure: {exc}") from exc
    if mode == "L":
        maxval = 255.0
    elif mode in ("I;16", "I;16B", "I"):
        maxval = 65535.0
    else:
        raise ImageFormatError(f"unsupported format: PNG mode {mode} is not single-channel grayscale")
    return arr.astype(np.float64) / maxval


def write_image(img, path):
    """Write a 16-bit binary PGM; values are clamped to [0, 1] and rounded."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("write_image expects a single (H, W) grid")
    q = np.rint(np.clip(img, 0.0, 1.0) * 65535).astype(">u2")
    h, w = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
            fh.write(q.tobytes())
    except OSError as exc:
        raise ImageFormatError(f"io failure: {exc}") from exc
