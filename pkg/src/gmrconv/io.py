"""Binary containers: ``.gmr`` ring-layer files, network bundles, cached datasets.

Every container starts with an 8-byte magic, then a little-endian ``uint32``
byte length and that many bytes of UTF-8 JSON, then raw little-endian
payload. Readers validate the magic and every extent before touching the
payload.
"""

from __future__ import annotations

import io
import json
import math
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .kernel import GmrLayerParams, SigmaParams, ring_geometry, sigma_bounds

GMR_MAGIC = b"GMRCONV1"
NET_MAGIC = b"GMRNET01"
DATA_MAGIC = b"GMRDATA1"
FORMAT_VERSION = 1

_F64 = np.dtype("<f8")
_I32 = np.dtype("<i4")


class FormatError(ValueError):
    """Malformed or foreign container."""


def _write_header(fh: BinaryIO, magic: bytes, header: dict):
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    fh.write(magic)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_header(fh: BinaryIO, magic: bytes) -> dict:
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (length,) = struct.unpack("<I", _read_exact(fh, 4))
    try:
        return json.loads(_read_exact(fh, length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc


def _read_array(fh: BinaryIO, dtype: np.dtype, shape: tuple[int, ...]) -> np.ndarray:
    count = math.prod(shape)
    raw = _read_exact(fh, count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


# .gmr

def write_gmr(fh: BinaryIO, p: GmrLayerParams):
    g = p.geometry
    header = {"dims": g.dims, "k": g.k, "n": g.n, "c_in": p.c_in, "c_out": p.c_out,
              "clip": list(sigma_bounds(g))}
    _write_header(fh, GMR_MAGIC, header)
    fh.write(np.ascontiguousarray(p.weights, dtype=_F64).tobytes())
    fh.write(np.ascontiguousarray(p.sigma.log_sigma, dtype=_F64).tobytes())


def read_gmr(fh: BinaryIO) -> GmrLayerParams:
    h = _read_header(fh, GMR_MAGIC)
    try:
        dims, k, n, c_in, c_out = (int(h[key]) for key in ("dims", "k", "n", "c_in", "c_out"))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"incomplete .gmr header: {h}") from exc
    if min(c_in, c_out) < 1:
        raise FormatError(f"invalid channel extents c_in={c_in} c_out={c_out}")
    try:
        g = ring_geometry(k, n, dims)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    clip = h.get("clip")
    if clip is not None and [float(c) for c in clip] != list(sigma_bounds(g)):
        raise FormatError(f"clip range {clip} inconsistent with n={n}")
    w = _read_array(fh, _F64, (c_out, c_in, n))
    log_sigma = _read_array(fh, _F64, (n,))
    return GmrLayerParams(g, w, SigmaParams(log_sigma))


def save_gmr(path, p: GmrLayerParams):
    with open(path, "wb") as fh:
        write_gmr(fh, p)


def load_gmr(path) -> GmrLayerParams:
    with open(path, "rb") as fh:
        p = read_gmr(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after .gmr payload")
    return p


# network bundle

def write_network(fh: BinaryIO, manifest: list[dict], blocks: list):
    """Write a layer manifest followed by one payload per entry.

    ``blocks[i]`` is a :class:`GmrLayerParams` (stored as an embedded ``.gmr``
    record), a dict of named arrays (stored raw as float64), or ``None`` for
    parameter-free layers.
    """
    if len(manifest) != len(blocks):
        raise ValueError("manifest and blocks differ in length")
    payloads, entries = [], []
    for spec, block in zip(manifest, blocks):
        entry = dict(spec)
        if isinstance(block, GmrLayerParams):
            buf = io.BytesIO()
            write_gmr(buf, block)
            entry["block"] = "gmr"
            payload = buf.getvalue()
        elif block is None:
            entry["block"] = "none"
            payload = b""
        else:
            names = sorted(block)
            entry["block"] = "dense"
            entry["arrays"] = [[name, list(np.shape(block[name]))] for name in names]
            payload = b"".join(np.ascontiguousarray(block[name], dtype=_F64).tobytes()
                               for name in names)
        entry["nbytes"] = len(payload)
        entries.append(entry)
        payloads.append(payload)
    _write_header(fh, NET_MAGIC, {"version": FORMAT_VERSION, "layers": entries})
    for payload in payloads:
        fh.write(payload)


def read_network(fh: BinaryIO) -> tuple[list[dict], list]:
    h = _read_header(fh, NET_MAGIC)
    if h.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported network container version {h.get('version')}")
    manifest, blocks = [], []
    for entry in h["layers"]:
        entry = dict(entry)
        kind = entry.pop("block")
        nbytes = entry.pop("nbytes")
        raw = io.BytesIO(_read_exact(fh, nbytes))
        if kind == "gmr":
            blocks.append(read_gmr(raw))
        elif kind == "dense":
            arrays = entry.pop("arrays")
            expected = sum(math.prod(shape) for _, shape in arrays) * _F64.itemsize
            if expected != nbytes:
                raise FormatError(f"dense block declares {expected} bytes but holds {nbytes}")
            blocks.append({name: _read_array(raw, _F64, tuple(shape)) for name, shape in arrays})
        elif kind == "none":
            blocks.append(None)
        else:
            raise FormatError(f"unknown block kind {kind!r}")
        manifest.append(entry)
    if fh.read(1):
        raise FormatError("trailing bytes after network payload")
    return manifest, blocks


# dataset cache

def save_dataset(path, images: np.ndarray, labels: np.ndarray, meta: dict | None = None):
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("images and labels differ in count")
    header = {"version": FORMAT_VERSION, "shape": list(images.shape), "meta": meta or {}}
    with open(path, "wb") as fh:
        _write_header(fh, DATA_MAGIC, header)
        fh.write(np.ascontiguousarray(images, dtype=_F64).tobytes())
        fh.write(np.ascontiguousarray(labels, dtype=_I32).tobytes())


def load_dataset(path) -> tuple[np.ndarray, np.ndarray, dict]:
    with open(Path(path), "rb") as fh:
        h = _read_header(fh, DATA_MAGIC)
        shape = tuple(int(s) for s in h["shape"])
        images = _read_array(fh, _F64, shape)
        labels = _read_array(fh, _I32, (shape[0],))
        if fh.read(1):
            raise FormatError("trailing bytes after dataset payload")
    return images, labels, h.get("meta", {})
