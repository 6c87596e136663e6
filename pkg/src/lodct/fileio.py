"""On-disk formats (PHNT, SINO, STFM) and the per-run manifest.

PHNT: 16-byte little-endian header (magic "PHNT", u32 rows, u32 cols,
f32 pixel_size_mm) followed by row-major float32 samples.  Used both for
phantom rasters (attenuation, mm^-1) and pipeline image outputs (HU); the
manifest records which units a given file carries.

SINO: same layout (magic "SINO", u32 n_views, u32 n_channels,
f32 detector_spacing_mm) with the post-log data block followed by an equally
sized statistical-weights block.

STFM: five text header lines (magic, l, patch dims, vector-order tag)
followed by the row-major float64 transform matrix; the loader rejects
singular matrices.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .transforms import SparsifyingTransform

_HEADER = struct.Struct("<4sIIf")


def _write_raster(path, magic: bytes, rows: int, cols: int, spacing: float,
                  blocks) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, rows, cols, float(spacing)))
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def _read_raster(path, magic: bytes, n_blocks: int):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FileFormatError(f"{path}: truncated header")
        got_magic, rows, cols, spacing = _HEADER.unpack(head)
        if got_magic != magic:
            raise FileFormatError(f"{path}: expected magic {magic!r}, found {got_magic!r}")
        payload = fh.read()
    expected = rows * cols * 4 * n_blocks
    if len(payload) != expected:
        raise FileFormatError(f"{path}: expected {expected} data bytes, found {len(payload)}")
    blocks = []
    for b in range(n_blocks):
        arr = np.frombuffer(payload, dtype="<f4", count=rows * cols, offset=b * rows * cols * 4)
        blocks.append(arr.reshape(rows, cols).astype(np.float64))
    return blocks, float(spacing)


def write_phnt(path, values: np.ndarray, pixel_size: float) -> None:
    rows, cols = values.shape
    _write_raster(path, b"PHNT", rows, cols, pixel_size, [values])


def read_phnt(path) -> tuple[np.ndarray, float]:
    (values,), pixel_size = _read_raster(path, b"PHNT", 1)
    return values, pixel_size


def write_sino(path, y: np.ndarray, weights: np.ndarray, detector_spacing: float) -> None:
    if y.shape != weights.shape:
        raise FileFormatError("sinogram and weights shapes differ")
    n_views, n_channels = y.shape
    _write_raster(path, b"SINO", n_views, n_channels, detector_spacing, [y, weights])


def read_sino(path) -> tuple[np.ndarray, np.ndarray, float]:
    (y, weights), spacing = _read_raster(path, b"SINO", 2)
    return y, weights, spacing


def write_stfm(path, transform: SparsifyingTransform) -> None:
    l = transform.size
    pr = transform.patch_rows or l
    pc = transform.patch_cols or 1
    header = (f"STFM\nl={l}\npatch_rows={pr}\npatch_cols={pc}\n"
              f"order=patch-column-major\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(transform.matrix, dtype="<f8").tobytes())


def read_stfm(path) -> SparsifyingTransform:
    with open(path, "rb") as fh:
        blob = fh.read()
    lines = []
    offset = 0
    for _ in range(5):
        nl = blob.find(b"\n", offset)
        if nl < 0:
            raise FileFormatError(f"{path}: truncated STFM header")
        lines.append(blob[offset:nl].decode("ascii", errors="replace"))
        offset = nl + 1
    if lines[0] != "STFM":
        raise FileFormatError(f"{path}: bad magic {lines[0]!r}")
    fields = dict(line.split("=", 1) for line in lines[1:])
    try:
        l = int(fields["l"])
        pr = int(fields["patch_rows"])
        pc = int(fields["patch_cols"])
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed STFM header") from exc
    if fields.get("order") != "patch-column-major":
        raise FileFormatError(f"{path}: unsupported vector order {fields.get('order')!r}")
    payload = blob[offset:]
    if len(payload) != l * l * 8:
        raise FileFormatError(f"{path}: expected {l * l * 8} matrix bytes, found {len(payload)}")
    omega = np.frombuffer(payload, dtype="<f8").reshape(l, l).copy()
    try:
        return SparsifyingTransform.from_matrix(omega, pr, pc)
    except Exception as exc:
        raise FileFormatError(f"{path}: stored transform is singular") from exc


# --------------------------------------------------------------------- manifest

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, seeds: dict,
                   inputs: list, outputs: list, timings_s: dict,
                   notes: dict | None = None) -> None:
    """Reproducibility record: config snapshot, seeds, file hashes, timings."""
    from . import __version__

    doc = {
        "tool": "lodct",
        "tool_version": __version__,
        "command": command,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "timings_s": timings_s,
    }
    if notes:
        doc["notes"] = notes
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def verify_manifest(path) -> list[str]:
    """Recompute every hash; returns a list of mismatch descriptions."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    problems = []
    base = Path(path).parent
    for section in ("inputs", "outputs"):
        for name, recorded in doc.get(section, {}).items():
            p = Path(name)
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                problems.append(f"{section}: {name} is missing")
                continue
            actual = sha256_file(p)
            if actual != recorded:
                problems.append(f"{section}: {name} hash mismatch "
                                f"(recorded {recorded[:12]}..., actual {actual[:12]}...)")
    return problems
