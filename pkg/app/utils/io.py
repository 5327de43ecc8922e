"""
Artifact I/O
HFLD1 field dumps, CSV tables and the run manifest.

HFLD1 layout (little-endian):
    b"HFLD1" | uint32 ndim | uint32 counts[ndim] | float64 extents[ndim]
    | uint8 repr tag | complex64 values (C order)
"""
import csv
import hashlib
import json
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.errors import ConfigError
from app.services.field import Field, GridSpec, Repr


MAGIC = b"HFLD1"
REPR_TAGS = {Repr.PHYSICAL: 0, Repr.PARTIAL: 1, Repr.SPECTRAL: 2}
TAG_REPRS = {v: k for k, v in REPR_TAGS.items()}


# ============ HFLD1 ============

def dump_field(f: Field, path: str) -> str:
    ndim = len(f.grid.counts)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([ndim], dtype="<u4").tobytes())
        fh.write(np.array(f.grid.counts, dtype="<u4").tobytes())
        fh.write(np.array(f.grid.extents, dtype="<f8").tobytes())
        fh.write(np.array([REPR_TAGS[f.repr]], dtype="u1").tobytes())
        fh.write(np.ascontiguousarray(f.values, dtype="<c8").tobytes())
    return path


def load_field(path: str) -> Field:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ConfigError(f"{path} is not an HFLD1 file")
    offset = len(MAGIC)
    ndim = int(np.frombuffer(data, dtype="<u4", count=1, offset=offset)[0])
    offset += 4
    counts = np.frombuffer(data, dtype="<u4", count=ndim, offset=offset)
    offset += 4 * ndim
    extents = np.frombuffer(data, dtype="<f8", count=ndim, offset=offset)
    offset += 8 * ndim
    tag = int(np.frombuffer(data, dtype="u1", count=1, offset=offset)[0])
    offset += 1
    if tag not in TAG_REPRS:
        raise ConfigError(f"{path}: unknown representation tag {tag}")
    grid = GridSpec(tuple(extents.tolist()), tuple(int(n) for n in counts))
    values = np.frombuffer(data, dtype="<c8", count=int(np.prod(counts)), offset=offset)
    return Field(grid, values.reshape(grid.shape).astype(complex), TAG_REPRS[tag])


# ============ CSV ============

def _format(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path: str, rows: Sequence[Dict[str, Any]], columns: Optional[List[str]] = None) -> str:
    """Write dict rows; columns default to the first row's keys."""
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(c, "")) for c in columns])
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def export_slice_csv(f: Field, path: str, last_index: int) -> str:
    """One fixed last-axis index (s node or alpha) of a d = 1 field: rows (x, y, re, im)."""
    if f.grid.d != 1:
        raise ConfigError("slice export is defined for d = 1 fields")
    x, y = f.grid.nodes(0), f.grid.nodes(1)
    values = f.values[..., last_index]
    rows = [
        {"x": float(x[i]), "y": float(y[j]), "re": float(values[i, j].real), "im": float(values[i, j].imag)}
        for i in range(x.size)
        for j in range(y.size)
    ]
    return write_csv(path, rows, ["x", "y", "re", "im"])


def path_rows(times: np.ndarray, points: np.ndarray) -> List[Dict[str, float]]:
    """Rows (time, x.., y.., s) for a sampled path."""
    d = (points.shape[1] - 1) // 2
    names = [f"x{k + 1}" for k in range(d)] + [f"y{k + 1}" for k in range(d)] + ["s"]
    rows = []
    for t, p in zip(times, points):
        row = {"time": float(t)}
        row.update({name: float(v) for name, v in zip(names, p)})
        rows.append(row)
    return rows


# ============ JSON and manifest ============

def write_json(path: str, payload: Any) -> str:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(directory: str, exclude: Iterable[str] = ("manifest.json",)) -> List[Dict[str, Any]]:
    """Sorted (file, bytes, sha256) entries for every file under `directory`."""
    skip = set(exclude)
    entries = []
    for root, _, files in os.walk(directory):
        for name in files:
            full = os.path.join(root, name)
            rel = os.path.relpath(full, directory)
            if rel in skip:
                continue
            entries.append({"file": rel, "bytes": os.path.getsize(full), "sha256": sha256_file(full)})
    return sorted(entries, key=lambda e: e["file"])
