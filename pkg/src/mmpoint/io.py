"""File formats: 16-bit PGM with JSON sidecars, point-cloud CSV/PLY, JSON lines."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mmpoint.detection import PointCloud, RadarPoint
from mmpoint.errors import SchemaError

CLOUD_HEADER = ("frame", "r", "az", "el", "v", "intensity", "x", "y", "z")
PGM_MAX = 65535


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: str | Path, obj) -> None:
    """Deterministic JSON (sorted keys, fixed separators, trailing newline)."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, separators=(",", ": ")) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------------------ PGM


def write_pgm(path: str | Path, values: np.ndarray, axes: dict | None = None, scale: float | None = None) -> dict:
    """Write a 2-D non-negative array as a binary 16-bit PGM plus ``<path>.json``.

    Values are mapped linearly so ``scale`` (default: the array maximum)
    becomes 65535. Rows are written top to bottom, the last axis fastest.
    Returns the sidecar dictionary.
    """
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    top = float(a.max(initial=0.0)) if scale is None else float(scale)
    pixels = np.zeros(a.shape) if top <= 0 else np.clip(np.rint(a / top * PGM_MAX), 0, PGM_MAX)
    height, width = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{PGM_MAX}\n".encode("ascii"))
        fh.write(pixels.astype(">u2").tobytes())
    meta = {
        "shape": [height, width],
        "scale": top / PGM_MAX if top > 0 else 0.0,
        "max_value": top,
        "axes": {k: [float(v) for v in np.asarray(ax).ravel()] for k, ax in (axes or {}).items()},
    }
    write_json(sidecar_path(path), meta)
    return meta


def sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def read_pgm(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read a PGM written by :func:`write_pgm`; returns (values, sidecar).

    Values are rescaled to physical units when a sidecar is present.
    """
    data = Path(path).read_bytes()
    parts, pos = [], 0
    while len(parts) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        parts.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if parts[0] != "P5":
        raise SchemaError("not a binary PGM", str(path))
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    raw = np.frombuffer(data[pos:], dtype=dtype, count=width * height).reshape(height, width).astype(float)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    scale = meta.get("scale", 1.0 / maxval)
    return raw * scale, meta


# ---------------------------------------------------------------- point cloud


def cloud_rows(clouds: Iterable[PointCloud]) -> list[list[str]]:
    rows = []
    for cloud in clouds:
        for p in cloud:
            rows.append([str(p.frame_index)] + [_fmt(v) for v in (p.range, p.azimuth, p.elevation, p.v_radial, p.intensity, p.x, p.y, p.z)])
    return rows


def write_cloud_csv(path: str | Path, clouds: Sequence[PointCloud]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLOUD_HEADER)
        w.writerows(cloud_rows(clouds))


def read_cloud_csv(path: str | Path) -> list[RadarPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CLOUD_HEADER:
            raise SchemaError(f"unexpected header {reader.fieldnames}", str(path))
        return [
            RadarPoint(float(r["r"]), float(r["az"]), float(r["el"]), float(r["v"]), float(r["intensity"]),
                       float(r["x"]), float(r["y"]), float(r["z"]), int(r["frame"]))
            for r in reader
        ]


def write_ply(path: str | Path, clouds: Sequence[PointCloud]) -> None:
    points = [p for c in clouds for p in c]
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property float v",
        "property float intensity",
        "end_header",
    ]
    lines += [" ".join(_fmt(v) for v in (p.x, p.y, p.z, p.v_radial, p.intensity)) for p in points]
    Path(path).write_text("\n".join(lines) + "\n")


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
