"""Point clouds and their on-disk formats.

Binary format (little-endian), extension ``.pcf``:
    magic "PCF1" | u32 point count | u8 label flag |
    count x 3 float32 coordinates | count x u16 labels (iff flag = 1)

ASCII format (any other extension): one ``x y z [label]`` line per point,
whitespace separated, ``#`` starts a comment.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError

MAGIC = b"PCF1"


@dataclass
class PointCloud:
    """An ordered set of 3D points with optional per-point integer labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ContractError(f"points must be [n, 3], got {self.points.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.intp)
            if self.labels.shape != (len(self.points),):
                raise ContractError(
                    f"labels shape {self.labels.shape} does not match {len(self.points)} points"
                )

    def __len__(self) -> int:
        return len(self.points)


def write_cloud(path, cloud: PointCloud):
    """Write a cloud; `.pcf` selects the binary format, anything else ASCII."""
    path = Path(path)
    if not np.all(np.isfinite(cloud.points)):
        raise ContractError("refusing to write non-finite coordinates")
    if path.suffix == ".pcf":
        flag = 0 if cloud.labels is None else 1
        parts = [MAGIC, struct.pack("<IB", len(cloud), flag)]
        parts.append(cloud.points.astype("<f4").tobytes())
        if flag:
            parts.append(cloud.labels.astype("<u2").tobytes())
        path.write_bytes(b"".join(parts))
    else:
        lines = []
        for i, p in enumerate(cloud.points):
            line = " ".join(format(v, ".17g") for v in p)
            if cloud.labels is not None:
                line += f" {int(cloud.labels[i])}"
            lines.append(line)
        path.write_text("\n".join(lines) + "\n")


def _read_binary(path: Path, raw: bytes) -> PointCloud:
    if len(raw) < 9:
        raise FormatError(path, len(raw), "truncated header")
    count, flag = struct.unpack_from("<IB", raw, 4)
    if flag not in (0, 1):
        raise FormatError(path, 8, f"label flag must be 0 or 1, got {flag}")
    offset = 9
    need = count * 12
    if len(raw) < offset + need:
        raise FormatError(path, len(raw), f"truncated coordinates, need {offset + need} bytes")
    points = np.frombuffer(raw, dtype="<f4", count=count * 3, offset=offset)
    points = points.reshape(count, 3).astype(np.float64)
    offset += need
    labels = None
    if flag:
        if len(raw) < offset + count * 2:
            raise FormatError(path, len(raw), "truncated labels")
        labels = np.frombuffer(raw, dtype="<u2", count=count, offset=offset).astype(np.intp)
        offset += count * 2
    if len(raw) != offset:
        raise FormatError(path, offset, f"{len(raw) - offset} trailing bytes")
    return PointCloud(points, labels)


def _read_ascii(path: Path, raw: bytes) -> PointCloud:
    points, labels = [], []
    offset = 0
    for line in raw.split(b"\n"):
        text = line.split(b"#", 1)[0].strip()
        if text:
            fields = text.split()
            if len(fields) not in (3, 4):
                raise FormatError(path, offset, f"expected 'x y z [label]', got {len(fields)} fields")
            try:
                xyz = [float(v) for v in fields[:3]]
                label = int(fields[3]) if len(fields) == 4 else None
            except ValueError:
                raise FormatError(path, offset, f"unparseable line {text[:40]!r}")
            points.append(xyz)
            labels.append(label)
        offset += len(line) + 1
    if not points:
        raise FormatError(path, 0, "no points in file")
    has_labels = [l is not None for l in labels]
    if any(has_labels) and not all(has_labels):
        raise FormatError(path, 0, "labels present on only some lines")
    return PointCloud(np.array(points), np.array(labels) if all(has_labels) else None)


def read_cloud(path) -> PointCloud:
    """Read either format back; validates finiteness and structure."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        cloud = _read_binary(path, raw)
    else:
        cloud = _read_ascii(path, raw)
    if not np.all(np.isfinite(cloud.points)):
        raise ContractError(f"{path}: non-finite coordinates")
    return cloud
