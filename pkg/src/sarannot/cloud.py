"""Point cloud container and its CSV representation."""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


class PointClass(enum.IntEnum):
    """Per-point class codes.

    Scene truth (ground/roof/facade/outlier) and annotation output
    (building/nonbuilding/unknown) share one vocabulary so a cloud can carry
    either without ambiguity.
    """

    UNKNOWN = -1
    NONBUILDING = 0
    BUILDING = 1
    GROUND = 2
    ROOF = 3
    FACADE = 4
    OUTLIER = 5


_CLASS_BY_NAME = {c.name.lower(): c for c in PointClass}


@dataclass
class PointCloud:
    """Geocoded 3-D points (UTM easting, northing, height).

    Attributes:
        xyz: (n, 3) float64 array.
        amplitude: optional (n,) float64 array.
        cls: optional (n,) int array of :class:`PointClass` codes.
    """

    xyz: np.ndarray
    amplitude: Optional[np.ndarray] = None
    cls: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point coordinates must be finite")
        if self.amplitude is not None:
            self.amplitude = np.asarray(self.amplitude, dtype=np.float64).reshape(-1)
            if len(self.amplitude) != n:
                raise ValueError("amplitude length does not match point count")
        if self.cls is not None:
            self.cls = np.asarray(self.cls, dtype=np.int64).reshape(-1)
            if len(self.cls) != n:
                raise ValueError("class length does not match point count")

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def easting(self) -> np.ndarray:
        return self.xyz[:, 0]

    @property
    def northing(self) -> np.ndarray:
        return self.xyz[:, 1]

    @property
    def height(self) -> np.ndarray:
        return self.xyz[:, 2]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def subset(self, index) -> "PointCloud":
        """Return the points selected by a boolean mask or index array."""
        return PointCloud(
            self.xyz[index],
            None if self.amplitude is None else self.amplitude[index],
            None if self.cls is None else self.cls[index],
            dict(self.meta),
        )

    def with_classes(self, cls: np.ndarray) -> "PointCloud":
        return PointCloud(self.xyz, self.amplitude, cls, dict(self.meta))

    def with_xyz(self, xyz: np.ndarray) -> "PointCloud":
        return PointCloud(xyz, self.amplitude, self.cls, dict(self.meta))

    def of_class(self, *classes: PointClass) -> "PointCloud":
        if self.cls is None:
            raise ValueError("cloud carries no class column")
        return self.subset(np.isin(self.cls, [int(c) for c in classes]))

    @staticmethod
    def concatenate(clouds: list["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return PointCloud.empty()
        xyz = np.concatenate([c.xyz for c in clouds])
        amp = None
        if all(c.amplitude is not None for c in clouds):
            amp = np.concatenate([c.amplitude for c in clouds])
        cls = None
        if all(c.cls is not None for c in clouds):
            cls = np.concatenate([c.cls for c in clouds])
        return PointCloud(xyz, amp, cls)


def format_csv(cloud: PointCloud) -> str:
    """Render ``easting,northing,height[,amplitude][,class]`` with one header line.

    Coordinates are fixed-point with six decimals; the class column holds
    lower-case class names.
    """
    header = ["easting", "northing", "height"]
    cols = [cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]]
    if cloud.amplitude is not None:
        header.append("amplitude")
        cols.append(cloud.amplitude)
    buf = io.StringIO()
    buf.write(",".join(header + (["class"] if cloud.cls is not None else [])) + "\n")
    names = None
    if cloud.cls is not None:
        names = [PointClass(int(c)).name.lower() for c in cloud.cls]
    for i in range(len(cloud)):
        row = ["%.6f" % c[i] for c in cols]
        if names is not None:
            row.append(names[i])
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def write_csv(path, cloud: PointCloud) -> None:
    from .fileio import atomic_write_text

    atomic_write_text(path, format_csv(cloud))


def parse_csv(text: str) -> PointCloud:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty point cloud file (missing header)")
    header = [h.strip().lower() for h in lines[0].split(",")]
    if header[:3] != ["easting", "northing", "height"]:
        raise ValueError(f"unexpected CSV header {lines[0]!r}")
    extra = header[3:]
    if extra not in ([], ["amplitude"], ["class"], ["amplitude", "class"]):
        raise ValueError(f"unexpected CSV columns {extra}")
    n = len(lines) - 1
    xyz = np.empty((n, 3))
    amp = np.empty(n) if "amplitude" in extra else None
    cls = np.empty(n, dtype=np.int64) if "class" in extra else None
    for k, ln in enumerate(lines[1:]):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ValueError(f"line {k + 2}: expected {len(header)} fields, got {len(parts)}")
        xyz[k] = [float(p) for p in parts[:3]]
        if amp is not None:
            amp[k] = float(parts[3])
        if cls is not None:
            name = parts[-1].strip().lower()
            if name in _CLASS_BY_NAME:
                cls[k] = _CLASS_BY_NAME[name]
            else:
                cls[k] = PointClass(int(name))
    return PointCloud(xyz, amp, cls)


def read_csv(path) -> PointCloud:
    return parse_csv(Path(path).read_text())
