"""Straight-track zero-Doppler SAR geometry.

The sensor flies along a straight line through ``track_origin`` with
direction ``heading`` at a constant ``altitude`` above the origin's height.
A world point is imaged at the along-track position of closest approach
(azimuth) and at its Euclidean distance from the sensor there (range).
Elevated points therefore land at shorter range than their ground
footprint, the layover effect that makes raw footprints useless as SAR
labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

# TerraSAR-X high-resolution spotlight values used in the Berlin experiments.
DEFAULT_RANGE_SPACING = 0.588
DEFAULT_AZIMUTH_SPACING = 1.1
DEFAULT_INCIDENCE_DEG = 36.0
DEFAULT_ALTITUDE = 514_000.0


class SideViolationError(ValueError):
    """Raised when a point lies on the non-illuminated side of the track."""


@dataclass(frozen=True)
class UtmPoint3:
    easting: float
    northing: float
    height: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.easting, self.northing, self.height)):
            raise ValueError("UTM coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.easting, self.northing, self.height])


@dataclass(frozen=True)
class SarCoord:
    azimuth: float
    range: float

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("slant range must be positive")


@dataclass(frozen=True)
class SensorGeometry:
    """Acquisition model mapping world points to azimuth-range pixels.

    Pixel columns run along azimuth and rows along slant range; ``width``
    and ``height`` are the image size in pixels.
    """

    track_origin: UtmPoint3
    heading: tuple[float, float]
    altitude: float = DEFAULT_ALTITUDE
    look_side: str = "right"
    incidence_deg: float = DEFAULT_INCIDENCE_DEG
    az_spacing: float = DEFAULT_AZIMUTH_SPACING
    rg_spacing: float = DEFAULT_RANGE_SPACING
    az0: float = 0.0
    rg0: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        hx, hy = (float(v) for v in self.heading)
        object.__setattr__(self, "heading", (hx, hy))
        if abs(math.hypot(hx, hy) - 1.0) > 1e-12:
            raise ValueError("heading must be a unit vector")
        if self.look_side not in ("left", "right"):
            raise ValueError("look_side must be 'left' or 'right'")
        if not 0.0 < self.incidence_deg < 90.0:
            raise ValueError("incidence angle must lie in (0, 90) degrees")
        if not (self.az_spacing > 0 and self.rg_spacing > 0):
            raise ValueError("pixel spacings must be positive")
        if not self.altitude > 0:
            raise ValueError("altitude must be positive")
        if self.width < 0 or self.height < 0:
            raise ValueError("image size must be non-negative")

    @property
    def sensor_height(self) -> float:
        return self.track_origin.height + self.altitude

    @property
    def cross_direction(self) -> np.ndarray:
        """Unit vector in the E-N plane pointing from the track to the scene."""
        hx, hy = self.heading
        if self.look_side == "right":
            return np.array([hy, -hx])
        return np.array([-hy, hx])

    @property
    def shape(self) -> tuple[int, int]:
        """Raster shape (rows, cols) = (range pixels, azimuth pixels)."""
        return (self.height, self.width)

    @classmethod
    def framing(
        cls,
        extent: tuple[float, float, float, float],
        ground_height: float = 0.0,
        max_height: float = 0.0,
        heading: tuple[float, float] = (0.0, 1.0),
        look_side: str = "right",
        incidence_deg: float = DEFAULT_INCIDENCE_DEG,
        altitude: float = DEFAULT_ALTITUDE,
        az_spacing: float = DEFAULT_AZIMUTH_SPACING,
        rg_spacing: float = DEFAULT_RANGE_SPACING,
        margin: int = 4,
    ) -> "SensorGeometry":
        """Build a geometry imaging ``extent`` = (emin, nmin, emax, nmax).

        The track is placed so the extent center is seen at ``incidence_deg``
        from ``altitude`` above ``ground_height``, and the pixel frame is sized
        to hold every point of the extent between ``ground_height`` and
        ``max_height`` plus ``margin`` pixels.
        """
        emin, nmin, emax, nmax = extent
        center = np.array([(emin + emax) / 2, (nmin + nmax) / 2])
        proto = cls(UtmPoint3(0.0, 0.0, ground_height), heading, altitude, look_side, incidence_deg,
                    az_spacing, rg_spacing)
        offset = altitude * math.tan(math.radians(incidence_deg))
        origin_xy = center - offset * proto.cross_direction
        proto = replace(proto, track_origin=UtmPoint3(float(origin_xy[0]), float(origin_xy[1]), ground_height))
        corners = np.array([[e, n, h] for e in (emin, emax) for n in (nmin, nmax)
                            for h in (ground_height, max_height)])
        az, rg = project_points(corners, proto)
        az0 = math.floor(az.min() / az_spacing - margin) * az_spacing
        rg0 = math.floor(rg.min() / rg_spacing - margin) * rg_spacing
        width = int(math.ceil((az.max() - az0) / az_spacing)) + margin
        height = int(math.ceil((rg.max() - rg0) / rg_spacing)) + margin
        return replace(proto, az0=az0, rg0=rg0, width=width, height=height)

    def to_dict(self) -> dict:
        return {
            "track_origin": [self.track_origin.easting, self.track_origin.northing, self.track_origin.height],
            "heading": list(self.heading),
            "altitude": self.altitude,
            "look_side": self.look_side,
            "incidence_deg": self.incidence_deg,
            "az_spacing": self.az_spacing,
            "rg_spacing": self.rg_spacing,
            "az0": self.az0,
            "rg0": self.rg0,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorGeometry":
        d = dict(d)
        d["track_origin"] = UtmPoint3(*[float(v) for v in d["track_origin"]])
        d["heading"] = tuple(float(v) for v in d["heading"])
        for k in ("width", "height"):
            if k in d:
                d[k] = int(d[k])
        return cls(**d)


def project_points(xyz: np.ndarray, g: SensorGeometry, check_side: bool = True):
    """Vectorized projection of an (n, 3) array; returns (azimuth, range)."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    o = g.track_origin
    rel = xyz[:, :2] - np.array([o.easting, o.northing])
    along = rel @ np.asarray(g.heading)
    cross = rel @ g.cross_direction
    if check_side and np.any(cross < 0):
        bad = int(np.flatnonzero(cross < 0)[0])
        raise SideViolationError(
            f"point {xyz[bad].tolist()} lies on the {('left' if g.look_side == 'right' else 'right')} "
            "side of the track")
    dz = g.sensor_height - xyz[:, 2]
    return along, np.hypot(cross, dz)


def project_to_sar(p: UtmPoint3, g: SensorGeometry) -> SarCoord:
    az, rg = project_points(p.as_array(), g)
    return SarCoord(float(az[0]), float(rg[0]))


def sar_to_pixel(c: SarCoord, g: SensorGeometry) -> Optional[tuple[int, int]]:
    """Return (col, row) of the pixel containing ``c``, or None when out of frame."""
    col, row, inside = pixels_of(np.array([c.azimuth]), np.array([c.range]), g)
    if not inside[0]:
        return None
    return int(col[0]), int(row[0])


def pixels_of(azimuth: np.ndarray, rng: np.ndarray, g: SensorGeometry):
    """Vectorized floor mapping; returns (cols, rows, inside)."""
    col = np.floor((np.asarray(azimuth) - g.az0) / g.az_spacing).astype(np.int64)
    row = np.floor((np.asarray(rng) - g.rg0) / g.rg_spacing).astype(np.int64)
    inside = (col >= 0) & (col < g.width) & (row >= 0) & (row < g.height)
    return col, row, inside


def pixel_center(col: int, row: int, g: SensorGeometry) -> SarCoord:
    return SarCoord(g.az0 + (col + 0.5) * g.az_spacing, g.rg0 + (row + 0.5) * g.rg_spacing)


def backproject_to_height(azimuth: np.ndarray, rng: np.ndarray, height, g: SensorGeometry) -> np.ndarray:
    """World E/N of the point at ``height`` imaged at (azimuth, range).

    Returns an (n, 2) array; NaN where the range is shorter than the vertical
    distance from the sensor to ``height``.
    """
    az = np.asarray(azimuth, dtype=np.float64)
    rg = np.asarray(rng, dtype=np.float64)
    dz = g.sensor_height - np.asarray(height, dtype=np.float64)
    sq = rg**2 - dz**2
    cross = np.where(sq >= 0, np.sqrt(np.maximum(sq, 0.0)), np.nan)
    o = np.array([g.track_origin.easting, g.track_origin.northing])
    return o + az[..., None] * np.asarray(g.heading) + cross[..., None] * g.cross_direction
