"""Footprint-driven annotation.

Cloud points are classified by ray casting against building footprints,
building points are projected into the SAR frame, and the sparse hit mask is
densified by binary dilation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import parallel
from .cloud import PointClass, PointCloud
from .sargeom import SensorGeometry, backproject_to_height, pixels_of, project_points

logger = logging.getLogger(__name__)


class PolygonError(ValueError):
    pass


def _segments_properly_intersect(a, b, c, d) -> np.ndarray:
    """Elementwise test for segments a-b vs c-d (arrays of shape (k, 2))."""

    def orient(p, q, r):
        return np.sign((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                       - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    crossing = (o1 * o2 < 0) & (o3 * o4 < 0)

    def on_segment(p, q, r):
        return ((np.minimum(p[..., 0], q[..., 0]) <= r[..., 0]) & (r[..., 0] <= np.maximum(p[..., 0], q[..., 0]))
                & (np.minimum(p[..., 1], q[..., 1]) <= r[..., 1]) & (r[..., 1] <= np.maximum(p[..., 1], q[..., 1])))

    touching = (((o1 == 0) & on_segment(a, b, c)) | ((o2 == 0) & on_segment(a, b, d))
                | ((o3 == 0) & on_segment(c, d, a)) | ((o4 == 0) & on_segment(c, d, b)))
    return crossing | touching


def ring_is_simple(ring: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed ring touch."""
    k = len(ring)
    a, b = ring, np.roll(ring, -1, axis=0)
    i, j = np.triu_indices(k, 2)
    keep = ~((i == 0) & (j == k - 1))
    i, j = i[keep], j[keep]
    if len(i) == 0:
        return True
    return not np.any(_segments_properly_intersect(a[i], b[i], a[j], b[j]))


def _clean_ring(ring) -> np.ndarray:
    r = np.asarray(ring, dtype=np.float64).reshape(-1, 2)
    if len(r) > 1 and np.array_equal(r[0], r[-1]):
        r = r[:-1]
    return r


@dataclass
class FootprintPolygon:
    """Outer ring plus optional holes (inner yards), in UTM meters.

    Rings are stored open (the closing vertex is implicit).
    """

    outer: np.ndarray
    holes: list = field(default_factory=list)
    check_simple: bool = True

    def __post_init__(self):
        self.outer = _clean_ring(self.outer)
        self.holes = [_clean_ring(h) for h in self.holes]
        for ring in [self.outer, *self.holes]:
            if len(ring) < 3:
                raise PolygonError("a ring needs at least 3 vertices")
            if not np.all(np.isfinite(ring)):
                raise PolygonError("ring vertices must be finite")
            if np.any(np.all(ring == np.roll(ring, -1, axis=0), axis=1)):
                raise PolygonError("ring has two identical consecutive vertices")
            if self.check_simple and not ring_is_simple(ring):
                raise PolygonError("ring is self-intersecting")

    @property
    def rings(self) -> list:
        return [self.outer, *self.holes]

    @property
    def bounds(self) -> np.ndarray:
        """(emin, nmin, emax, nmax) of the outer ring."""
        return np.concatenate([self.outer.min(axis=0), self.outer.max(axis=0)])

    def area(self) -> float:
        def shoelace(r):
            x, y = r[:, 0], r[:, 1]
            return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

        return shoelace(self.outer) - sum(shoelace(h) for h in self.holes)


def _ring_crossings(xy: np.ndarray, ring: np.ndarray) -> np.ndarray:
    px, py = xy[:, 0], xy[:, 1]
    odd = np.zeros(len(xy), dtype=bool)
    b = np.roll(ring, -1, axis=0)
    for (ax, ay), (bx, by) in zip(ring, b):
        # Half-open rule: an edge counts when exactly one endpoint is strictly above the ray.
        straddles = (ay > py) != (by > py)
        if not straddles.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
        odd ^= straddles & (px < x_cross)
    return odd


def points_in_polygon(xy: np.ndarray, poly: FootprintPolygon) -> np.ndarray:
    """Even-odd ray casting (ray toward +easting) over all rings of ``poly``."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    inside = np.zeros(len(xy), dtype=bool)
    for ring in poly.rings:
        inside ^= _ring_crossings(xy, ring)
    return inside


def point_in_polygon(p, poly: FootprintPolygon) -> bool:
    return bool(points_in_polygon(np.asarray(p, dtype=np.float64), poly)[0])


class FootprintIndex:
    """Uniform grid over footprint bounding boxes.

    The cell size defaults to the median bounding-box diagonal; every
    footprint is registered in each cell its box overlaps, so a point only
    has to be tested against the footprints of its own cell.
    """

    def __init__(self, polygons: list[FootprintPolygon], cell_size: float | None = None):
        self.polygons = list(polygons)
        if not self.polygons:
            self.cell_size = 1.0
            self.cells = {}
            return
        bounds = np.array([p.bounds for p in self.polygons])
        if cell_size is None:
            diag = np.hypot(bounds[:, 2] - bounds[:, 0], bounds[:, 3] - bounds[:, 1])
            cell_size = float(np.median(diag))
            if not cell_size > 0:
                cell_size = 1.0
        self.cell_size = cell_size
        self.bounds = bounds
        lo = np.floor(bounds[:, :2] / cell_size).astype(np.int64)
        hi = np.floor(bounds[:, 2:] / cell_size).astype(np.int64)
        self.cells: dict[tuple[int, int], list[int]] = {}
        for k in range(len(self.polygons)):
            for cx in range(lo[k, 0], hi[k, 0] + 1):
                for cy in range(lo[k, 1], hi[k, 1] + 1):
                    self.cells.setdefault((cx, cy), []).append(k)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Boolean mask: point lies in at least one footprint."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        out = np.zeros(len(xy), dtype=bool)
        if not self.cells or len(xy) == 0:
            return out
        cell = np.floor(xy / self.cell_size).astype(np.int64)
        order = np.lexsort((cell[:, 1], cell[:, 0]))
        sc = cell[order]
        breaks = np.flatnonzero(np.any(np.diff(sc, axis=0) != 0, axis=1)) + 1
        starts = np.concatenate([[0], breaks])
        ends = np.concatenate([breaks, [len(sc)]])
        for s, e in zip(starts, ends):
            cands = self.cells.get((int(sc[s, 0]), int(sc[s, 1])))
            if not cands:
                continue
            idx = order[s:e]
            pts = xy[idx]
            hit = np.zeros(len(idx), dtype=bool)
            for k in cands:
                b = self.bounds[k]
                box = ((pts[:, 0] >= b[0]) & (pts[:, 0] <= b[2]) & (pts[:, 1] >= b[1]) & (pts[:, 1] <= b[3])
                       & ~hit)
                if box.any():
                    hit[box] |= points_in_polygon(pts[box], self.polygons[k])
            out[idx] = hit
        return out


def _contains_exhaustive(xy: np.ndarray, polygons) -> np.ndarray:
    out = np.zeros(len(xy), dtype=bool)
    for poly in polygons:
        out |= points_in_polygon(xy, poly)
    return out


def classify_cloud(cloud: PointCloud, polygons: list[FootprintPolygon], use_index: bool = True,
                   chunk: int = 65536) -> PointCloud:
    """Label each point BUILDING if it falls in any footprint, else NONBUILDING."""
    xy = cloud.xyz[:, :2]
    if use_index:
        index = FootprintIndex(polygons)
        parts = parallel.map_chunks(lambda sl: index.contains(xy[sl]), len(xy), chunk)
    else:
        parts = parallel.map_chunks(lambda sl: _contains_exhaustive(xy[sl], polygons), len(xy), chunk)
    inside = np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
    cls = np.where(inside, PointClass.BUILDING, PointClass.NONBUILDING).astype(np.int64)
    return cloud.with_classes(cls)


@dataclass
class BuildingMask:
    """Binary raster of shape (geometry.height, geometry.width); 1 = building."""

    raster: np.ndarray
    n_points: int = 0
    n_out_of_frame: int = 0

    @property
    def shape(self):
        return self.raster.shape


def rasterize_building_points(cloud: PointCloud, g: SensorGeometry,
                              classes=(PointClass.BUILDING,)) -> BuildingMask:
    """Project points of ``classes`` into the SAR frame and mark their pixels."""
    mask = np.zeros(g.shape, dtype=np.uint8)
    if cloud.cls is None:
        raise ValueError("cloud has no class column to select building points from")
    pts = cloud.xyz[np.isin(cloud.cls, [int(c) for c in classes])]
    if len(pts) == 0:
        return BuildingMask(mask, 0, 0)
    az, rg = project_points(pts, g)
    col, row, inside = pixels_of(az, rg, g)
    mask[row[inside], col[inside]] = 1
    n_out = int((~inside).sum())
    if n_out:
        logger.info("%d of %d building points fall outside the SAR frame", n_out, len(pts))
    return BuildingMask(mask, len(pts), n_out)


def dilate(mask, radius: int = 1, iterations: int = 1):
    """Binary dilation with a (2r+1)^2 square, repeated ``iterations`` times.

    Pixels outside the raster count as background.  Accepts a
    :class:`BuildingMask` or a bare array and returns the same kind.
    """
    if radius < 0 or iterations < 0:
        raise ValueError("radius and iterations must be non-negative")
    raster = mask.raster if isinstance(mask, BuildingMask) else np.asarray(mask)
    out = raster != 0
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    for _ in range(iterations):
        out = ndimage.binary_dilation(out, structure=structure, border_value=0)
    out = out.astype(np.uint8)
    if isinstance(mask, BuildingMask):
        return BuildingMask(out, mask.n_points, mask.n_out_of_frame)
    return out


def analytic_roof_mask(buildings, g: SensorGeometry) -> np.ndarray:
    """Pixels whose center, placed at a building's roof height, lies on that roof.

    ``buildings`` holds (FootprintPolygon, roof_height) pairs.  This is the
    ideal building mask of a scene of flat-roofed prisms, ignoring
    occlusion; it serves as ground truth for synthetic scenes.
    """
    rows, cols = np.indices(g.shape)
    az = g.az0 + (cols.ravel() + 0.5) * g.az_spacing
    rg = g.rg0 + (rows.ravel() + 0.5) * g.rg_spacing
    mask = np.zeros(rows.size, dtype=bool)
    for poly, roof_h in buildings:
        en = backproject_to_height(az, rg, roof_h, g)
        ok = np.all(np.isfinite(en), axis=1)
        hit = np.zeros(rows.size, dtype=bool)
        hit[ok] = points_in_polygon(en[ok], poly)
        mask |= hit
    return mask.reshape(g.shape).astype(np.uint8)


# ---------------------------------------------------------------------------
# GeoJSON
# ---------------------------------------------------------------------------

def _polygons_from_geometry(geom: dict) -> list[list]:
    kind = geom.get("type")
    if kind == "Polygon":
        return [geom["coordinates"]]
    if kind == "MultiPolygon":
        return list(geom["coordinates"])
    if kind == "GeometryCollection":
        out = []
        for g in geom.get("geometries", []):
            out.extend(_polygons_from_geometry(g))
        return out
    return []


def parse_footprints(doc: dict) -> list[tuple[FootprintPolygon, dict]]:
    """Footprints from a GeoJSON FeatureCollection, Feature, or bare geometry.

    Returns (polygon, properties) pairs; only the first two coordinates of
    each vertex are used.  Non-areal geometries are skipped.
    """
    if doc.get("type") == "FeatureCollection":
        features = doc.get("features", [])
    elif doc.get("type") == "Feature":
        features = [doc]
    else:
        features = [{"type": "Feature", "geometry": doc, "properties": {}}]
    out = []
    for feat in features:
        geom = feat.get("geometry") or {}
        props = dict(feat.get("properties") or {})
        for rings in _polygons_from_geometry(geom):
            rings = [np.asarray(r, dtype=np.float64)[:, :2] for r in rings]
            out.append((FootprintPolygon(rings[0], rings[1:]), props))
    return out


def read_footprints(path) -> list[tuple[FootprintPolygon, dict]]:
    return parse_footprints(json.loads(Path(path).read_text()))


def footprints_to_geojson(items: list[tuple[FootprintPolygon, dict]]) -> dict:
    features = []
    for poly, props in items:
        rings = []
        for r in poly.rings:
            closed = np.vstack([r, r[:1]])
            rings.append([[float(x), float(y)] for x, y in closed])
        features.append({"type": "Feature", "properties": dict(props),
                         "geometry": {"type": "Polygon", "coordinates": rings}})
    return {"type": "FeatureCollection", "features": features}
