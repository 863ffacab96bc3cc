"""Optical / TomoSAR point-cloud co-registration and label transfer.

Pipeline: rasterize the optical cloud to mean heights and the TomoSAR cloud
to point densities, take Sobel edges of both, align them horizontally by
normalized cross-correlation and vertically by height-histogram
correlation, drop TomoSAR facade points, refine with Huber-weighted ICP,
and finally carry optical class labels over to the TomoSAR points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import binary_dilation
from scipy.spatial import cKDTree

from . import parallel
from .cloud import PointClass, PointCloud
from .fileio import GridFrame


class DegenerateCorrelationError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


@dataclass
class HeightRaster:
    values: np.ndarray  # NaN where invalid
    valid: np.ndarray
    frame: GridFrame


@dataclass
class DensityRaster:
    counts: np.ndarray
    frame: GridFrame


@dataclass
class EdgeRaster:
    values: np.ndarray
    valid: np.ndarray
    frame: Optional[GridFrame] = None


def _resolve_frame(cloud: PointCloud, cell_size: float, frame: Optional[GridFrame]) -> GridFrame:
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    if frame is not None:
        return frame
    return GridFrame.covering(cloud.xyz[:, :2], cell_size)


def _bin_points(cloud: PointCloud, frame: GridFrame):
    r, c, inside = frame.cell_index(cloud.xyz[:, :2])
    flat = r[inside] * frame.cols + c[inside]
    return flat, inside


def rasterize_mean_height(cloud: PointCloud, cell_size: float, frame: Optional[GridFrame] = None) -> HeightRaster:
    frame = _resolve_frame(cloud, cell_size, frame)
    n_cells = frame.rows * frame.cols
    flat, inside = _bin_points(cloud, frame)
    counts = np.bincount(flat, minlength=n_cells)
    sums = np.bincount(flat, weights=cloud.height[inside], minlength=n_cells)
    valid = counts > 0
    values = np.full(n_cells, np.nan)
    values[valid] = sums[valid] / counts[valid]
    return HeightRaster(values.reshape(frame.shape), valid.reshape(frame.shape), frame)


def rasterize_density(cloud: PointCloud, cell_size: float, frame: Optional[GridFrame] = None) -> DensityRaster:
    frame = _resolve_frame(cloud, cell_size, frame)
    flat, _ = _bin_points(cloud, frame)
    counts = np.bincount(flat, minlength=frame.rows * frame.cols)
    return DensityRaster(counts.reshape(frame.shape), frame)


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def sobel_edges(raster, valid: Optional[np.ndarray] = None) -> EdgeRaster:
    """Sobel gradient magnitude with replicate padding.

    ``raster`` may be a HeightRaster, DensityRaster, or bare array.  Invalid
    cells enter the convolution as 0 and are flagged invalid in the output.
    """
    frame = getattr(raster, "frame", None)
    if isinstance(raster, HeightRaster):
        values, valid = raster.values, raster.valid
    elif isinstance(raster, DensityRaster):
        values = raster.counts
    else:
        values = raster
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 3 or values.shape[1] < 3:
        raise ValueError("Sobel filtering needs a raster of at least 3x3 cells")
    if valid is None:
        valid = np.isfinite(values)
    x = np.where(valid, values, 0.0)
    p = np.pad(x, 1, mode="edge")
    rows, cols = x.shape
    # Separable form: difference first, then smooth, so flat regions give exactly 0.
    dx = p[:, 2:] - p[:, :-2]
    dy = p[2:, :] - p[:-2, :]
    gx = dx[:-2, :] + 2.0 * dx[1:-1, :] + dx[2:, :]
    gy = dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]
    mag = np.sqrt(gx * gx + gy * gy)
    return EdgeRaster(np.where(valid, mag, 0.0), valid.copy(), frame)


def _zncc_at(a, b, dx, dy):
    rows, cols = a.shape
    r0, r1 = max(0, dy), min(rows, rows + dy)
    c0, c1 = max(0, dx), min(cols, cols + dx)
    if r1 - r0 < 1 or c1 - c0 < 1:
        return None
    pa = a[r0:r1, c0:c1]
    pb = b[r0 - dy:r1 - dy, c0 - dx:c1 - dx]
    da = pa - pa.mean()
    db = pb - pb.mean()
    denom = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if denom == 0.0:
        return None
    return float(np.sum(da * db)) / denom


def coarse_align_xy(edges_a, edges_b, max_shift: int = 10, tie_tol: float = 1e-12):
    """Integer shift (dx, dy) of ``edges_b`` that best matches ``edges_a``.

    Shifting b by (dx, dy) moves b[r, c] to (r + dy, c + dx); the score is
    the zero-normalized cross-correlation over the overlap.  Ties go to the
    smallest shift norm, then lexicographically smallest (dx, dy).
    """
    a = np.asarray(getattr(edges_a, "values", edges_a), dtype=np.float64)
    b = np.asarray(getattr(edges_b, "values", edges_b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"edge images differ in shape: {a.shape} vs {b.shape}")
    if max_shift < 0:
        raise ValueError("max_shift must be non-negative")
    cands = [(dx, dy) for dx in range(-max_shift, max_shift + 1) for dy in range(-max_shift, max_shift + 1)]
    cands.sort(key=lambda s: (s[0] ** 2 + s[1] ** 2, s[0], s[1]))
    best, best_score = None, -math.inf
    for dx, dy in cands:
        score = _zncc_at(a, b, dx, dy)
        if score is not None and score > best_score + tie_tol:
            best, best_score = (dx, dy), score
    if best is None:
        raise DegenerateCorrelationError("every candidate overlap has zero variance")
    return best[0], best[1], best_score


def shift_to_metric(dx: int, dy: int, cell_size: float) -> tuple[float, float]:
    """Convert a (dx, dy) cell shift on a north-up raster to (dE, dN) meters."""
    return dx * cell_size, -dy * cell_size


def height_histograms(heights_a, heights_b, bin_size: float):
    ha = np.asarray(heights_a, dtype=np.float64)
    hb = np.asarray(heights_b, dtype=np.float64)
    lo = min(ha.min(), hb.min())
    hi = max(ha.max(), hb.max())
    nbins = int(math.floor((hi - lo) / bin_size)) + 1
    edges = lo + bin_size * np.arange(nbins + 1)
    return np.histogram(ha, edges)[0], np.histogram(hb, edges)[0], edges


def coarse_align_z(cloud_a: PointCloud, cloud_b: PointCloud, bin_size: float = 0.5) -> float:
    """Vertical shift for ``cloud_b`` maximizing height-histogram correlation.

    Lags are whole bins; ties go to the smallest |lag|, then the lower lag.
    """
    if not bin_size > 0:
        raise ValueError("bin size must be positive")
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise ValueError("cannot align an empty cloud")
    ha, hb, _ = height_histograms(cloud_a.height, cloud_b.height, bin_size)
    n = len(ha)
    # np.correlate(ha, hb, "full")[k + n - 1] = sum_i ha[i + k] hb[i], i.e. b shifted up by k bins.
    corr = np.correlate(ha.astype(np.float64), hb.astype(np.float64), mode="full")
    lags = np.arange(-(n - 1), n)
    best = max(range(len(lags)), key=lambda i: (corr[i], -abs(lags[i]), -lags[i]))
    return float(lags[best] * bin_size)


def remove_facade_points(cloud: PointCloud, cell_size: float = 1.0, spread_threshold: float = 3.0,
                         frame: Optional[GridFrame] = None, dilate: int = 0) -> PointCloud:
    """Drop every point of cells whose height spread (max - min) exceeds the threshold.

    ``dilate`` grows the flagged cell set by that many 8-connected rings, which
    catches the few facade points that land alone in a neighboring cell (a
    facade crossing a cell corner leaves too few points there to show spread).
    """
    if not (cell_size > 0 and spread_threshold > 0):
        raise ValueError("cell size and spread threshold must be positive")
    if dilate < 0:
        raise ValueError("dilate must be non-negative")
    if len(cloud) == 0:
        return cloud
    frame = _resolve_frame(cloud, cell_size, frame)
    r, c, inside = frame.cell_index(cloud.xyz[:, :2])
    flat = np.where(inside, r * frame.cols + c, -1)
    h = cloud.height
    n_cells = frame.rows * frame.cols
    hi = np.full(n_cells, -np.inf)
    lo = np.full(n_cells, np.inf)
    np.maximum.at(hi, flat[inside], h[inside])
    np.minimum.at(lo, flat[inside], h[inside])
    bad = (hi - lo) > spread_threshold
    if dilate:
        bad = binary_dilation(bad.reshape(frame.shape), np.ones((3, 3), bool), iterations=dilate).ravel()
    drop = np.zeros(len(cloud), dtype=bool)
    drop[inside] = bad[flat[inside]]
    return cloud.subset(~drop)


# ---------------------------------------------------------------------------
# Rigid registration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform3:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")

    @classmethod
    def identity(cls) -> "RigidTransform3":
        return cls()

    @classmethod
    def from_translation(cls, t) -> "RigidTransform3":
        return cls(np.eye(3), t)

    @classmethod
    def about_z(cls, angle_rad: float, center=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)) -> "RigidTransform3":
        """Rotation about a vertical axis through ``center``, then translation."""
        c, s = math.cos(angle_rad), math.sin(angle_rad)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        center = np.asarray(center, dtype=np.float64)
        return cls(R, center - R @ center + np.asarray(translation, dtype=np.float64))

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform3") -> "RigidTransform3":
        """self after other."""
        return RigidTransform3(_orthonormalize(self.rotation @ other.rotation),
                               self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform3":
        return RigidTransform3(self.rotation.T, -self.rotation.T @ self.translation)

    def rotation_angle(self) -> float:
        """Rotation angle in radians, accurate also for tiny rotations."""
        R = self.rotation
        axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return float(math.atan2(0.5 * np.linalg.norm(axis), 0.5 * (np.trace(R) - 1.0)))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform3":
        return cls(np.array(d["rotation"], dtype=np.float64), np.array(d["translation"], dtype=np.float64))


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise squared distance, summed in a fixed x, y, z order."""
    d = a - b
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]


def _segment_argmin(d2, idx, counts):
    """Per-segment minimum of d2 and the lowest idx attaining it.

    Segments are consecutive runs of ``counts`` entries; empty segments are
    skipped.  Returns (mask of non-empty segments, minima, indices).
    """
    has = counts > 0
    seg = (np.cumsum(counts) - counts)[has]
    if len(seg) == 0:
        return has, np.zeros(0), np.zeros(0, dtype=np.int64)
    m = np.minimum.reduceat(d2, seg)
    tie = d2 == np.repeat(m, counts[has])
    j = np.minimum.reduceat(np.where(tie, idx, np.iinfo(np.int64).max), seg)
    return has, m, j


class GridNeighbors:
    """Exact nearest-neighbour queries through a uniform 3-D grid.

    A query scans the cubes of +-1, then +-2 cells around it.  Points
    outside a cube of half-width ``ring`` cells are more than
    ``ring * cell`` away, so a best distance within that bound is final.
    Queries still unresolved (far from the cloud) are answered through a
    k-d tree and re-verified exactly.  The result always equals exhaustive search;
    equal distances resolve to the lowest target index.
    """

    def __init__(self, points: np.ndarray, cell_size: Optional[float] = None, max_ring: int = 2):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise ValueError("target cloud is empty")
        if cell_size is None:
            ext = np.ptp(self.points[:, :2], axis=0)
            area = max(float(ext[0] * ext[1]), 1e-12)
            cell_size = 2.0 * math.sqrt(area / len(self.points))
            cell_size = max(cell_size, 1e-6)
        self.cell_size = float(cell_size)
        self.max_ring = max_ring
        keys = np.floor(self.points / self.cell_size).astype(np.int64)
        self.kmin = keys.min(axis=0) - 1
        self.dims = keys.max(axis=0) - self.kmin + 2
        lin = self._linear(keys)
        self.order = np.argsort(lin, kind="stable")
        self.sorted_lin = lin[self.order]
        self._tree = None

    def _linear(self, keys):
        k = keys - self.kmin
        return (k[..., 0] * self.dims[1] + k[..., 1]) * self.dims[2] + k[..., 2]

    def query(self, q: np.ndarray, chunk: int = 8192):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        parts = parallel.map_chunks(lambda sl: self._query(q[sl]), len(q), chunk)
        if not parts:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def _query(self, q):
        n = len(q)
        best_d2 = np.full(n, np.inf)
        best_i = np.full(n, np.iinfo(np.int64).max)
        keys = np.floor(q / self.cell_size).astype(np.int64)
        todo = np.arange(n)
        for ring in range(1, self.max_ring + 1):
            if len(todo) == 0:
                break
            self._scan(q, keys, todo, ring, best_d2, best_i)
            todo = todo[~(best_d2[todo] <= (ring * self.cell_size) ** 2)]
        if len(todo):
            d2, i = self._far(q[todo])
            best_d2[todo] = d2
            best_i[todo] = i
        return np.sqrt(best_d2), best_i

    def _far(self, q):
        """Queries far from the cloud: k-d tree distance, then an exact recheck.

        Every point within the tree's distance (plus rounding slack) is
        re-measured with the same arithmetic as the grid scan, so ties and
        distances agree exactly with exhaustive search.
        """
        if self._tree is None:
            self._tree = cKDTree(self.points)
        d, _ = self._tree.query(q)
        lists = self._tree.query_ball_point(q, d * (1.0 + 1e-9) + 1e-12)
        counts = np.array([len(c) for c in lists], dtype=np.int64)
        cols = np.concatenate([np.asarray(c, dtype=np.int64) for c in lists])
        rows = np.repeat(np.arange(len(q)), counts)
        _, m, j = _segment_argmin(_sqdist(q[rows], self.points[cols]), cols, counts)
        return m, j

    def _scan(self, q, keys, qi, ring, best_d2, best_i):
        r = np.arange(-ring, ring + 1)
        offs = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        k = keys[qi][:, None, :] + offs[None, :, :]
        valid = np.all((k >= self.kmin) & (k < self.kmin + self.dims), axis=2)
        lin = np.where(valid, self._linear(k), -1).ravel()
        lo = np.searchsorted(self.sorted_lin, lin, side="left")
        hi = np.searchsorted(self.sorted_lin, lin, side="right")
        cnt = np.where(lin >= 0, hi - lo, 0)
        per_query = cnt.reshape(len(qi), -1).sum(axis=1)
        start = np.repeat(lo, cnt)
        within = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        tgt = self.order[start + within]
        owner = np.repeat(qi, per_query)
        # Candidates are grouped by query, so segment reductions pick the minimum.
        has, m, j = _segment_argmin(_sqdist(q[owner], self.points[tgt]), tgt, per_query)
        best_d2[qi[has]] = m
        best_i[qi[has]] = j


def nearest_bruteforce(q: np.ndarray, points: np.ndarray, chunk: int = 1024):
    """Exhaustive nearest neighbours; equal distances resolve to the lowest index.

    Distances are screened with the expansion |q|^2 + |p|^2 - 2 q.p on
    centered coordinates (one matrix product per chunk); every candidate
    within a rounding bound of the screened minimum is then recomputed
    exactly, so the answer matches a direct scan bit for bit.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dist = np.empty(len(q))
    idx = np.empty(len(q), dtype=np.int64)
    center = points.mean(axis=0)
    P = points - center
    pn = np.einsum("ij,ij->i", P, P)
    pmax = float(pn.max())
    for s in range(0, len(q), chunk):
        qq = q[s:s + chunk]
        Q = qq - center
        qn = np.einsum("ij,ij->i", Q, Q)
        approx = qn[:, None] + pn[None, :] - 2.0 * (Q @ P.T)
        # Generous bound on the rounding error of the expansion.
        slack = 1e-10 * (1.0 + qn + pmax)
        rows, cols = np.nonzero(approx <= (approx.min(axis=1) + slack)[:, None])
        counts = np.bincount(rows, minlength=len(qq))
        _, m, j = _segment_argmin(_sqdist(qq[rows], points[cols]), cols, counts)
        dist[s:s + chunk] = np.sqrt(m)
        idx[s:s + chunk] = j
    return dist, idx


def huber_loss(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))


def huber_weights(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def weighted_rigid_fit(src: np.ndarray, dst: np.ndarray, w: np.ndarray) -> RigidTransform3:
    """Weighted least-squares rigid transform taking ``src`` onto ``dst``."""
    wsum = float(w.sum())
    if not wsum > 0:
        raise DegenerateGeometryError("all correspondence weights are zero")
    cs = (w[:, None] * src).sum(axis=0) / wsum
    cd = (w[:, None] * dst).sum(axis=0) / wsum
    H = ((src - cs) * w[:, None]).T @ (dst - cd)
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 0 or S[1] <= 1e-12 * S[0]:
        raise DegenerateGeometryError("cross-covariance is rank deficient (collinear correspondences)")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidTransform3(R, cd - R @ cs)


@dataclass
class IcpResult:
    transform: RigidTransform3
    iterations: int
    converged: bool
    loss_history: list
    mean_distance_history: list
    rms: float


def robust_icp(source: PointCloud | np.ndarray, target: PointCloud | np.ndarray,
               init: Optional[RigidTransform3] = None, max_iter: int = 100, huber_delta: float = 1.0,
               tol: float = 1e-6, point_weights: Optional[np.ndarray] = None,
               robust: bool = True, neighbors: Optional[GridNeighbors] = None) -> IcpResult:
    """Huber-weighted point-to-point ICP.

    Each iteration matches every transformed source point to its nearest
    target point, then solves the weighted rigid fit with IRLS weights
    ``min(1, delta / r)`` times the optional per-point weights (e.g. inverse
    positional variances).  Stops when the mean correspondence distance moves
    by less than ``tol`` or after ``max_iter`` iterations.  ``robust=False``
    gives plain least-squares ICP.

    ``loss_history[k]`` is the Huber loss of the correspondences found at
    iteration k, and the final entry is the loss after the last update.
    """
    src = source.xyz if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64)
    dst = target.xyz if isinstance(target, PointCloud) else np.asarray(target, dtype=np.float64)
    if len(src) < 3:
        raise DegenerateGeometryError("ICP needs at least three source points")
    centered = src - src.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateGeometryError("source points are collinear")
    nn = neighbors or GridNeighbors(dst)
    pw = np.ones(len(src)) if point_weights is None else np.asarray(point_weights, dtype=np.float64)
    T = init or RigidTransform3.identity()
    losses, means = [], []
    converged = False
    it = 0
    weight = (lambda r: huber_weights(r, huber_delta)) if robust else (lambda r: np.ones_like(r))

    moved = T.apply(src)
    dist, idx = nn.query(moved)
    for it in range(1, max_iter + 1):
        losses.append(float(np.sum(pw * huber_loss(dist, huber_delta))))
        means.append(float(dist.mean()))
        step = weighted_rigid_fit(moved, dst[idx], pw * weight(dist))
        T = step.compose(T)
        moved = T.apply(src)
        dist, idx = nn.query(moved)
        if abs(float(dist.mean()) - means[-1]) < tol:
            converged = True
            break
    losses.append(float(np.sum(pw * huber_loss(dist, huber_delta))))
    means.append(float(dist.mean()))
    return IcpResult(T, it, converged, losses, means, float(np.sqrt(np.mean(dist ** 2))))


def transfer_labels(label_raster: np.ndarray, frame: GridFrame, cloud: PointCloud,
                    transform: Optional[RigidTransform3] = None, building_values=None) -> PointCloud:
    """Give each point the class of the optical raster cell it maps into.

    ``transform`` takes TomoSAR coordinates into the optical frame.  With
    ``building_values`` (e.g. ``{255}``) the raster values are collapsed to
    BUILDING / NONBUILDING; without it any nonzero value counts as building.
    Points outside the raster are UNKNOWN.
    """
    raster = np.asarray(label_raster)
    if raster.shape != frame.shape:
        raise ValueError("label raster shape does not match its frame")
    xyz = cloud.xyz if transform is None else transform.apply(cloud.xyz)
    r, c, inside = frame.cell_index(xyz[:, :2])
    cls = np.full(len(cloud), int(PointClass.UNKNOWN), dtype=np.int64)
    vals = raster[r[inside], c[inside]]
    if building_values is None:
        is_b = vals != 0
    else:
        is_b = np.isin(vals, list(building_values))
    cls[inside] = np.where(is_b, PointClass.BUILDING, PointClass.NONBUILDING)
    return cloud.with_classes(cls)


@dataclass
class CoregResult:
    transform: RigidTransform3
    coarse_shift_cells: tuple
    coarse_score: float
    coarse_dz: float
    icp: IcpResult
    n_source: int
    n_source_after_facade_removal: int


def coregister(tomo: PointCloud, optical: PointCloud, cell_size: float = 3.0, max_shift: int = 10,
               z_bin: float = 0.5, facade_cell: float = 1.0, facade_spread: float = 3.0,
               facade_dilate: int = 1, max_iter: int = 100, huber_delta: float = 1.0,
               tol: float = 1e-6) -> CoregResult:
    """Full chain: edges, coarse alignment, facade removal, robust ICP.

    Returns the transform taking TomoSAR coordinates into the optical frame.
    """
    both = np.vstack([tomo.xyz[:, :2], optical.xyz[:, :2]])
    frame = GridFrame.covering(both, cell_size, pad=max_shift + 1)
    opt_edges = sobel_edges(rasterize_mean_height(optical, cell_size, frame))
    tomo_edges = sobel_edges(rasterize_density(tomo, cell_size, frame))
    dx, dy, score = coarse_align_xy(opt_edges, tomo_edges, max_shift)
    d_e, d_n = shift_to_metric(dx, dy, cell_size)
    shifted = tomo.with_xyz(tomo.xyz + np.array([d_e, d_n, 0.0]))
    dz = coarse_align_z(optical, shifted, z_bin)
    init = RigidTransform3.from_translation([d_e, d_n, dz])
    cleaned = remove_facade_points(tomo, facade_cell, facade_spread, dilate=facade_dilate)
    icp = robust_icp(cleaned, optical, init, max_iter=max_iter, huber_delta=huber_delta, tol=tol)
    return CoregResult(icp.transform, (dx, dy), score, dz, icp, len(tomo), len(cleaned))
