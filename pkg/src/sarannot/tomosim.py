"""TomoSAR imaging model, inversion, and a synthetic urban scene generator.

Each azimuth-range pixel of an N-image stack observes

    g_n = sum_q exp(-j 2 pi xi_n s_q) gamma(s_q) + eps_n,   xi_n = -2 b_n / (lambda r)

i.e. ``g = R gamma + eps``: the elevation reflectivity profile sampled at the
spatial frequencies set by the perpendicular baselines.  Inversion here is
either matched filtering (beamforming) or Tikhonov-regularized least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointClass, PointCloud

DEFAULT_WAVELENGTH = 0.031
DEFAULT_SLANT_RANGE = 700_000.0


@dataclass(frozen=True)
class BaselineSet:
    b: np.ndarray
    wavelength: float = DEFAULT_WAVELENGTH
    slant_range: float = DEFAULT_SLANT_RANGE

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "b", b)
        if len(b) < 2:
            raise ValueError("need at least two baselines")
        if not (self.wavelength > 0 and self.slant_range > 0):
            raise ValueError("wavelength and slant range must be positive")

    @classmethod
    def uniform(cls, n: int = 25, span: tuple[float, float] = (-135.0, 135.0), **kw) -> "BaselineSet":
        return cls(np.linspace(span[0], span[1], n), **kw)

    @property
    def frequencies(self) -> np.ndarray:
        """Elevation frequencies xi_n = -2 b_n / (lambda r), in cycles per meter."""
        return -2.0 * self.b / (self.wavelength * self.slant_range)

    @property
    def rayleigh_resolution(self) -> float:
        """lambda r / (2 * baseline span)."""
        return self.wavelength * self.slant_range / (2.0 * float(np.ptp(self.b)))


@dataclass(frozen=True)
class ElevationGrid:
    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "s", s)
        if len(s) < 2:
            raise ValueError("elevation grid needs at least two samples")
        d = np.diff(s)
        if np.any(d <= 0):
            raise ValueError("elevation grid must be strictly increasing")
        if np.max(np.abs(d - d[0])) > 1e-9:
            raise ValueError("elevation grid must be uniformly spaced")

    @classmethod
    def uniform(cls, start: float, stop: float, q: int) -> "ElevationGrid":
        return cls(np.linspace(start, stop, q))

    @property
    def spacing(self) -> float:
        return float(self.s[1] - self.s[0])

    def __len__(self) -> int:
        return len(self.s)


def steering_matrix(bs: BaselineSet, grid: ElevationGrid) -> np.ndarray:
    """N x Q matrix with R[n, q] = exp(-j 2 pi xi_n s_q)."""
    return np.exp(-2j * np.pi * np.outer(bs.frequencies, grid.s))


def _check_dims(R: np.ndarray, n: int, axis: int, what: str):
    if R.ndim != 2 or R.shape[axis] != n:
        raise ValueError(f"{what} has length {n} but steering matrix is {R.shape}")


def forward(R: np.ndarray, gamma: np.ndarray, sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Simulate ``g = R gamma + eps``.

    ``eps`` is circular complex Gaussian with standard deviation ``sigma`` in
    each of the real and imaginary parts, so E|eps_n|^2 = 2 sigma^2.
    """
    gamma = np.asarray(gamma, dtype=np.complex128)
    _check_dims(R, gamma.shape[0], 1, "reflectivity")
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    g = R @ gamma
    if sigma > 0:
        rng = np.random.default_rng(seed)
        g = g + sigma * (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    return g


def invert_beamforming(g: np.ndarray, R: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.complex128)
    _check_dims(R, g.shape[0], 0, "measurement")
    return (R.conj().T @ g) / R.shape[0]


def invert_ridge(g: np.ndarray, R: np.ndarray, mu: float) -> np.ndarray:
    """Solve (R^H R + mu I) gamma = R^H g."""
    if not mu > 0:
        raise ValueError("ridge parameter mu must be positive")
    g = np.asarray(g, dtype=np.complex128)
    _check_dims(R, g.shape[0], 0, "measurement")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(R))):
        raise np.linalg.LinAlgError("non-finite input to ridge inversion")
    A = R.conj().T @ R + mu * np.eye(R.shape[1])
    return np.linalg.solve(A, R.conj().T @ g)


def detect_scatterers(gamma_hat: np.ndarray, grid: ElevationGrid, threshold_fraction: float = 0.5):
    """Local maxima of |gamma_hat| above ``threshold_fraction * max``.

    A sample is a peak when it is strictly larger than its lower neighbour
    and no smaller than its upper one, so a plateau reports its lowest
    elevation.  Returns (elevation, magnitude) pairs sorted by elevation.
    """
    if not 0.0 < threshold_fraction < 1.0:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    mag = np.abs(np.asarray(gamma_hat))
    if len(mag) != len(grid):
        raise ValueError("profile and grid lengths differ")
    peak = mag.max(initial=0.0)
    if peak == 0.0:
        return []
    left = np.concatenate([[-np.inf], mag[:-1]])
    right = np.concatenate([mag[1:], [-np.inf]])
    is_peak = (mag > left) & (mag >= right) & (mag > threshold_fraction * peak)
    return [(float(grid.s[q]), float(mag[q])) for q in np.flatnonzero(is_peak)]


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@dataclass
class SceneSpec:
    """Synthetic urban scene: flat ground plus prismatic buildings.

    ``buildings`` holds (FootprintPolygon, roof_height) pairs; densities are
    points per square meter of ground, roof, and facade surface.
    """

    buildings: list
    extent: tuple[float, float, float, float]
    ground_height: float = 0.0
    density: dict = field(default_factory=lambda: {"ground": 1.0, "roof": 2.0, "facade": 3.0})
    position_noise_sigma: float = 0.0
    outlier_fraction: float = 0.0

    def __post_init__(self):
        for _, h in self.buildings:
            if not h > self.ground_height:
                raise ValueError("roof height must exceed ground height")
        for k in ("ground", "roof", "facade"):
            self.density.setdefault(k, 0.0)
            if self.density[k] < 0:
                raise ValueError("densities must be non-negative")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.position_noise_sigma < 0:
            raise ValueError("position noise must be non-negative")


def _jittered_grid(lo, hi, density: float, rng) -> np.ndarray:
    """One point per cell of a square grid with 1/density cell area.

    Points are jittered within the central 80% of each cell, so they never
    touch the cell (or an aligned polygon's) boundary.
    """
    h = 1.0 / math.sqrt(density)
    nx = int(math.ceil((hi[0] - lo[0]) / h - 1e-9))
    ny = int(math.ceil((hi[1] - lo[1]) / h - 1e-9))
    if nx <= 0 or ny <= 0:
        return np.zeros((0, 2))
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    base = np.stack([ix.ravel(), iy.ravel()], axis=1) + 0.5
    jitter = rng.uniform(-0.4, 0.4, size=base.shape)
    return np.asarray(lo) + (base + jitter) * h


def _facade_points(ring: np.ndarray, z0: float, z1: float, density: float, rng) -> np.ndarray:
    out = []
    h = 1.0 / math.sqrt(density)
    nz = max(int(math.ceil((z1 - z0) / h - 1e-9)), 1)
    for a, b in zip(ring, np.roll(ring, -1, axis=0)):
        length = float(np.hypot(*(b - a)))
        nt = max(int(math.ceil(length / h - 1e-9)), 1)
        it, iz = np.meshgrid(np.arange(nt), np.arange(nz), indexing="ij")
        t = (it.ravel() + 0.5 + rng.uniform(-0.4, 0.4, it.size)) / nt
        z = z0 + (iz.ravel() + 0.5 + rng.uniform(-0.4, 0.4, iz.size)) * (z1 - z0) / nz
        xy = a + t[:, None] * (b - a)
        out.append(np.column_stack([xy, z]))
    return np.concatenate(out) if out else np.zeros((0, 3))


def generate_scene_cloud(spec: SceneSpec, seed: int = 0) -> PointCloud:
    """Sample a TomoSAR-like cloud with per-point truth classes.

    Ground points cover the extent minus the footprints, roof points the
    footprints at roof height, and facade points run vertically along every
    footprint ring.  Gaussian position noise is added to all of them, then
    ``round(outlier_fraction * n)`` uniform outliers are appended inside the
    extent's bounding volume padded by 10 m in height.
    """
    from .label import FootprintIndex, points_in_polygon

    emin, nmin, emax, nmax = spec.extent
    if not (emax > emin and nmax > nmin):
        raise ValueError("scene extent is empty")
    rng = np.random.default_rng(seed)
    dens = spec.density
    parts, classes = [], []

    if dens["ground"] > 0:
        xy = _jittered_grid((emin, nmin), (emax, nmax), dens["ground"], rng)
        polys = [p for p, _ in spec.buildings]
        inside = FootprintIndex(polys).contains(xy) if polys else np.zeros(len(xy), bool)
        xy = xy[~inside]
        parts.append(np.column_stack([xy, np.full(len(xy), spec.ground_height)]))
        classes.append(np.full(len(xy), PointClass.GROUND))

    for poly, roof_h in spec.buildings:
        if dens["roof"] > 0:
            lo, hi = poly.bounds[:2], poly.bounds[2:]
            xy = _jittered_grid(lo, hi, dens["roof"], rng)
            xy = xy[points_in_polygon(xy, poly)]
            parts.append(np.column_stack([xy, np.full(len(xy), float(roof_h))]))
            classes.append(np.full(len(xy), PointClass.ROOF))
        if dens["facade"] > 0:
            for ring in [poly.outer, *poly.holes]:
                pts = _facade_points(ring, spec.ground_height, float(roof_h), dens["facade"], rng)
                parts.append(pts)
                classes.append(np.full(len(pts), PointClass.FACADE))

    xyz = np.concatenate(parts) if parts else np.zeros((0, 3))
    cls = np.concatenate(classes) if classes else np.zeros(0, np.int64)
    if spec.position_noise_sigma > 0 and len(xyz):
        xyz = xyz + rng.normal(0.0, spec.position_noise_sigma, xyz.shape)

    n_out = int(round(spec.outlier_fraction * len(xyz)))
    if n_out:
        top = max([h for _, h in spec.buildings], default=spec.ground_height)
        lo = np.array([emin, nmin, spec.ground_height - 10.0])
        hi = np.array([emax, nmax, top + 10.0])
        xyz = np.concatenate([xyz, rng.uniform(lo, hi, size=(n_out, 3))])
        cls = np.concatenate([cls, np.full(n_out, PointClass.OUTLIER)])
    return PointCloud(xyz, cls=cls)


def reestimate_heights(cloud: PointCloud, geometry, baselines: BaselineSet, grid: ElevationGrid,
                       sigma: float = 0.0, seed: int = 0, reference_height: float = 0.0,
                       chunk: int = 4096) -> PointCloud:
    """Pass every point through the tomographic chain.

    Each point is treated as a unit scatterer at elevation
    ``(h - reference_height) / sin(incidence)`` inside its azimuth-range
    cell; its stack is simulated with noise ``sigma``, inverted by
    beamforming, and the point is moved along the elevation direction (fixed
    azimuth and range) to the detected peak.  This injects TomoSAR-like
    elevation errors into an ideal cloud.
    """
    sin_t = math.sin(math.radians(geometry.incidence_deg))
    cos_t = math.cos(math.radians(geometry.incidence_deg))
    R = steering_matrix(baselines, grid)
    s_true = (cloud.height - reference_height) / sin_t
    rng = np.random.default_rng(seed)
    xi = baselines.frequencies
    s_est = np.empty_like(s_true)
    for start in range(0, len(s_true), chunk):
        s = s_true[start:start + chunk]
        g = np.exp(-2j * np.pi * np.outer(s, xi))
        if sigma > 0:
            g = g + sigma * (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
        prof = np.abs(g @ R.conj()) / R.shape[0]
        s_est[start:start + chunk] = grid.s[np.argmax(prof, axis=1)]
    ds = s_est - s_true
    xyz = cloud.xyz.copy()
    # Elevation axis is perpendicular to the line of sight: up by sin, away by cos.
    xyz[:, :2] += (ds * cos_t)[:, None] * geometry.cross_direction
    xyz[:, 2] += ds * sin_t
    return cloud.with_xyz(xyz)


def demo_district(origin=(0.0, 0.0), ground_height: float = 0.0) -> list:
    """City-block scale footprints for demos and the end-to-end check.

    Four blocks over a 400 m square: two plain rectangles, an L-shaped
    block, and a perimeter block around an inner yard.  Returned as
    (FootprintPolygon, roof_height) pairs shifted by ``origin``.
    """
    from .label import FootprintPolygon

    o = np.asarray(origin, dtype=np.float64)
    blocks = [
        ([[20, 20], [140, 20], [140, 110], [20, 110]], [], 25.0),
        ([[180, 20], [380, 20], [380, 160], [180, 160]], [[[240, 60], [320, 60], [320, 120], [240, 120]]], 18.0),
        ([[20, 200], [160, 200], [160, 260], [90, 260], [90, 380], [20, 380]], [], 32.0),
        ([[220, 220], [360, 220], [360, 360], [220, 360]], [], 40.0),
    ]
    return [(FootprintPolygon(np.asarray(outer, float) + o, [np.asarray(h, float) + o for h in holes]),
             ground_height + h)
            for outer, holes, h in blocks]


DEMO_EXTENT = (0.0, 0.0, 400.0, 400.0)
