"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

_REPORT: list[str] = []


def report(line: str) -> None:
    """Record a one-line acceptance verdict; echoed in the terminal summary."""
    print(line)
    _REPORT.append(line)


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)


def winding_number(xy: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Winding number by summing signed angles subtended by each edge.

    Deliberately unrelated to crossing counts: it accumulates atan2 of the
    cross and dot products of consecutive vertex vectors.
    """
    xy = np.asarray(xy, dtype=np.float64)
    ring = np.asarray(ring, dtype=np.float64)
    a = ring[None, :, :] - xy[:, None, :]
    b = np.roll(ring, -1, axis=0)[None, :, :] - xy[:, None, :]
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = np.sum(a * b, axis=-1)
    total = np.arctan2(cross, dot).sum(axis=1)
    return np.rint(total / (2 * math.pi)).astype(int)


def winding_contains(xy, outer, holes=()) -> np.ndarray:
    inside = winding_number(xy, outer) != 0
    for h in holes:
        inside &= winding_number(xy, h) == 0
    return inside


def segment_distance(xy: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest edge of a closed ring."""
    a = ring[None, :, :]
    b = np.roll(ring, -1, axis=0)[None, :, :]
    p = xy[:, None, :]
    ab = b - a
    t = np.clip(np.sum((p - a) * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.min(np.linalg.norm(p - proj, axis=-1), axis=1)


def star_ring(rng, center, r_lo, r_hi, n) -> np.ndarray:
    """Simple star-shaped ring: jittered angles, radii in [r_lo, r_hi].

    Angular gaps stay below 2*pi*1.8/n, so for n >= 6 every edge keeps a
    distance of at least 0.5 * r_lo from the center.
    """
    k = np.arange(n)
    theta = 2 * math.pi * (k + rng.uniform(0.0, 0.8, n)) / n
    r = rng.uniform(r_lo, r_hi, n)
    return np.asarray(center) + np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def random_polygon_rings(rng, with_holes=True):
    """Outer star ring plus 0-2 holes placed inside its guaranteed core."""
    center = rng.uniform(-50, 50, 2)
    r_lo = rng.uniform(5, 20)
    outer = star_ring(rng, center, r_lo, r_lo * rng.uniform(1.2, 3.0), int(rng.integers(6, 24)))
    holes = []
    if with_holes:
        n_holes = int(rng.integers(0, 3))
        core = 0.45 * r_lo  # the outer ring keeps >= 0.5 * r_lo from the center
        if n_holes == 1:
            holes.append(star_ring(rng, center, 0.2 * core, 0.9 * core, int(rng.integers(6, 10))))
        elif n_holes == 2:
            for sign in (-1, 1):
                c = center + sign * np.array([0.5 * core, 0.0])
                holes.append(star_ring(rng, c, 0.1 * core, 0.4 * core, 6))
    return outer, holes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
