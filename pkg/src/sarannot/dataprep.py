"""Training-data preparation: overlapping patches, dihedral augmentation, splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

DIHEDRAL = ("identity", "rot90", "rot180", "rot270", "hflip", "vflip", "transpose", "antitranspose")
_NEEDS_SQUARE = {"rot90", "rot270", "transpose", "antitranspose"}


@dataclass(frozen=True)
class PatchSpec:
    size: int = 256
    overlap: int = 32
    edge_rule: str = "clamp"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("patch size must be positive")
        if not 0 <= self.overlap < self.size:
            raise ValueError("overlap must satisfy 0 <= overlap < size")
        if self.edge_rule != "clamp":
            raise ValueError("only the 'clamp' edge rule is supported")

    @property
    def stride(self) -> int:
        return self.size - self.overlap


@dataclass
class Patch:
    image: np.ndarray
    mask: np.ndarray
    row: int
    col: int
    aug: str = "identity"
    source: str = ""


def patch_origins(extent: int, spec: PatchSpec) -> list[int]:
    """Origins 0, stride, 2*stride, ... below extent - size, then extent - size."""
    if extent < spec.size:
        raise ValueError(f"extent {extent} is smaller than the patch size {spec.size}")
    last = extent - spec.size
    origins = list(range(0, last, spec.stride))
    origins.append(last)
    return sorted(set(origins))


def extract_patches(image: np.ndarray, mask: np.ndarray, spec: PatchSpec = PatchSpec(),
                    source: str = "") -> list[Patch]:
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.shape[:2] != mask.shape[:2]:
        raise ValueError("image and mask differ in size")
    rows = patch_origins(image.shape[0], spec)
    cols = patch_origins(image.shape[1], spec)
    s = spec.size
    return [Patch(image[r:r + s, c:c + s], mask[r:r + s, c:c + s], r, c, "identity", source)
            for r in rows for c in cols]


def apply_dihedral(a: np.ndarray, op: str) -> np.ndarray:
    if op not in DIHEDRAL:
        raise ValueError(f"unknown transform {op!r}")
    if op in _NEEDS_SQUARE and a.shape[0] != a.shape[1]:
        raise ValueError(f"{op} requires a square patch")
    if op == "identity":
        return a.copy()
    if op == "rot90":
        return np.rot90(a, 1).copy()
    if op == "rot180":
        return np.rot90(a, 2).copy()
    if op == "rot270":
        return np.rot90(a, 3).copy()
    if op == "hflip":
        return a[:, ::-1].copy()
    if op == "vflip":
        return a[::-1, :].copy()
    if op == "transpose":
        return np.swapaxes(a, 0, 1).copy()
    return np.rot90(a, 2).swapaxes(0, 1).copy()


def augment(patch: Patch, ops: Sequence[str] = DIHEDRAL) -> list[Patch]:
    """One output per op in ``ops``, image and mask transformed identically."""
    return [Patch(apply_dihedral(patch.image, op), apply_dihedral(patch.mask, op), patch.row, patch.col,
                  op, patch.source) for op in ops]


def coverage_count(shape: tuple[int, int], spec: PatchSpec) -> np.ndarray:
    """How many patches cover each pixel."""
    cov = np.zeros(shape, dtype=np.int64)
    for r in patch_origins(shape[0], spec):
        for c in patch_origins(shape[1], spec):
            cov[r:r + spec.size, c:c + spec.size] += 1
    return cov


def split_train_test(ids: Sequence, ratio: Optional[float] = None, train: Optional[Sequence] = None,
                     test: Optional[Sequence] = None, seed: int = 0):
    """Split tile ids into (train, test), both in the original id order.

    Explicit ``train`` / ``test`` lists win over ``ratio``; with only one of
    them given, the other is the complement.  With ``ratio`` the first
    ``round(ratio * n)`` ids of a seeded permutation go to training.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("tile ids must be unique")
    if train is not None or test is not None:
        tr = list(train) if train is not None else [i for i in ids if i not in set(test)]
        te = list(test) if test is not None else [i for i in ids if i not in set(tr)]
        if set(tr) & set(te):
            raise ValueError(f"train and test lists overlap: {sorted(set(tr) & set(te), key=str)}")
        unknown = (set(tr) | set(te)) - set(ids)
        if unknown:
            raise ValueError(f"unknown tile ids: {sorted(unknown, key=str)}")
        if set(tr) | set(te) != set(ids):
            raise ValueError("train and test lists do not cover every tile")
    else:
        if ratio is None or not 0.0 <= ratio <= 1.0:
            raise ValueError("ratio must lie in [0, 1]")
        perm = np.random.default_rng(seed).permutation(len(ids))
        chosen = set(perm[:int(round(ratio * len(ids)))].tolist())
        tr = [ids[k] for k in range(len(ids)) if k in chosen]
        te = [ids[k] for k in range(len(ids)) if k not in chosen]
    order = {v: k for k, v in enumerate(ids)}
    return sorted(tr, key=order.__getitem__), sorted(te, key=order.__getitem__)


def patch_filename(patch: Patch) -> str:
    """``tile_<az>_<rg>_<aug>``: azimuth is the column origin, range the row."""
    return f"tile_{patch.col}_{patch.row}_{patch.aug}"
