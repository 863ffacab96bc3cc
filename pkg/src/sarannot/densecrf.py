"""Fully connected CRF with Gaussian pairwise kernels and Potts compatibility.

Energy of a labeling x over pixels i:

    E(x) = sum_i u_i(x_i) + sum_{i<j} [x_i != x_j] * sum_m w_m G_m(f_i, f_j)

with G_m(f_i, f_j) = exp(-|f_i - f_j|^2 / 2) on bandwidth-scaled features:
pixel position for a spatial kernel, position plus intensity for a
bilateral kernel.  Marginals are approximated by mean-field iterations with
exact O(N^2) message passing; a truncated-window mode is available for
images too large for that.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import parallel

TRAIN_ITERATIONS = 5
INFERENCE_ITERATIONS = 10


@dataclass(frozen=True)
class Kernel:
    """One Gaussian kernel. ``theta_beta`` None makes it purely spatial."""

    weight: float
    theta_pos: float
    theta_beta: Optional[float] = None

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("kernel weight must be non-negative")
        if not self.theta_pos > 0 or (self.theta_beta is not None and not self.theta_beta > 0):
            raise ValueError("kernel bandwidths must be positive")

    @classmethod
    def spatial(cls, weight: float = 1.0, theta_gamma: float = 3.0) -> "Kernel":
        return cls(weight, theta_gamma)

    @classmethod
    def bilateral(cls, weight: float = 1.0, theta_alpha: float = 60.0, theta_beta: float = 10.0) -> "Kernel":
        return cls(weight, theta_alpha, theta_beta)


@dataclass(frozen=True)
class PairwiseParams:
    kernels: tuple = field(default_factory=lambda: (Kernel.spatial(), Kernel.bilateral()))

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if not self.kernels:
            raise ValueError("at least one pairwise kernel is required")

    @property
    def max_bandwidth(self) -> float:
        return max(k.theta_pos for k in self.kernels)


def _check(unary: np.ndarray, image: Optional[np.ndarray]):
    u = np.asarray(unary, dtype=np.float64)
    if u.ndim != 3 or u.shape[2] < 2:
        raise ValueError("unary must have shape (rows, cols, labels) with >= 2 labels")
    if not np.all(np.isfinite(u)):
        raise ValueError("unary potentials must be finite")
    if image is None:
        image = np.zeros(u.shape[:2])
    image = np.asarray(image, dtype=np.float64)
    if image.shape != u.shape[:2]:
        raise ValueError(f"image shape {image.shape} does not match unary {u.shape[:2]}")
    return u, image


def _features(shape, image):
    rows, cols = shape
    r, c = np.meshgrid(np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij")
    return np.column_stack([r.ravel(), c.ravel()]), image.ravel()


def kernel_block(pw: PairwiseParams, pos, inten, rows: slice) -> np.ndarray:
    """Rows ``rows`` of the summed kernel matrix K, with K[i, i] = 0."""
    dp = np.sum((pos[rows, None, :] - pos[None, :, :]) ** 2, axis=2)
    di = (inten[rows, None] - inten[None, :]) ** 2
    K = np.zeros(dp.shape)
    for k in pw.kernels:
        if k.weight == 0:
            continue
        arg = dp / (k.theta_pos ** 2)
        if k.theta_beta is not None:
            arg = arg + di / (k.theta_beta ** 2)
        K += k.weight * np.exp(-0.5 * arg)
    idx = np.arange(rows.start, rows.stop)
    K[idx - rows.start, idx] = 0.0
    return K


def kernel_matrix(pw: PairwiseParams, image: np.ndarray) -> np.ndarray:
    pos, inten = _features(image.shape, np.asarray(image, dtype=np.float64))
    return kernel_block(pw, pos, inten, slice(0, len(pos)))


def energy(labeling: np.ndarray, unary: np.ndarray, pw: PairwiseParams, image: Optional[np.ndarray] = None) -> float:
    u, image = _check(unary, image)
    x = np.asarray(labeling).reshape(-1)
    if x.size != u.shape[0] * u.shape[1]:
        raise ValueError("labeling size does not match the unary field")
    uf = u.reshape(-1, u.shape[2])
    e_unary = float(np.sum(uf[np.arange(len(x)), x]))
    K = kernel_matrix(pw, image)
    differ = x[:, None] != x[None, :]
    return e_unary + 0.5 * float(np.sum(K * differ))


def softmax_neg(u: np.ndarray) -> np.ndarray:
    z = -u
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _ExactMessages:
    """m = K Q in fixed row chunks; K is cached when it fits in memory."""

    def __init__(self, pw, pos, inten, chunk: int = 512, cache_limit: int = 4096):
        self.pw, self.pos, self.inten, self.chunk = pw, pos, inten, chunk
        n = len(pos)
        self.cache = None
        if n <= cache_limit:
            self.cache = parallel.map_chunks(lambda sl: kernel_block(pw, pos, inten, sl), n, chunk)

    def __call__(self, Q: np.ndarray) -> np.ndarray:
        n = len(Q)
        if self.cache is not None:
            blocks = self.cache
            parts = parallel.map_chunks(lambda sl: blocks[sl.start // self.chunk] @ Q, n, self.chunk)
        else:
            parts = parallel.map_chunks(lambda sl: kernel_block(self.pw, self.pos, self.inten, sl) @ Q,
                                        n, self.chunk)
        return np.concatenate(parts)


class _WindowMessages:
    """Messages restricted to |dr|, |dc| <= radius (approximation)."""

    def __init__(self, pw, image, radius: int):
        self.pw, self.image, self.radius = pw, image, radius
        self.offsets = [(dr, dc) for dr in range(-radius, radius + 1) for dc in range(-radius, radius + 1)
                        if (dr, dc) != (0, 0)]

    def __call__(self, Q: np.ndarray) -> np.ndarray:
        rows, cols = self.image.shape
        Qg = Q.reshape(rows, cols, -1)
        out = np.zeros_like(Qg)
        img = self.image
        for dr, dc in self.offsets:
            r0, r1 = max(0, -dr), min(rows, rows - dr)
            c0, c1 = max(0, -dc), min(cols, cols - dc)
            if r1 <= r0 or c1 <= c0:
                continue
            a = img[r0:r1, c0:c1]
            b = img[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
            d2 = float(dr * dr + dc * dc)
            w = np.zeros(a.shape)
            for k in self.pw.kernels:
                if k.weight == 0:
                    continue
                arg = d2 / k.theta_pos ** 2
                if k.theta_beta is not None:
                    arg = arg + (a - b) ** 2 / k.theta_beta ** 2
                w += k.weight * np.exp(-0.5 * arg)
            out[r0:r1, c0:c1] += w[..., None] * Qg[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        return out.reshape(Q.shape)


def mean_field_infer(unary: np.ndarray, pw: PairwiseParams, image: Optional[np.ndarray] = None,
                     iterations: int = INFERENCE_ITERATIONS, window: Optional[int] = None,
                     callback: Optional[Callable[[int, np.ndarray], None]] = None) -> np.ndarray:
    """Mean-field marginals Q of shape (rows, cols, labels).

    Starts from softmax(-u); each iteration computes messages
    m_i(l) = sum_{j != i} K_ij Q_j(l), applies the Potts compatibility
    (penalty for label l = sum over other labels of m_i), and renormalizes
    Q_i(l) proportional to exp(-u_i(l) - penalty).  ``window`` switches to
    the truncated-window approximation; ``window=-1`` uses
    ceil(3 * largest spatial bandwidth).  ``callback(k, Q)`` sees Q after each
    iteration.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    u, image = _check(unary, image)
    rows, cols, nl = u.shape
    uf = u.reshape(-1, nl)
    Q = softmax_neg(uf)
    if callback is not None:
        callback(0, Q.reshape(rows, cols, nl))
    if iterations == 0 or all(k.weight == 0 for k in pw.kernels):
        for k in range(1, iterations + 1):
            if callback is not None:
                callback(k, Q.reshape(rows, cols, nl))
        return Q.reshape(rows, cols, nl)
    if window is None:
        pos, inten = _features((rows, cols), image)
        messages = _ExactMessages(pw, pos, inten)
    else:
        radius = int(math.ceil(3 * pw.max_bandwidth)) if window < 0 else int(window)
        messages = _WindowMessages(pw, image, radius)
    for k in range(1, iterations + 1):
        m = messages(Q)
        penalty = m.sum(axis=1, keepdims=True) - m
        Q = softmax_neg(uf + penalty)
        if callback is not None:
            callback(k, Q.reshape(rows, cols, nl))
    return Q.reshape(rows, cols, nl)


def map_labeling(Q: np.ndarray) -> np.ndarray:
    """Per-pixel argmax; ties go to the lowest label index."""
    return np.argmax(np.asarray(Q), axis=-1)


MAX_BRUTEFORCE = 2 ** 20


def exact_map_bruteforce(unary: np.ndarray, pw: PairwiseParams, image: Optional[np.ndarray] = None,
                         chunk: int = 4096) -> np.ndarray:
    """Minimum-energy labeling by exhaustive enumeration.

    Labelings are enumerated in lexicographic order (pixel 0 most
    significant) and the first minimum wins.
    """
    u, image = _check(unary, image)
    rows, cols, nl = u.shape
    n = rows * cols
    if nl ** n > MAX_BRUTEFORCE:
        raise ValueError(f"{nl}^{n} labelings exceed the brute-force limit of {MAX_BRUTEFORCE}")
    uf = u.reshape(n, nl)
    K = kernel_matrix(pw, image)
    total_pairs = 0.5 * float(K.sum())
    best_e, best_x = math.inf, None
    it = itertools.product(range(nl), repeat=n)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.int64).reshape(-1, n)
        if len(block) == 0:
            break
        e = uf[np.arange(n)[None, :], block].sum(axis=1)
        same = np.zeros(len(block))
        for lab in range(nl):
            oh = (block == lab).astype(np.float64)
            same += np.einsum("ci,ij,cj->c", oh, K, oh)
        e = e + total_pairs - 0.5 * same
        j = int(np.argmin(e))
        if e[j] < best_e:
            best_e, best_x = float(e[j]), block[j]
    return best_x.reshape(rows, cols)
