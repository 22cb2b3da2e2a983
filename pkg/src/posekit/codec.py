"""Soft-classification orientation codec.

A ground-truth orientation is smeared over a cube of Euler-angle bins with a
Gaussian kernel on the geodesic rotation angle, and a predicted distribution
is turned back into a single quaternion with the weighted eigenvector
average (largest eigenvector of ``sum_i p_i q_i q_i^T``).

Bin layout (the contract with the model's softclass head)::

    index = (yaw_idx * n + pitch_idx) * n + roll_idx

with centers ``yaw/roll = -pi + (k + 0.5) * 2pi/n`` and
``pitch = -pi/2 + (k + 0.5) * pi/n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateDistribution, EmptyInput, InvalidConfig, ShapeMismatch
from .geometry import canonicalize, euler_to_quat, normalize

TRUNCATE_SIGMAS = 4.0
DEGENERATE_GAP = 1e-12


@dataclass(frozen=True, eq=False)
class OrientationGrid:
    n_bins_per_dim: int
    delta: float
    bin_centers: np.ndarray = field(repr=False)  # (n^3, 3) yaw, pitch, roll
    bin_quats: np.ndarray = field(repr=False)  # (n^3, 4)

    @property
    def size(self) -> int:
        return self.n_bins_per_dim**3

    @property
    def bin_width(self) -> float:
        return 2.0 * np.pi / self.n_bins_per_dim

    @property
    def sigma(self) -> float:
        """Kernel width in radians of rotation angle."""
        return self.delta * self.bin_width

    def index(self, yaw_idx: int, pitch_idx: int, roll_idx: int) -> int:
        n = self.n_bins_per_dim
        return (yaw_idx * n + pitch_idx) * n + roll_idx


def bin_centers_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Yaw/roll centers and pitch centers for ``n`` bins per dimension."""
    k = np.arange(n) + 0.5
    return -np.pi + k * (2 * np.pi / n), -np.pi / 2 + k * (np.pi / n)


@lru_cache(maxsize=16)
def build_grid(n_bins_per_dim: int, delta: float = 3.0) -> OrientationGrid:
    if int(n_bins_per_dim) != n_bins_per_dim or n_bins_per_dim < 2:
        raise InvalidConfig(f"n_bins_per_dim must be an integer >= 2, got {n_bins_per_dim}")
    if not delta > 0:
        raise InvalidConfig(f"delta must be positive, got {delta}")
    n = int(n_bins_per_dim)
    yr, pitch = bin_centers_1d(n)
    yaw_g, pitch_g, roll_g = np.meshgrid(yr, pitch, yr, indexing="ij")
    centers = np.stack([yaw_g.ravel(), pitch_g.ravel(), roll_g.ravel()], axis=-1)
    quats = euler_to_quat(centers)
    centers.setflags(write=False)
    quats.setflags(write=False)
    return OrientationGrid(n, float(delta), centers, quats)


def encode_soft(q, grid: OrientationGrid) -> np.ndarray:
    """Gaussian soft label(s) for orientation(s) ``q`` (shape ``(4,)`` or ``(B, 4)``).

    Weights are ``exp(-d^2 / (2 sigma^2))`` on the geodesic angle ``d`` to each
    bin, zeroed beyond ``4 sigma`` and renormalized. Distances are shifted by the
    nearest bin before exponentiation, so the limit ``delta -> 0`` degrades to a
    one-hot label instead of underflowing.
    """
    q = normalize(q)
    single = q.ndim == 1
    q2 = np.atleast_2d(q)
    dot = np.clip(np.abs(q2 @ grid.bin_quats.T), 0.0, 1.0)
    d = 2.0 * np.arccos(dot)
    sigma = grid.sigma
    d2 = d * d
    logw = -(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * sigma * sigma)
    w = np.exp(logw)
    w[d > np.maximum(TRUNCATE_SIGMAS * sigma, d.min(axis=1, keepdims=True))] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def _principal(m: np.ndarray, check: bool = True) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    if check:
        gap = vals[..., -1] - vals[..., -2]
        if np.any(gap < DEGENERATE_GAP):
            raise DegenerateDistribution(
                f"top eigenvalues of the averaging matrix differ by {float(np.min(gap)):.3g}; "
                "the weighted average is not unique"
            )
    return canonicalize(vecs[..., :, -1])


def eigengap(weights, quats) -> float:
    """Difference between the two largest eigenvalues of the averaging matrix.

    Small values flag averages that are poorly determined.
    """
    w = np.asarray(weights, dtype=float)
    q = np.asarray(quats, dtype=float)
    m = (q * w[:, None]).T @ q / w.sum()
    vals = np.linalg.eigvalsh(m)
    return float(vals[-1] - vals[-2])


def average_quaternions(weights, quats) -> np.ndarray:
    """Weighted rotation average, invariant to the sign of each input quaternion."""
    w = np.asarray(weights, dtype=float).ravel()
    q = np.asarray(quats, dtype=float).reshape(-1, 4)
    if q.shape[0] == 0:
        raise EmptyInput("no quaternions to average")
    if w.shape[0] != q.shape[0]:
        raise ShapeMismatch(f"{w.shape[0]} weights for {q.shape[0]} quaternions")
    if np.any(w < 0) or not w.sum() > 0:
        raise EmptyInput("weights must be nonnegative with a positive sum")
    m = (q * (w / w.sum())[:, None]).T @ q
    return _principal(m)


def decode(p, grid: OrientationGrid, check: bool = True) -> np.ndarray:
    """Average bin quaternion under distribution(s) ``p`` (shape ``(n^3,)`` or ``(B, n^3)``).

    Raises :class:`DegenerateDistribution` when any average is not unique
    unless ``check`` is false.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != grid.size:
        raise ShapeMismatch(f"distribution has {p.shape[-1]} entries, grid has {grid.size}")
    if p.ndim == 1:
        return average_quaternions(p, grid.bin_quats) if check else _principal(
            (grid.bin_quats * p[:, None]).T @ grid.bin_quats, check=False
        )
    qs = grid.bin_quats
    m = np.einsum("bi,ij,ik->bjk", p, qs, qs)
    return _principal(m, check=check)
