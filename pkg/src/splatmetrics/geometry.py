"""Per-Gaussian geometric quantities derived from a cloud.

Covariances from scale/rotation, camera depths with tertile thresholds,
k-nearest-neighbor densities, and min-max normalization. Everything here
is a pure function; per-Gaussian outputs keep the input ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError
from .splat_io import CameraDescriptor, GaussianCloud

DEFAULT_KNN_EPSILON = 1e-8

# Exact brute force below this size; an exact spatial index above.
BRUTE_FORCE_LIMIT = 2048


@dataclass(frozen=True)
class DepthStats:
    """Per-Gaussian camera depths plus their tertile thresholds."""

    depths: np.ndarray
    d_near: float
    d_middle: float
    min: float
    max: float

    def layers(self) -> np.ndarray:
        """Layer index per Gaussian: 0 = near, 1 = middle, 2 = far."""
        out = np.full(self.depths.shape, 2, dtype=np.int8)
        out[self.depths <= self.d_middle] = 1
        out[self.depths <= self.d_near] = 0
        return out


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion given as (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def covariance_from_primitive(scale, rotation, floor: float = 0.0) -> np.ndarray:
    """R diag(scale)^2 R^T with ``floor`` added to the diagonal.

    The result is symmetric positive definite whenever scale > 0.
    """
    scale = np.asarray(scale, dtype=np.float64)
    rotation = np.asarray(rotation, dtype=np.float64)
    if scale.shape != (3,) or np.any(scale <= 0.0):
        raise ContractError("scale must be a strictly positive 3-vector")
    if floor < 0.0:
        raise ContractError("covariance floor must be nonnegative")
    norm = np.linalg.norm(rotation)
    if abs(norm - 1.0) > 1e-6:
        raise ContractError(f"quaternion norm {norm:.8f} deviates from 1 beyond 1e-6")
    rot = quaternion_to_rotation(rotation / norm)
    cov = (rot * scale**2) @ rot.T
    cov = 0.5 * (cov + cov.T)  # shed asymmetric round-off
    return cov + floor * np.eye(3)


def batch_covariances(cloud: GaussianCloud, floor: float = 0.0) -> np.ndarray:
    """(N,3,3) stack of covariance_from_primitive over the whole cloud."""
    quats = cloud.rotations / np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    w, x, y, z = quats.T
    rot = np.empty((len(cloud), 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    cov = np.einsum("nij,nj,nkj->nik", rot, cloud.scales**2, rot)
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))
    cov[:, np.arange(3), np.arange(3)] += floor
    return cov


def default_covariance_floor(cloud: GaussianCloud) -> float:
    """Diagonal floor keeping covariances invertible: 1e-10 x (median scale)^2."""
    return 1e-10 * float(np.median(cloud.scales)) ** 2


def nearest_rank_quantile(sorted_values: np.ndarray, fraction: float) -> float:
    """Nearest-rank empirical quantile of an ascending array."""
    n = len(sorted_values)
    rank = max(1, int(np.ceil(fraction * n)))
    return float(sorted_values[rank - 1])


def camera_depths(cloud: GaussianCloud, camera: CameraDescriptor) -> DepthStats:
    """Euclidean distance of every primitive to the camera, with the 1/3
    and 2/3 nearest-rank quantiles as layer thresholds."""
    if len(cloud) < 1:
        raise ContractError("cloud must be nonempty")
    depths = np.linalg.norm(cloud.positions - camera.position[None, :], axis=1)
    ordered = np.sort(depths)
    return DepthStats(
        depths=depths,
        d_near=nearest_rank_quantile(ordered, 1.0 / 3.0),
        d_middle=nearest_rank_quantile(ordered, 2.0 / 3.0),
        min=float(ordered[0]),
        max=float(ordered[-1]),
    )


def _knn_indices_brute(positions: np.ndarray, k: int) -> np.ndarray:
    n = len(positions)
    d2 = (
        (positions**2).sum(axis=1)[:, None]
        + (positions**2).sum(axis=1)[None, :]
        - 2.0 * positions @ positions.T
    )
    np.fill_diagonal(d2, np.inf)
    np.clip(d2, 0.0, None, out=d2)
    # stable lexsort: ties between equal distances resolve to the lowest index
    idx = np.empty((n, k), dtype=np.int64)
    cols = np.arange(n)
    for i in range(n):
        order = np.lexsort((cols, d2[i]))
        idx[i] = order[:k]
    return idx

def _knn_indices_tree(positions: np.ndarray, k: int) -> np.ndarray:
    tree = cKDTree(positions)
    _, idx = tree.query(positions, k=k + 1)
    # drop each point's own entry; under exact ties any coincident point is
    # an equally valid neighbor with the same distance
    neighbors = np.empty((len(positions), k), dtype=np.int64)
    for i in range(len(positions)):
        neighbors[i] = idx[i][idx[i] != i][:k]
    return neighbors


def knn_mean_distance(positions: np.ndarray, k: int, backend: str = "auto") -> np.ndarray:
    """Mean distance from each point to its k nearest other points.

    Both backends are exact; distances are recomputed from the positions
    so the backends agree bit-for-bit whenever the chosen neighbor sets
    agree (ties excepted, which leave the mean unchanged anyway).
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if not 1 <= k < n:
        raise ContractError(f"need cloud size > k >= 1, got n={n}, k={k}")
    if backend == "auto":
        backend = "brute" if n <= BRUTE_FORCE_LIMIT else "tree"
    if backend == "brute":
        idx = _knn_indices_brute(positions, k)
    elif backend == "tree":
        idx = _knn_indices_tree(positions, k)
    else:
        raise ContractError(f"unknown backend {backend!r}")
    diffs = positions[idx] - positions[:, None, :]
    dists = np.sort(np.linalg.norm(diffs, axis=2), axis=1)
    return dists.mean(axis=1)


def knn_density(cloud: GaussianCloud, k: int, epsilon: float = DEFAULT_KNN_EPSILON,
                backend: str = "auto") -> np.ndarray:
    """Inverse mean k-nearest-neighbor distance per primitive."""
    if epsilon <= 0.0:
        raise ContractError("epsilon must be positive")
    mean_dist = knn_mean_distance(cloud.positions, k, backend=backend)
    return 1.0 / (mean_dist + epsilon)


def min_max_normalize(values) -> np.ndarray:
    """Rescale to [0, 1]; a constant input maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("values must be nonempty")
    if not np.all(np.isfinite(values)):
        raise ContractError("values must be finite")
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)
