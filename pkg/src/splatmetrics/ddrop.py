"""Depth- and density-guided dropout planning.

Every primitive gets a score in [0, 1] mixing its normalized camera depth
and normalized crowding, the score is attenuated per depth layer, a global
rate schedule fixes how many primitives a training step drops, and a
seeded weighted draw without replacement realizes the mask. The dropped
count is exact (round(rate x N)); the per-primitive probabilities order
who is most likely to go.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ContractError
from .geometry import DepthStats
from .splat_io import CameraDescriptor, GaussianCloud

# floor added to selection weights so a quota is always satisfiable
WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class DropConfig:
    w_depth: float = 0.5
    w_density: float = 0.5
    lambda_middle: float = 0.7
    lambda_far: float = 0.3
    r_min: float = 0.05
    r_max: float = 0.3
    total_steps: int = 10_000
    k: int = 6
    knn_epsilon: float = geometry.DEFAULT_KNN_EPSILON

    def __post_init__(self):
        if not (0.0 <= self.w_depth <= 1.0 and 0.0 <= self.w_density <= 1.0):
            raise ContractError("score weights must lie in [0, 1]")
        if abs(self.w_depth + self.w_density - 1.0) > 1e-9:
            raise ContractError("w_depth + w_density must equal 1 within 1e-9")
        if not 0.0 < self.lambda_far < self.lambda_middle < 1.0:
            raise ContractError("need 0 < lambda_far < lambda_middle < 1")
        if not 0.0 <= self.r_min <= self.r_max < 1.0:
            raise ContractError("need 0 <= r_min <= r_max < 1")
        if self.total_steps <= 0:
            raise ContractError("total_steps must be positive")
        if self.k < 1:
            raise ContractError("k must be at least 1")


@dataclass(frozen=True)
class DropPlan:
    """Scores, layered probabilities, and one sampled mask for a step.

    ``depths`` and ``densities`` are carried so the serialized plan is
    self-describing.
    """

    scores: np.ndarray
    probabilities: np.ndarray
    rate: float
    mask: np.ndarray  # boolean, True = dropped
    step: int
    seed: int
    depths: np.ndarray
    densities: np.ndarray

    @property
    def dropped_count(self) -> int:
        return int(self.mask.sum())


def drop_scores(cloud: GaussianCloud, camera: CameraDescriptor,
                config: DropConfig = DropConfig()) -> np.ndarray:
    """Weighted mix of normalized depth and normalized density, in [0, 1]."""
    stats = geometry.camera_depths(cloud, camera)
    densities = geometry.knn_density(cloud, config.k, config.knn_epsilon)
    depth_score = geometry.min_max_normalize(stats.depths)
    density_score = geometry.min_max_normalize(densities)
    return config.w_depth * depth_score + config.w_density * density_score


def layered_probabilities(scores, depths: DepthStats,
                          config: DropConfig = DropConfig()) -> np.ndarray:
    """Attenuate scores per depth layer; the near layer passes through."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != depths.depths.shape:
        raise ContractError("scores and depths must have the same length")
    factors = np.array([1.0, config.lambda_middle, config.lambda_far])
    return scores * factors[depths.layers()]


def schedule_rate(step: int, config: DropConfig = DropConfig()) -> float:
    """Affine ramp from r_min at step 0 to r_max at total_steps, then flat."""
    if step < 0:
        raise ContractError("step must be nonnegative")
    progress = min(step, config.total_steps) / config.total_steps
    return config.r_min + (config.r_max - config.r_min) * progress


def sample_mask(probabilities, rate: float, seed: int) -> np.ndarray:
    """Draw exactly round(rate x N) indices, weight-proportional, seeded.

    Uses exponential keys (-log u / weight): taking the smallest keys is a
    weighted draw without replacement. Weights get a 1e-12 floor so zero
    probability items are drawable only when needed to meet the quota.
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.ndim != 1 or probabilities.size == 0:
        raise ContractError("probabilities must be a nonempty 1-D array")
    if np.any(probabilities < 0.0) or np.any(probabilities > 1.0):
        raise ContractError("probabilities must lie in [0, 1]")
    if not 0.0 <= rate < 1.0:
        raise ContractError("rate must lie in [0, 1)")
    n = probabilities.size
    count = int(math.floor(rate * n + 0.5))
    if count >= n:
        raise ContractError(f"rate {rate} would drop all {n} primitives")
    mask = np.zeros(n, dtype=bool)
    if count == 0:
        return mask
    weights = probabilities + WEIGHT_FLOOR
    rng = np.random.default_rng(seed)
    keys = -np.log(rng.random(n)) / weights
    mask[np.argsort(keys, kind="stable")[:count]] = True
    return mask


def plan_dropout(cloud: GaussianCloud, camera: CameraDescriptor, step: int,
                 config: DropConfig = DropConfig(), seed: int = 0) -> DropPlan:
    """Full plan for one training step: scores, probabilities, rate, mask."""
    if len(cloud) <= config.k:
        raise ContractError("cloud must hold more primitives than k")
    stats = geometry.camera_depths(cloud, camera)
    densities = geometry.knn_density(cloud, config.k, config.knn_epsilon)
    scores = (config.w_depth * geometry.min_max_normalize(stats.depths)
              + config.w_density * geometry.min_max_normalize(densities))
    probabilities = layered_probabilities(scores, stats, config)
    rate = schedule_rate(step, config)
    mask = sample_mask(probabilities, rate, seed)
    return DropPlan(
        scores=scores,
        probabilities=probabilities,
        rate=rate,
        mask=mask,
        step=step,
        seed=seed,
        depths=stats.depths,
        densities=densities,
    )


def render_plan_csv(plan: DropPlan) -> str:
    """Per-primitive CSV; the header comment carries rate, step, and seed."""
    lines = [
        f"# rate = {plan.rate!r}",
        f"# step = {plan.step}",
        f"# seed = {plan.seed}",
        "index,depth,density,score,probability,dropped",
    ]
    for i in range(plan.scores.size):
        lines.append(
            f"{i},{float(plan.depths[i])!r},{float(plan.densities[i])!r},"
            f"{float(plan.scores[i])!r},{float(plan.probabilities[i])!r},{int(plan.mask[i])}"
        )
    return "\n".join(lines) + "\n"
