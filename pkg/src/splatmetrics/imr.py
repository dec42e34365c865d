"""Inter-model robustness over collections of splat models.

A model is abstracted as an opacity-weighted Gaussian mixture drawn by
depth-stratified importance sampling, pairwise mixture distances are the
realized Sinkhorn transport cost over a Gaussian-to-Gaussian ground cost,
and the aggregate score is the log of the self-weighted mean of the
pairwise distances: ln(sum S_ij^2 / sum S_ij) over i < j. Larger pairwise
divergence pushes the score up; identical models drive it to the negative
infinity sentinel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import geometry, transport
from .bures import CONDITION_LIMIT, GaussianComponent, sym_sqrt
from .errors import ContractError, DataError, NumericError
from .splat_io import CameraDescriptor, GaussianCloud

COST_KINDS = ("taylor_sym", "taylor_asym", "exact")

DEGENERATE_IMR = float("-inf")


@dataclass(frozen=True)
class SamplingConfig:
    """How many components to draw and how to spread them across depth layers."""

    target_count: int = 10_000
    strata_fractions: tuple[float, float, float] = (0.2, 0.3, 0.5)
    seed: int = 0

    def __post_init__(self):
        if self.target_count < 3:
            raise ContractError("target_count must be at least 3")
        fractions = np.asarray(self.strata_fractions, dtype=np.float64)
        if fractions.shape != (3,) or np.any(fractions < 0.0):
            raise ContractError("strata_fractions must be three nonnegative numbers")
        if abs(fractions.sum() - 1.0) > 1e-9:
            raise ContractError("strata_fractions must sum to 1 within 1e-9")


@dataclass(frozen=True)
class MixtureModel:
    """Sampled, opacity-weighted Gaussian mixture abstraction of a cloud."""

    means: np.ndarray        # (K, 3)
    covariances: np.ndarray  # (K, 3, 3)
    weights: np.ndarray      # (K,), positive, sums to 1
    sample_seed: int
    source: str = ""

    def __len__(self) -> int:
        return self.means.shape[0]

    def component(self, index: int) -> GaussianComponent:
        return GaussianComponent(self.means[index], self.covariances[index])


@dataclass(frozen=True)
class RobustnessReport:
    """Pairwise mixture distances and their aggregate over N models."""

    pairwise: np.ndarray  # (N, N) symmetric, zero diagonal
    imr: float
    sample_sizes: tuple[int, ...]
    epsilon_used: float
    cost_kind: str
    degenerate: bool = False
    sampling_noise: float | None = None


class StratumOverflowWarning(UserWarning):
    """A depth stratum held fewer primitives than its sampling quota."""


def _stratum_quotas(fractions: np.ndarray, total: int, capacities: np.ndarray) -> np.ndarray:
    """Per-stratum quotas: round(fraction x total), remainder-corrected to sum
    exactly to total, then clamped to capacity with deterministic overflow
    redistribution (largest spare capacity first)."""
    raw = fractions * total
    quotas = np.floor(raw).astype(np.int64)
    remainders = raw - quotas
    shortfall = total - int(quotas.sum())
    for index in np.argsort(-remainders, kind="stable")[:shortfall]:
        quotas[index] += 1

    overflow = int(np.maximum(quotas - capacities, 0).sum())
    if overflow > 0:
        warnings.warn(
            f"stratum quotas {quotas.tolist()} exceed capacities {capacities.tolist()}; "
            f"redistributing {overflow} samples",
            StratumOverflowWarning,
            stacklevel=3,
        )
        quotas = np.minimum(quotas, capacities)
        leftover = total - int(quotas.sum())
        spare = capacities - quotas
        for index in np.argsort(-spare, kind="stable"):
            take = min(leftover, int(spare[index]))
            quotas[index] += take
            leftover -= take
            if leftover == 0:
                break
    return quotas


def _weighted_sample_without_replacement(rng_keys: np.ndarray, members: np.ndarray,
                                         count: int) -> np.ndarray:
    """Pick ``count`` members with the smallest random keys (exponential keys
    implement opacity-proportional sampling without replacement)."""
    order = np.argsort(rng_keys[members], kind="stable")
    return members[order[:count]]


def abstract_mixture(cloud: GaussianCloud, camera: CameraDescriptor,
                     config: SamplingConfig) -> MixtureModel:
    """Draw an opacity-weighted mixture from a cloud, stratified by depth.

    Primitives split into near/middle/far tertile layers; each layer
    contributes its quota of round(fraction x sample size), drawn without
    replacement with probability proportional to opacity. Deterministic
    for a fixed seed.
    """
    n = len(cloud)
    if n < 3:
        raise ContractError("cloud must hold at least 3 primitives")
    if not np.any(cloud.opacities > 0.0):
        raise DataError("all opacities are zero; nothing to weight the mixture with")

    stats = geometry.camera_depths(cloud, camera)
    layers = stats.layers()
    capacities = np.array([int((layers == s).sum()) for s in range(3)], dtype=np.int64)
    total = min(config.target_count, n)
    fractions = np.asarray(config.strata_fractions, dtype=np.float64)
    quotas = _stratum_quotas(fractions, total, capacities)

    rng = np.random.default_rng(config.seed)
    uniforms = rng.random(n)
    with np.errstate(divide="ignore"):
        keys = -np.log(uniforms) / cloud.opacities

    chosen = []
    for stratum in range(3):
        members = np.flatnonzero(layers == stratum)
        quota = int(quotas[stratum])
        if quota > 0:
            chosen.append(_weighted_sample_without_replacement(keys, members, quota))
    selected = np.sort(np.concatenate(chosen))

    weights = cloud.opacities[selected]
    weights = weights / weights.sum()
    floor = geometry.default_covariance_floor(cloud)
    covariances = geometry.batch_covariances(cloud, floor=floor)[selected]
    return MixtureModel(
        means=cloud.positions[selected].copy(),
        covariances=covariances,
        weights=weights,
        sample_seed=config.seed,
        source=cloud.source_path,
    )


# ---------------------------------------------------------------------------
# Pairwise ground costs
# ---------------------------------------------------------------------------

def _squared_mean_distances(mu1: np.ndarray, mu2: np.ndarray) -> np.ndarray:
    d2 = (
        (mu1**2).sum(axis=1)[:, None]
        + (mu2**2).sum(axis=1)[None, :]
        - 2.0 * mu1 @ mu2.T
    )
    np.clip(d2, 0.0, None, out=d2)
    return d2


def _guarded_inverse(covs: np.ndarray) -> np.ndarray:
    eigvals = np.linalg.eigvalsh(covs)
    if np.any(eigvals[:, 0] <= 0.0):
        raise ContractError("covariances must be positive definite")
    condition = eigvals[:, -1] / eigvals[:, 0]
    worst = float(condition.max())
    if worst > CONDITION_LIMIT:
        raise NumericError(f"covariance condition number {worst:.3e} exceeds 1e12")
    return np.linalg.inv(covs)


def _taylor_shape_term(covs1: np.ndarray, covs2: np.ndarray, inv2: np.ndarray) -> np.ndarray:
    """tr((S1-S2) S2^-1 (S1-S2)) / 4 for every pair, via
    tr(S2^-1 S1^2) - 2 tr(S1) + tr(S2)."""
    squares = covs1 @ covs1
    tr1 = np.trace(covs1, axis1=1, axis2=2)
    tr2 = np.trace(covs2, axis1=1, axis2=2)
    term = squares.reshape(len(covs1), 9) @ inv2.reshape(len(inv2), 9).T
    term -= 2.0 * tr1[:, None]
    term += tr2[None, :]
    return 0.25 * term


def pairwise_cost(means1, covs1, means2, covs2, cost_kind: str = "taylor_sym") -> np.ndarray:
    """Ground-cost matrix between two component sets."""
    if cost_kind not in COST_KINDS:
        raise ContractError(f"cost_kind must be one of {COST_KINDS}, got {cost_kind!r}")
    means1 = np.asarray(means1, dtype=np.float64)
    means2 = np.asarray(means2, dtype=np.float64)
    covs1 = np.asarray(covs1, dtype=np.float64)
    covs2 = np.asarray(covs2, dtype=np.float64)
    cost = _squared_mean_distances(means1, means2)
    if cost_kind == "taylor_asym":
        shape = _taylor_shape_term(covs1, covs2, _guarded_inverse(covs2))
    elif cost_kind == "taylor_sym":
        forward = _taylor_shape_term(covs1, covs2, _guarded_inverse(covs2))
        backward = _taylor_shape_term(covs2, covs1, _guarded_inverse(covs1))
        shape = 0.5 * (forward + backward.T)
    else:
        shape = _exact_shape_term(covs1, covs2)
    np.clip(shape, 0.0, None, out=shape)
    cost += shape
    return cost


def _exact_shape_term(covs1: np.ndarray, covs2: np.ndarray) -> np.ndarray:
    """Closed-form Bures shape term for every pair (batched eigendecompositions)."""
    roots2 = np.stack([sym_sqrt(c) for c in covs2])
    tr1 = np.trace(covs1, axis1=1, axis2=2)
    tr2 = np.trace(covs2, axis1=1, axis2=2)
    inner = np.einsum("jab,ibc,jcd->ijad", roots2, covs1, roots2)
    eigvals = np.linalg.eigvalsh(inner)
    cross = np.sqrt(np.clip(eigvals, 0.0, None)).sum(axis=2)
    return tr1[:, None] + tr2[None, :] - 2.0 * cross


def _realized_distance(cost: np.ndarray, weights_a, weights_b, epsilon: float,
                       max_iter: int, tolerance: float) -> float:
    """Sinkhorn realized cost, with numerical-noise-scale values rounded to
    exact zero so identical models reach the degenerate sentinel."""
    plan = transport.sinkhorn(cost, weights_a, weights_b, epsilon,
                              max_iter=max_iter, tolerance=tolerance)
    if plan.cost < 1e-12 * max(1.0, float(cost.max())):
        return 0.0
    return plan.cost


def mixture_distance(a: MixtureModel, b: MixtureModel, epsilon: float | None = None,
                     cost_kind: str = "taylor_sym",
                     max_iter: int = transport.DEFAULT_MAX_ITER,
                     tolerance: float = transport.DEFAULT_TOLERANCE) -> float:
    """Realized Sinkhorn transport cost between two mixtures."""
    if len(a) == 0 or len(b) == 0:
        raise ContractError("mixtures must be nonempty")
    cost = pairwise_cost(a.means, a.covariances, b.means, b.covariances, cost_kind)
    if epsilon is None:
        epsilon = transport.default_epsilon(cost)
    return _realized_distance(cost, a.weights, b.weights, epsilon, max_iter, tolerance)


def imr_from_pairwise(pairwise) -> tuple[float, bool]:
    """Aggregate ln(sum S^2 / sum S) over the strict upper triangle.

    Returns (score, degenerate); degenerate means every pairwise distance
    was zero, i.e. maximal robustness, reported as -inf rather than an error.
    """
    matrix = np.asarray(pairwise, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 2:
        raise ContractError("pairwise must be a square matrix for at least 2 models")
    upper = matrix[np.triu_indices(matrix.shape[0], k=1)]
    if np.any(upper < 0.0):
        raise ContractError("pairwise distances must be nonnegative")
    total = upper.sum()
    if total == 0.0:
        return DEGENERATE_IMR, True
    return float(np.log(np.sum(upper**2) / total)), False


def imr_score(models, epsilon: float | None = None, cost_kind: str = "taylor_sym",
              threads: int = 1) -> RobustnessReport:
    """Pairwise mixture distances for all i < j plus the aggregate score.

    With ``epsilon=None`` a single shared value is resolved as 0.05 x the
    median of the per-pair positive-cost medians, so distances stay
    comparable across pairs.
    """
    models = list(models)
    n = len(models)
    if n < 2:
        raise ContractError("need at least 2 models")
    if cost_kind not in COST_KINDS:
        raise ContractError(f"cost_kind must be one of {COST_KINDS}, got {cost_kind!r}")

    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def build_cost(pair):
        i, j = pair
        return pairwise_cost(models[i].means, models[i].covariances,
                             models[j].means, models[j].covariances, cost_kind)

    if epsilon is None:
        medians = []
        for pair in pairs:
            cost = build_cost(pair)
            positive = cost[cost > 0.0]
            if positive.size:
                medians.append(float(np.median(positive)))
        if medians:
            epsilon = transport.ADAPTIVE_EPSILON_FRACTION * float(np.median(medians))
        else:
            epsilon = 1.0

    def solve(pair):
        cost = build_cost(pair)
        return _realized_distance(cost, models[pair[0]].weights,
                                  models[pair[1]].weights, epsilon,
                                  transport.DEFAULT_MAX_ITER,
                                  transport.DEFAULT_TOLERANCE)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            distances = list(pool.map(solve, pairs))
    else:
        distances = [solve(pair) for pair in pairs]

    matrix = np.zeros((n, n))
    for (i, j), value in zip(pairs, distances):
        matrix[i, j] = matrix[j, i] = value
    score, degenerate = imr_from_pairwise(matrix)
    return RobustnessReport(
        pairwise=matrix,
        imr=score,
        sample_sizes=tuple(len(m) for m in models),
        epsilon_used=float(epsilon),
        cost_kind=cost_kind,
        degenerate=degenerate,
    )


def imr_from_clouds(clouds, camera: CameraDescriptor, config: SamplingConfig,
                    epsilon: float | None = None, cost_kind: str = "taylor_sym",
                    threads: int = 1,
                    noise_probe_seed: int | None = None) -> RobustnessReport:
    """Full pipeline from clouds: abstract every model with the same camera
    and sampling config, then score.

    ``noise_probe_seed`` re-samples the first two models with that seed and
    records the relative change of their distance as a sampling-noise
    estimate in the report.
    """
    clouds = list(clouds)
    models = [abstract_mixture(cloud, camera, config) for cloud in clouds]
    report = imr_score(models, epsilon=epsilon, cost_kind=cost_kind, threads=threads)
    if noise_probe_seed is None or len(clouds) < 2:
        return report
    probe_config = SamplingConfig(target_count=config.target_count,
                                  strata_fractions=config.strata_fractions,
                                  seed=noise_probe_seed)
    probe = [abstract_mixture(clouds[i], camera, probe_config) for i in (0, 1)]
    probe_distance = mixture_distance(probe[0], probe[1],
                                      epsilon=report.epsilon_used, cost_kind=cost_kind)
    baseline = report.pairwise[0, 1]
    scale = max(abs(baseline), abs(probe_distance), np.finfo(float).tiny)
    noise = abs(probe_distance - baseline) / scale
    return RobustnessReport(
        pairwise=report.pairwise,
        imr=report.imr,
        sample_sizes=report.sample_sizes,
        epsilon_used=report.epsilon_used,
        cost_kind=report.cost_kind,
        degenerate=report.degenerate,
        sampling_noise=float(noise),
    )


def render_report(report: RobustnessReport, labels=None) -> str:
    """CSV pairwise matrix followed by the text summary block."""
    n = report.pairwise.shape[0]
    if labels is None:
        labels = [f"model_{i}" for i in range(n)]
    lines = ["model," + ",".join(labels)]
    for i in range(n):
        row = ",".join(repr(float(v)) for v in report.pairwise[i])
        lines.append(f"{labels[i]},{row}")
    lines.append("")
    lines.append(f"imr = {report.imr!r}")
    lines.append(f"epsilon = {report.epsilon_used!r}")
    lines.append(f"cost = {report.cost_kind}")
    lines.append("samples = " + ",".join(str(s) for s in report.sample_sizes))
    if report.degenerate:
        lines.append("degenerate = all pairwise distances are zero (identical models)")
    if report.sampling_noise is not None:
        lines.append(f"sampling_noise = {report.sampling_noise!r}")
    lines.append("note = distances exclude the entropic regularization term")
    return "\n".join(lines) + "\n"
