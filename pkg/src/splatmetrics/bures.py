"""Squared 2-Wasserstein distances between 3D Gaussian distributions.

``w2_exact`` evaluates the closed form

    ||m1 - m2||^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)

with matrix square roots taken by symmetric eigendecomposition (eigenvalues
clamped at zero). ``w2_taylor`` replaces the trace term by the cheaper
quadratic form tr((S1-S2) S2^-1 (S1-S2)) / 4, which agrees with the exact
shape term to third order when S1 - S2 commutes with S2 and to second
order otherwise. ``w2_taylor_sym`` averages both argument orders so the
value can serve as a symmetric transport cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError

# Negative totals beyond this are treated as logic errors, not round-off.
ROUNDOFF_FLOOR = -1e-9

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class GaussianComponent:
    """A single Gaussian: mean (3,) and SPD covariance (3,3)."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=np.float64))
        if self.mean.shape != (3,) or self.covariance.shape != (3, 3):
            raise ContractError("component needs a 3-vector mean and a 3x3 covariance")


def _check_spd(matrix: np.ndarray, name: str) -> None:
    if np.abs(matrix - matrix.T).max() > 1e-9:
        raise ContractError(f"{name} is not symmetric within 1e-9")
    if np.linalg.eigvalsh(matrix)[0] <= 0.0:
        raise ContractError(f"{name} is not positive definite")


def sym_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, eigenvalues clamped at 0."""
    eigvals, eigvecs = np.linalg.eigh(matrix)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def w2_exact(a: GaussianComponent, b: GaussianComponent) -> float:
    """Closed-form squared 2-Wasserstein distance between two Gaussians."""
    _check_spd(a.covariance, "first covariance")
    _check_spd(b.covariance, "second covariance")
    diff = a.mean - b.mean
    root_b = sym_sqrt(b.covariance)
    cross = sym_sqrt(root_b @ a.covariance @ root_b)
    value = float(
        diff @ diff
        + np.trace(a.covariance)
        + np.trace(b.covariance)
        - 2.0 * np.trace(cross)
    )
    if value < ROUNDOFF_FLOOR:
        raise NumericError(f"squared distance {value} is negative beyond round-off")
    return max(value, 0.0)


def w2_taylor(a: GaussianComponent, b: GaussianComponent) -> float:
    """First-order approximation; inverts the second argument's covariance."""
    _check_spd(b.covariance, "second covariance")
    eigvals, eigvecs = np.linalg.eigh(b.covariance)
    if eigvals[-1] / eigvals[0] > CONDITION_LIMIT:
        raise NumericError(
            f"covariance condition number {eigvals[-1] / eigvals[0]:.3e} exceeds 1e12"
        )
    diff = a.mean - b.mean
    delta = eigvecs.T @ (a.covariance - b.covariance) @ eigvecs
    shape = 0.25 * float(np.sum(delta * delta / eigvals[None, :]))
    return float(diff @ diff) + shape


def w2_taylor_sym(a: GaussianComponent, b: GaussianComponent) -> float:
    """Mean of the approximation over both argument orders."""
    return 0.5 * (w2_taylor(a, b) + w2_taylor(b, a))
