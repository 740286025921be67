"""Separable regression estimators.

The only shipped estimator is ordinary least squares with intercept.  For a
design with rows [x_i^T, 1] and independent zero-mean noise of variance
sigma_i^2, the expected squared prediction error at a query point decomposes
as sum_i h_i * sigma_i^2 where h_i are nonnegative weights depending only on
the feature geometry and the query distribution.  That decomposition is what
lets payment contracts be priced from geometry alone; this module computes
the weights, leave-one-out predictions for realized payments, and a
Monte-Carlo validation of the decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    IllDefinedEstimatorError,
    IllDefinedPaymentError,
    ShapeError,
)

#: Gram matrices with condition number at or above this are treated as rank
#: deficient (separates genuine degeneracy from benign near-singularity).
CONDITION_LIMIT = 1e12

PROBABILITY_TOL = 1e-12

FeaturePoint = tuple[float, ...]


def as_feature_point(coords) -> FeaturePoint:
    point = tuple(float(c) for c in coords)
    if len(point) == 0:
        raise DomainError("feature points must have dimension >= 1")
    if not all(math.isfinite(c) for c in point):
        raise DomainError(f"feature point has non-finite coordinate: {point}")
    return point


@dataclass(frozen=True)
class QueryDistribution:
    """Finite mixture of point masses over the feature space."""

    atoms: tuple[tuple[FeaturePoint, float], ...]

    def __post_init__(self):
        if not self.atoms:
            raise DomainError("query distribution needs at least one atom")
        dims = {len(p) for p, _ in self.atoms}
        if len(dims) != 1:
            raise ShapeError(f"query atoms mix dimensions {sorted(dims)}")
        if any(w < 0 for _, w in self.atoms):
            raise DomainError("query probabilities must be nonnegative")
        total = sum(w for _, w in self.atoms)
        if abs(total - 1.0) > PROBABILITY_TOL:
            raise DomainError(f"query probabilities sum to {total}, not 1")

    @property
    def dimension(self) -> int:
        return len(self.atoms[0][0])

    def points(self) -> np.ndarray:
        return np.array([p for p, _ in self.atoms], dtype=float)

    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)


def point_mass(point) -> QueryDistribution:
    return QueryDistribution(((as_feature_point(point), 1.0),))


@dataclass(frozen=True)
class EstimatorSpec:
    """Estimator family chosen by an aggregator.  Extension seam for other
    separable estimators; only OLS with intercept ships."""

    kind: str = "ols_with_intercept"

    def __post_init__(self):
        if self.kind != "ols_with_intercept":
            raise DomainError(f"unknown estimator kind {self.kind!r}")


@dataclass(frozen=True)
class SeparabilityCoefficients:
    """Per-source weights h_i such that expected squared error = h . sigma^2."""

    values: tuple[float, ...]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)


def design_matrix(points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.hstack([pts, np.ones((pts.shape[0], 1))])


def _gram_or_raise(X: np.ndarray, error_cls, message: str, **error_kwargs) -> np.ndarray:
    gram = X.T @ X
    if X.shape[0] < X.shape[1]:
        raise error_cls(f"{message}: {X.shape[0]} points cannot identify "
                        f"{X.shape[1]} regression parameters", **error_kwargs)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond >= CONDITION_LIMIT:
        raise error_cls(f"{message}: design Gram matrix condition {cond:.3e} "
                        f"exceeds {CONDITION_LIMIT:.0e}", **error_kwargs)
    return gram


def _prediction_weights(X: np.ndarray, gram: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Columns are X (X^T X)^{-1} [q^T, 1]^T for each query q: the weights an
    OLS prediction at q places on each observed response."""
    A = design_matrix(queries)
    return X @ np.linalg.solve(gram, A.T)


def ols_coefficients(points, query_dist: QueryDistribution) -> SeparabilityCoefficients:
    """Separability weights of OLS-with-intercept under a query distribution.

    h_i = sum over atoms of prob * w_i^2, with w the prediction-weight vector
    at the atom.  Raises IllDefinedEstimatorError on rank-deficient designs.
    """
    X = design_matrix(points)
    if query_dist.dimension != X.shape[1] - 1:
        raise ShapeError(f"query dimension {query_dist.dimension} does not match "
                         f"feature dimension {X.shape[1] - 1}")
    gram = _gram_or_raise(X, IllDefinedEstimatorError, "estimator is ill-defined")
    W = _prediction_weights(X, gram, query_dist.points())
    h = (W ** 2) @ query_dist.weights()
    return SeparabilityCoefficients(tuple(float(v) for v in h))


def g_value(points, query_dist: QueryDistribution, variances) -> float:
    """Expected squared prediction error: dot(h, variances)."""
    h = ols_coefficients(points, query_dist).as_array()
    var = np.asarray(variances, dtype=float)
    if var.shape != h.shape:
        raise ShapeError(f"got {var.shape[0] if var.ndim else 0} variances "
                         f"for {h.shape[0]} points")
    if np.any(var < 0):
        raise DomainError("variances must be nonnegative")
    return float(h @ var)


def loo_prediction(points, responses, exclude: int, at) -> float:
    """OLS fit on all data except index `exclude`, evaluated at `at`."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(responses, dtype=float)
    if y.shape[0] != pts.shape[0]:
        raise ShapeError(f"{y.shape[0]} responses for {pts.shape[0]} points")
    if not 0 <= exclude < pts.shape[0]:
        raise DomainError(f"exclude index {exclude} out of range")
    keep = np.arange(pts.shape[0]) != exclude
    X = design_matrix(pts[keep])
    gram = _gram_or_raise(X, IllDefinedPaymentError,
                          "leave-one-out payment is ill-defined")
    coef = np.linalg.solve(gram, X.T @ y[keep])
    pred = design_matrix(np.atleast_2d(np.asarray(at, dtype=float))) @ coef
    return float(pred[0])


def trial_stream(seed: int, index: int) -> np.random.Generator:
    """Deterministic per-index substream: results do not depend on execution
    order or parallel schedule."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


@dataclass(frozen=True)
class SeparabilityReport:
    mc_mse: float
    predicted_mse: float
    standard_error: float
    trials: int
    seed: int


def validate_separability(points, query_dist: QueryDistribution, variances,
                          ground_truth, trials: int, seed: int) -> SeparabilityReport:
    """Monte-Carlo check of the error decomposition.

    Simulates `trials` datasets y = f(x) + eps with independent Gaussian
    noise of the given variances (f linear: coefficients + intercept), fits
    OLS to each, and compares the empirical expected squared error under the
    query distribution with dot(h, variances).
    """
    if trials < 1000:
        raise DomainError("separability validation needs trials >= 1000")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    var = np.asarray(variances, dtype=float)
    if var.shape[0] != pts.shape[0]:
        raise ShapeError(f"{var.shape[0]} variances for {pts.shape[0]} points")
    h = ols_coefficients(points, query_dist).as_array()
    predicted = float(h @ var)

    theta = np.asarray(ground_truth, dtype=float)  # d coefficients then intercept
    if theta.shape[0] != pts.shape[1] + 1:
        raise ShapeError(f"ground truth needs {pts.shape[1]} coefficients "
                         "plus an intercept")
    X = design_matrix(pts)
    gram = X.T @ X
    A = design_matrix(query_dist.points())
    probs = query_dist.weights()
    truth_at_atoms = A @ theta
    scale = np.sqrt(var)

    noise = np.empty((trials, pts.shape[0]))
    for t in range(trials):
        noise[t] = trial_stream(seed, t).normal(size=pts.shape[0])
    noise *= scale

    y = (X @ theta)[:, None] + noise.T           # (n, trials)
    coefs = np.linalg.solve(gram, X.T @ y)       # (d+1, trials)
    sq_err = (A @ coefs - truth_at_atoms[:, None]) ** 2
    per_trial = probs @ sq_err                   # (trials,)
    mc = float(per_trial.mean())
    se = float(per_trial.std(ddof=1) / math.sqrt(trials))
    return SeparabilityReport(mc_mse=mc, predicted_mse=predicted,
                              standard_error=se, trials=trials, seed=seed)
