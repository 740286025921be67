"""Market scenarios and derived contract parameters.

A scenario holds the primitives: data sources (feature point, effort model,
which aggregators they sell to) and aggregators (estimator, query
distribution, competition weights, payment scale).  From these we derive the
contract parameters that drive everything downstream:

  beta[s, b]   relevance of source s's data to aggregator b's estimate,
  xi[b][i, l]  coupling: weight of source l's variance inside the payment
               aggregator b owes source s=i (leave-one-out geometry),
  gamma[s, b]  b's net demand for quality from s after subtracting the
               competition-weighted benefit to b's rivals,
  Xi           the square coupling matrix of the equilibrium system
               a = Xi a + gamma over (source, aggregator) pairs.

Parameters can instead be entered directly (``direct`` mode) so analytic
fixtures that no small regression design realizes stay testable in closed
form.  All derivations are pure functions over immutable scenarios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .effort import EffortVarianceModel, IncentiveBounds, incentive_bounds
from .errors import DomainError, IllDefinedEstimatorError, IllDefinedPaymentError, ScenarioValidationError
from .estimators import (
    EstimatorSpec,
    FeaturePoint,
    QueryDistribution,
    as_feature_point,
    ols_coefficients,
    point_mass,
)

MODE_ESTIMATOR = "estimator_derived"
MODE_DIRECT = "direct"

#: Off-diagonal coupling below this counts as zero in estimator mode (the
#: values are computed, so exact-zero tests would be meaningless).
ESTIMATOR_ZERO_TOL = 1e-14


@dataclass(frozen=True)
class DataSourceSpec:
    id: str
    feature: FeaturePoint
    effort_model: EffortVarianceModel
    sharing: tuple[str, ...]  # aggregator ids this source sells to, sorted

    def __post_init__(self):
        object.__setattr__(self, "feature", as_feature_point(self.feature))
        if not self.sharing:
            raise DomainError(f"source {self.id!r} has an empty sharing set")
        object.__setattr__(self, "sharing", tuple(sorted(set(self.sharing))))


@dataclass(frozen=True)
class AggregatorSpec:
    id: str
    estimator: EstimatorSpec
    query_dist: QueryDistribution
    zeta: Mapping[str, float] = field(default_factory=dict)  # rival id -> [0, 1]
    payment_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "zeta", dict(self.zeta))
        if self.id in self.zeta:
            raise DomainError(f"aggregator {self.id!r} declares a self-competition weight")
        for j, z in self.zeta.items():
            if not (0.0 <= z <= 1.0):
                raise DomainError(f"zeta[{j!r}] of aggregator {self.id!r} is {z}, "
                                  "outside [0, 1]")
        if not (self.payment_scale > 0 and math.isfinite(self.payment_scale)):
            raise DomainError(f"payment scale of {self.id!r} must be positive")


@dataclass(frozen=True)
class GroundTruth:
    """Linear ground truth f(x) = coefficients . x + intercept (kept linear so
    OLS is unbiased and the sampling model is exactly realizable)."""

    coefficients: tuple[float, ...]
    intercept: float

    def __call__(self, point) -> float:
        return float(np.dot(self.coefficients, np.asarray(point, dtype=float))
                     + self.intercept)


@dataclass(frozen=True, eq=False)
class MarketScenario:
    sources: tuple[DataSourceSpec, ...]
    aggregators: tuple[AggregatorSpec, ...]
    ground_truth: GroundTruth
    mode: str = MODE_ESTIMATOR
    direct_beta: Mapping[tuple[str, str], float] | None = None
    direct_xi: Mapping[str, Mapping[tuple[str, str], float]] | None = None

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "aggregators", tuple(self.aggregators))
        if not self.sources or not self.aggregators:
            raise DomainError("a scenario needs at least one source and one aggregator")
        sids = [s.id for s in self.sources]
        bids = [b.id for b in self.aggregators]
        if len(set(sids)) != len(sids):
            raise DomainError("duplicate source ids")
        if len(set(bids)) != len(bids):
            raise DomainError("duplicate aggregator ids")
        if set(sids) & set(bids):
            raise DomainError("source and aggregator ids must be disjoint")
        dims = {len(s.feature) for s in self.sources}
        if len(dims) != 1:
            raise DomainError(f"sources mix feature dimensions {sorted(dims)}")
        d = dims.pop()
        if len(self.ground_truth.coefficients) != d:
            raise DomainError(f"ground truth has {len(self.ground_truth.coefficients)} "
                              f"coefficients for dimension {d}")
        known = set(bids)
        for s in self.sources:
            unknown = set(s.sharing) - known
            if unknown:
                raise DomainError(f"source {s.id!r} shares with unknown "
                                  f"aggregators {sorted(unknown)}")
        for b in self.aggregators:
            unknown = set(b.zeta) - known
            if unknown:
                raise DomainError(f"aggregator {b.id!r} weights unknown "
                                  f"rivals {sorted(unknown)}")
            if b.query_dist.dimension != d:
                raise DomainError(f"aggregator {b.id!r} query dimension "
                                  f"{b.query_dist.dimension} != feature dimension {d}")
        if self.mode not in (MODE_ESTIMATOR, MODE_DIRECT):
            raise DomainError(f"unknown parameter mode {self.mode!r}")
        if self.mode == MODE_DIRECT:
            self._check_direct_tables()
        elif self.direct_beta is not None or self.direct_xi is not None:
            raise DomainError("direct parameter tables given in estimator mode")

    def _check_direct_tables(self):
        if self.direct_beta is None or self.direct_xi is None:
            raise DomainError("direct mode requires beta and xi tables")
        beta = {(s, b): float(v) for (s, b), v in dict(self.direct_beta).items()}
        expected = {(s, b) for s, b in self.sharing_pairs()}
        if set(beta) != expected:
            raise DomainError("direct beta table must cover exactly the sharing pairs")
        if any(not math.isfinite(v) for v in beta.values()):
            raise DomainError("direct beta values must be finite")
        xi = {b: {pair: float(v) for pair, v in table.items()}
              for b, table in dict(self.direct_xi).items()}
        for b in self.aggregator_ids:
            ds = self.dataset(b)
            table = xi.get(b)
            if table is None:
                raise DomainError(f"direct xi table missing aggregator {b!r}")
            expected_pairs = {(i, l) for i in ds for l in ds}
            if set(table) != expected_pairs:
                raise DomainError(f"direct xi table of {b!r} must cover its dataset pairs")
            for (i, l), v in table.items():
                if i == l and v != 1.0:
                    raise DomainError(f"diagonal xi must be 1 (aggregator {b!r}, "
                                      f"source {i!r} has {v})")
                if v < 0 or not math.isfinite(v):
                    raise DomainError(f"xi values must be nonnegative and finite "
                                      f"(aggregator {b!r}, pair {(i, l)})")
        object.__setattr__(self, "direct_beta", beta)
        object.__setattr__(self, "direct_xi", xi)

    @cached_property
    def source_ids(self) -> tuple[str, ...]:
        return tuple(sorted(s.id for s in self.sources))

    @cached_property
    def aggregator_ids(self) -> tuple[str, ...]:
        return tuple(sorted(b.id for b in self.aggregators))

    @cached_property
    def sources_by_id(self) -> dict[str, DataSourceSpec]:
        return {s.id: s for s in self.sources}

    @cached_property
    def aggregators_by_id(self) -> dict[str, AggregatorSpec]:
        return {b.id: b for b in self.aggregators}

    @property
    def dimension(self) -> int:
        return len(self.sources[0].feature)

    def dataset(self, aggregator_id: str) -> tuple[str, ...]:
        """Sorted ids of the sources selling to this aggregator."""
        return tuple(sid for sid in self.source_ids
                     if aggregator_id in self.sources_by_id[sid].sharing)

    def sharing_pairs(self) -> tuple[tuple[str, str], ...]:
        """All (source, aggregator) pairs with an active contract, in the
        fixed lexicographic order used to index the coupling matrix."""
        return tuple((sid, bid)
                     for sid in self.source_ids
                     for bid in self.sources_by_id[sid].sharing)

    def dataset_points(self, aggregator_id: str) -> np.ndarray:
        return np.array([self.sources_by_id[sid].feature
                         for sid in self.dataset(aggregator_id)], dtype=float)


# ---------------------------------------------------------------------------
# Parameter derivation
# ---------------------------------------------------------------------------

def derive_beta(scenario: MarketScenario) -> dict[tuple[str, str], float]:
    """Relevance weights: per aggregator, the separability coefficients of its
    dataset under its own query distribution."""
    if scenario.mode != MODE_ESTIMATOR:
        raise DomainError("derive_beta applies to estimator-derived scenarios; "
                          "direct mode carries its own beta table")
    beta: dict[tuple[str, str], float] = {}
    for bid in scenario.aggregator_ids:
        ds = scenario.dataset(bid)
        agg = scenario.aggregators_by_id[bid]
        h = ols_coefficients(scenario.dataset_points(bid), agg.query_dist)
        for sid, value in zip(ds, h):
            beta[(sid, bid)] = float(value)
    return beta


def derive_xi(scenario: MarketScenario) -> dict[str, dict[tuple[str, str], float]]:
    """Coupling weights per aggregator: xi[b][(i, l)] is the weight of source
    l's variance in b's leave-one-out prediction at source i's feature point
    (1 when i == l by definition)."""
    if scenario.mode != MODE_ESTIMATOR:
        raise DomainError("derive_xi applies to estimator-derived scenarios; "
                          "direct mode carries its own xi table")
    xi: dict[str, dict[tuple[str, str], float]] = {}
    for bid in scenario.aggregator_ids:
        ds = scenario.dataset(bid)
        table: dict[tuple[str, str], float] = {}
        for i_pos, i in enumerate(ds):
            table[(i, i)] = 1.0
            others = [sid for sid in ds if sid != i]
            if not others:
                continue
            pts = np.array([scenario.sources_by_id[sid].feature for sid in others])
            try:
                h = ols_coefficients(pts, point_mass(scenario.sources_by_id[i].feature))
            except IllDefinedEstimatorError as exc:
                raise IllDefinedPaymentError(
                    f"aggregator {bid!r}: leave-one-out design excluding source "
                    f"{i!r} is rank deficient ({exc})",
                    aggregator=bid, source=i) from exc
            for l, value in zip(others, h):
                table[(i, l)] = float(value)
        xi[bid] = table
    return xi


def derive_gamma(scenario: MarketScenario, beta: Mapping[tuple[str, str], float],
                 ) -> tuple[dict[tuple[str, str], float], dict[str, float]]:
    """Net demand gamma[s, b] = (beta[s, b] - sum over rivals j in B_s of
    zeta_j^b * beta[s, j]) / payment_scale_b, and totals per source."""
    gamma: dict[tuple[str, str], float] = {}
    gamma_total: dict[str, float] = {}
    for sid in scenario.source_ids:
        src = scenario.sources_by_id[sid]
        total = 0.0
        for bid in src.sharing:
            agg = scenario.aggregators_by_id[bid]
            rival_benefit = sum(agg.zeta.get(j, 0.0) * beta[(sid, j)]
                                for j in src.sharing if j != bid)
            value = (beta[(sid, bid)] - rival_benefit) / agg.payment_scale
            gamma[(sid, bid)] = value
            total += value
        gamma_total[sid] = total
    return gamma, gamma_total


def assemble_xi_matrix(scenario: MarketScenario,
                       xi: Mapping[str, Mapping[tuple[str, str], float]],
                       ) -> tuple[np.ndarray, tuple[tuple[str, str], ...]]:
    """Coupling matrix of the equilibrium system a = Xi a + gamma.

    Rows/columns are the sharing pairs in lexicographic (source, aggregator)
    order.  Entry at row (s, b), column (l, j) is xi[j][(l, s)] when j != b,
    l != s, and both s and l sell to both j and b; otherwise 0.  The own-
    aggregator (j == b) and own-source (l == s) blocks are identically zero.
    """
    pairs = scenario.sharing_pairs()
    index = {pair: k for k, pair in enumerate(pairs)}
    matrix = np.zeros((len(pairs), len(pairs)))
    for (s, b), row in index.items():
        sharing_s = scenario.sources_by_id[s].sharing
        for (l, j), col in index.items():
            if j == b or l == s:
                continue
            if j not in sharing_s:          # s must also sell to j
                continue
            if b not in scenario.sources_by_id[l].sharing:  # l must sell to b
                continue
            matrix[row, col] = xi[j][(l, s)]
    return matrix, pairs


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    notes: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            lines = ["valid"]
        else:
            lines = [f"invalid ({len(self.violations)} violation(s))"]
            lines += [f"  [{v.code}] {v.subject}: {v.message}" for v in self.violations]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def _direct_tables(scenario: MarketScenario):
    return dict(scenario.direct_beta), {b: dict(t) for b, t in scenario.direct_xi.items()}


def validate_scenario(scenario: MarketScenario) -> ValidationReport:
    """Well-posedness checks required by the equilibrium theory.

    Returns a structured report; nothing is raised so callers can decide
    whether to proceed, but solvers refuse scenarios whose report is not ok.
    """
    violations: list[Violation] = []
    notes: list[str] = []

    kinds = {s.effort_model.effort_set.kind for s in scenario.sources}
    if len(kinds) > 1:
        violations.append(Violation(
            "mixed-effort-kinds", "sources",
            "all effort sets must share one kind (all bounded or all unbounded)"))

    for bid in scenario.aggregator_ids:
        agg = scenario.aggregators_by_id[bid]
        total = sum(w for _, w in agg.query_dist.atoms)
        if abs(total - 1.0) > 1e-12:
            violations.append(Violation(
                "bad-probabilities", bid, f"query probabilities sum to {total}"))
        if agg.payment_scale != 1.0:
            notes.append(f"aggregator {bid}: payment scale {agg.payment_scale} "
                         "normalized to 1 (demand rescaled accordingly)")

    try:
        if scenario.mode == MODE_ESTIMATOR:
            beta = derive_beta(scenario)
            derive_xi(scenario)
        else:
            beta, _ = _direct_tables(scenario)
    except IllDefinedEstimatorError as exc:
        violations.append(Violation("ill-defined-estimator", "scenario", str(exc)))
        return ValidationReport(tuple(violations), tuple(notes))

    gamma, gamma_total = derive_gamma(scenario, beta)
    for (sid, bid), value in gamma.items():
        if value <= 0:
            violations.append(Violation(
                "nonpositive-demand", f"({sid}, {bid})",
                f"net demand {value} must be positive"))

    for sid in scenario.source_ids:
        model = scenario.sources_by_id[sid].effort_model
        bounds = incentive_bounds(model)
        total = gamma_total[sid]
        if total < bounds.a_lower:
            violations.append(Violation(
                "demand-below-minimum", sid,
                f"total demand {total} is below the minimum incentive "
                f"{bounds.a_lower}"))
        elif model.effort_set.bounded and total >= bounds.a_upper:
            violations.append(Violation(
                "demand-above-saturation", sid,
                f"total demand {total} is not below the saturation incentive "
                f"{bounds.a_upper}"))
    return ValidationReport(tuple(violations), tuple(notes))


# ---------------------------------------------------------------------------
# Derived bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DerivedParameters:
    """Everything the solvers need, derived once from a scenario."""

    scenario: MarketScenario
    mode: str
    beta: dict[tuple[str, str], float]
    xi: dict[str, dict[tuple[str, str], float]]
    gamma: dict[tuple[str, str], float]
    gamma_total: dict[str, float]
    bounds: dict[str, IncentiveBounds]
    pairs: tuple[tuple[str, str], ...]
    xi_matrix: np.ndarray
    gamma_vector: np.ndarray
    validation: ValidationReport

    @cached_property
    def pair_index(self) -> dict[tuple[str, str], int]:
        return {pair: k for k, pair in enumerate(self.pairs)}

    @property
    def effort_kind(self) -> str:
        kinds = {s.effort_model.effort_set.kind for s in self.scenario.sources}
        return kinds.pop() if len(kinds) == 1 else "mixed"

    def effort_model(self, source_id: str) -> EffortVarianceModel:
        return self.scenario.sources_by_id[source_id].effort_model

    def offdiagonal_xi_max(self) -> float:
        worst = 0.0
        for table in self.xi.values():
            for (i, l), v in table.items():
                if i != l:
                    worst = max(worst, abs(v))
        return worst

    def require_valid(self) -> None:
        if not self.validation.ok:
            raise ScenarioValidationError(
                "scenario failed validation:\n" + self.validation.summary(),
                violations=self.validation.violations)


def derive_parameters(scenario: MarketScenario, *,
                      require_valid: bool = True) -> DerivedParameters:
    """Derive beta/xi/gamma, the incentive bounds, and the coupling matrix.

    With require_valid (the default) a scenario whose validation report has
    violations raises ScenarioValidationError; pass False to inspect derived
    tables of an ill-posed market.
    """
    validation = validate_scenario(scenario)
    if scenario.mode == MODE_ESTIMATOR:
        beta = derive_beta(scenario)
        xi = derive_xi(scenario)
    else:
        beta, xi = _direct_tables(scenario)
    gamma, gamma_total = derive_gamma(scenario, beta)
    bounds = {sid: incentive_bounds(scenario.sources_by_id[sid].effort_model)
              for sid in scenario.source_ids}
    xi_matrix, pairs = assemble_xi_matrix(scenario, xi)
    gamma_vector = np.array([gamma[p] for p in pairs])
    params = DerivedParameters(
        scenario=scenario, mode=scenario.mode, beta=beta, xi=xi, gamma=gamma,
        gamma_total=gamma_total, bounds=bounds, pairs=pairs,
        xi_matrix=xi_matrix, gamma_vector=gamma_vector, validation=validation)
    if require_valid:
        params.require_valid()
    return params
