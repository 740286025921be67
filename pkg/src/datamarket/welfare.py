"""Social cost, the efficient effort profile, and the price of anarchy.

Payments are lossless transfers between aggregators and sources, so the
ex-ante social cost reduces to total demand-weighted variance plus total
effort:

    L(e) = sum_s gamma_total_s * sigma_s^2(e_s) + sum_s e_s.

It is strictly convex with a unique minimizer: per source, the efficient
effort solves the same first-order condition as the contract-induced effort
map, evaluated at the total demand instead of the (weakly larger)
equilibrium quality weights.  Equilibria are therefore efficient exactly
when the coupling table has no off-diagonal mass; any single positive
off-diagonal entry forces over-provision and a price of anarchy above 1.
"""

from __future__ import annotations

from dataclasses import dataclass

from .effort import effort_response
from .errors import DomainError, ScenarioValidationError
from .equilibrium import EquilibriumResult
from .market import MODE_DIRECT, ESTIMATOR_ZERO_TOL, DerivedParameters


@dataclass(frozen=True)
class WelfareReport:
    equilibrium_efforts: dict[str, float]
    optimal_efforts: dict[str, float]
    cost_at_equilibrium: float
    cost_at_optimum: float
    poa: float
    efficient_possible: bool
    offdiagonal_xi_max: float


def social_cost(efforts: dict[str, float], params: DerivedParameters) -> float:
    """Ex-ante social cost of an effort profile (payments excluded)."""
    total = 0.0
    for sid in params.scenario.source_ids:
        model = params.effort_model(sid)
        e = efforts[sid]
        if not model.effort_set.contains(e):
            raise DomainError(f"effort {e} of source {sid} outside its feasible set")
        s = model.sigma(e)
        total += params.gamma_total[sid] * s * s + e
    return total


def optimal_efforts(params: DerivedParameters) -> dict[str, float]:
    """The unique social-cost minimizer.

    Per source this is the effort induced by its total demand; with bounded
    effort sets the convex objective's minimizer is the same value projected
    onto the feasible interval (demand at or beyond the saturation incentive
    pins the optimum at the effort cap)."""
    out = {}
    for sid in params.scenario.source_ids:
        model = params.effort_model(sid)
        bounds = params.bounds[sid]
        demand = params.gamma_total[sid]
        if demand < bounds.a_lower:
            raise ScenarioValidationError(
                f"total demand {demand} of source {sid} is below the minimum "
                f"incentive {bounds.a_lower}; the efficient effort would be negative")
        if model.effort_set.bounded:
            demand = min(demand, bounds.a_upper)
        out[sid] = effort_response(model, demand)
    return out


def efficiency_predicate(params: DerivedParameters) -> bool:
    """True iff no payment couples to another source's variance.

    Direct-mode tables are inputs, so the test is exact; estimator-derived
    couplings are computed values and use a zero threshold of 1e-14."""
    threshold = 0.0 if params.mode == MODE_DIRECT else ESTIMATOR_ZERO_TOL
    return params.offdiagonal_xi_max() <= threshold


def price_of_anarchy(result: EquilibriumResult, params: DerivedParameters) -> WelfareReport:
    """Equilibrium social cost over the optimal social cost (>= 1)."""
    if not result.solved or result.efforts is None:
        raise DomainError("price of anarchy requires a solved equilibrium")
    optimum = optimal_efforts(params)
    cost_opt = social_cost(optimum, params)
    cost_eq = social_cost(result.efforts, params)
    if cost_opt <= 0:
        # impossible under validation (positive demand, positive variance)
        raise DomainError(f"optimal social cost {cost_opt} is not positive")
    return WelfareReport(
        equilibrium_efforts=dict(result.efforts),
        optimal_efforts=optimum,
        cost_at_equilibrium=cost_eq,
        cost_at_optimum=cost_opt,
        poa=cost_eq / cost_opt,
        efficient_possible=efficiency_predicate(params),
        offdiagonal_xi_max=params.offdiagonal_xi_max())
