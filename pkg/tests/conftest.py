"""Shared scenario builders for the test suite."""

import pytest

from datamarket.effort import (
    EffortSet,
    EffortVarianceModel,
    exponential_model,
    inverse_power_model,
)
from datamarket.estimators import EstimatorSpec, QueryDistribution, point_mass
from datamarket.market import (
    AggregatorSpec,
    DataSourceSpec,
    GroundTruth,
    MarketScenario,
)

OLS = EstimatorSpec("ols_with_intercept")


def make_symmetric_direct(xi_offdiag=0.5, beta_value=1.0, e_max=None,
                          sigma0=1.0, lam=0.5):
    """Two sources, two aggregators, full sharing, direct-mode parameters.

    With beta 1, zeta 0, and symmetric off-diagonal coupling c the
    equilibrium system solves in closed form: a = 1 / (1 - c) per entry.
    """
    effort_set = EffortSet("unbounded") if e_max is None else EffortSet("bounded", e_max=e_max)
    model = exponential_model(sigma0, lam, effort_set)
    sources = (
        DataSourceSpec("s1", (0.0,), model, ("b1", "b2")),
        DataSourceSpec("s2", (1.0,), model, ("b1", "b2")),
    )
    aggregators = (
        AggregatorSpec("b1", OLS, point_mass((0.5,))),
        AggregatorSpec("b2", OLS, point_mass((0.5,))),
    )
    beta = {(s, b): beta_value for s in ("s1", "s2") for b in ("b1", "b2")}
    xi = {b: {("s1", "s1"): 1.0, ("s2", "s2"): 1.0,
              ("s1", "s2"): xi_offdiag, ("s2", "s1"): xi_offdiag}
          for b in ("b1", "b2")}
    return MarketScenario(sources, aggregators, GroundTruth((1.0,), 0.0),
                          mode="direct", direct_beta=beta, direct_xi=xi)


def make_line_scenario(n_aggregators=1, zeta=0.0, sharing=None,
                       query_points=None, lam=1.0, sigma0=8.0, n_points=4):
    """Estimator-mode scenario on the d=1 points 0..n-1.  The default effort
    family keeps the minimum incentive (1/128) below OLS-derived demand, and
    the default query mixture spreads demand across the whole line."""
    points = [(float(k),) for k in range(n_points)]
    model = exponential_model(sigma0, lam)
    ids = [f"s{k + 1}" for k in range(len(points))]
    bids = [f"b{k + 1}" for k in range(n_aggregators)]
    if sharing is None:
        sharing = {sid: tuple(bids) for sid in ids}
    sources = tuple(DataSourceSpec(sid, pt, model, sharing[sid])
                    for sid, pt in zip(ids, points))
    if query_points is None:
        query = QueryDistribution((((1.5,), 0.5), ((n_points - 2.5,), 0.5)))
        queries = [query] * n_aggregators
    else:
        queries = [point_mass(q) for q in query_points]
    aggregators = tuple(
        AggregatorSpec(bid, OLS, queries[k],
                       zeta={j: zeta for j in bids if j != bid} if zeta else {})
        for k, bid in enumerate(bids))
    return MarketScenario(sources, aggregators, GroundTruth((0.5,), 1.0))


def make_random_direct(rng, n, m, coupling=0.3, bounded=False, cap_ratio=None,
                       sharing_density=1.0, zeta_max=0.3, max_tries=60):
    """Random direct-mode scenario that passes validation.

    Effort families are drawn with small minimum incentives so random demand
    tables clear them; with bounded=True each source's effort cap is placed a
    random factor above its total demand (cap_ratio overrides the range), so
    the saturation hypothesis gamma_total < a_upper holds by construction.
    """
    from datamarket.effort import effort_response, incentive_bounds
    from datamarket.market import derive_gamma, validate_scenario

    sids = [f"s{k + 1:02d}" for k in range(n)]
    bids = [f"b{k + 1:02d}" for k in range(m)]
    for _ in range(max_tries):
        models = {}
        for sid in sids:
            if rng.uniform() < 0.5:
                models[sid] = exponential_model(rng.uniform(0.8, 1.5),
                                                rng.uniform(2.0, 6.0))
            else:
                models[sid] = inverse_power_model(rng.uniform(0.8, 1.5),
                                                  rng.uniform(2.0, 6.0))
        sharing = {}
        for sid in sids:
            chosen = [bid for bid in bids if rng.uniform() < sharing_density]
            if not chosen:
                chosen = [bids[int(rng.integers(0, m))]]
            sharing[sid] = tuple(sorted(chosen))
        datasets = {bid: [sid for sid in sids if bid in sharing[sid]] for bid in bids}
        if any(not ds for ds in datasets.values()):
            continue
        sources = tuple(
            DataSourceSpec(sid, (float(k),), models[sid], sharing[sid])
            for k, sid in enumerate(sids))
        aggregators = tuple(
            AggregatorSpec(bid, OLS, point_mass((float(rng.uniform(-1, n)),)),
                           zeta={j: float(rng.uniform(0, zeta_max))
                                 for j in bids if j != bid})
            for bid in bids)
        beta = {(sid, bid): float(rng.uniform(0.5, 2.0))
                for sid in sids for bid in sharing[sid]}
        xi = {bid: {(i, l): 1.0 if i == l else float(rng.uniform(0, coupling))
                    for i in datasets[bid] for l in datasets[bid]}
              for bid in bids}
        scenario = MarketScenario(sources, aggregators, GroundTruth((1.0,), 0.0),
                                  mode="direct", direct_beta=beta, direct_xi=xi)
        if bounded:
            _, gamma_total = derive_gamma(scenario, beta)
            capped = []
            for k, sid in enumerate(sids):
                ratio = cap_ratio if cap_ratio is not None else rng.uniform(1.05, 3.0)
                a_upper = gamma_total[sid] * ratio
                if a_upper <= incentive_bounds(models[sid]).a_lower:
                    break
                e_max = effort_response(models[sid], a_upper)
                if e_max <= 0:
                    break
                bounded_model = EffortVarianceModel(
                    models[sid].family, EffortSet("bounded", e_max=e_max))
                capped.append(DataSourceSpec(sid, (float(k),), bounded_model,
                                             sharing[sid]))
            if len(capped) != n:
                continue
            scenario = MarketScenario(tuple(capped), aggregators,
                                      scenario.ground_truth, mode="direct",
                                      direct_beta=beta, direct_xi=xi)
        if validate_scenario(scenario).ok:
            return scenario
    raise AssertionError("random direct scenario generation exhausted retries")


@pytest.fixture
def symmetric_direct():
    return make_symmetric_direct()


@pytest.fixture
def line_two_aggregators():
    return make_line_scenario(n_aggregators=2, zeta=0.2)
