"""Scenario documents: parsing, canonical serialization, seeded generation.

The on-disk format is JSON with an explicit schema_version.  Serialization is
canonical (fixed key order, sections sorted by id, shortest round-trip float
representation), so parse -> serialize -> parse is the identity and derived
parameters reproduce exactly from a saved document.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .effort import (
    EffortSet,
    EffortVarianceModel,
    ExponentialVariance,
    InversePowerVariance,
    effort_response,
)
from .errors import (
    DomainError,
    GenerationError,
    InfeasibleSpecError,
    ParseError,
)
from .estimators import EstimatorSpec, QueryDistribution, ols_coefficients
from .market import (
    MODE_DIRECT,
    MODE_ESTIMATOR,
    AggregatorSpec,
    DataSourceSpec,
    GroundTruth,
    MarketScenario,
    validate_scenario,
)

SCHEMA_VERSION = 1

_TOP_FIELDS = {"schema_version", "mode", "ground_truth", "sources",
               "aggregators", "direct_parameters"}
_SOURCE_FIELDS = {"id", "feature", "effort", "sharing"}
_AGG_FIELDS = {"id", "estimator", "query_distribution", "zeta", "eta"}
_EFFORT_FIELDS = {"family", "sigma0", "lambda", "k", "set"}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _expect(mapping, key, types, location, default=_TOP_FIELDS):
    if key not in mapping:
        if default is not _TOP_FIELDS:
            return default
        raise ParseError(f"missing field {key!r}", location=location)
    value = mapping[key]
    if not isinstance(value, types):
        raise ParseError(f"field {key!r} has type {type(value).__name__}",
                         location=location)
    return value


def _no_unknown_fields(mapping, allowed, location):
    unknown = set(mapping) - allowed
    if unknown:
        raise ParseError(f"unknown fields {sorted(unknown)}", location=location)


def _parse_effort(doc, location) -> EffortVarianceModel:
    _no_unknown_fields(doc, _EFFORT_FIELDS, location)
    family = _expect(doc, "family", str, location)
    set_doc = _expect(doc, "set", dict, location, default={"kind": "unbounded"})
    kind = _expect(set_doc, "kind", str, f"{location}.set")
    try:
        if kind == "bounded":
            effort_set = EffortSet("bounded", e_max=float(
                _expect(set_doc, "e_max", (int, float), f"{location}.set")))
        else:
            effort_set = EffortSet(kind)
        sigma0 = float(_expect(doc, "sigma0", (int, float), location))
        if family == "exponential":
            model = EffortVarianceModel(
                ExponentialVariance(sigma0, float(
                    _expect(doc, "lambda", (int, float), location))), effort_set)
        elif family == "inverse_power":
            model = EffortVarianceModel(
                InversePowerVariance(sigma0, float(
                    _expect(doc, "k", (int, float), location))), effort_set)
        else:
            raise ParseError(f"unknown effort family {family!r}", location=location)
    except DomainError as exc:
        raise ParseError(str(exc), location=location) from exc
    return model


def _parse_source(doc, index) -> DataSourceSpec:
    location = f"sources[{index}]"
    _no_unknown_fields(doc, _SOURCE_FIELDS, location)
    sid = _expect(doc, "id", str, location)
    feature = _expect(doc, "feature", list, location)
    sharing = _expect(doc, "sharing", list, location)
    effort = _parse_effort(_expect(doc, "effort", dict, location),
                           f"{location}.effort")
    try:
        return DataSourceSpec(sid, tuple(float(c) for c in feature), effort,
                              tuple(str(b) for b in sharing))
    except (DomainError, TypeError, ValueError) as exc:
        raise ParseError(str(exc), location=location) from exc


def _parse_aggregator(doc, index) -> AggregatorSpec:
    location = f"aggregators[{index}]"
    _no_unknown_fields(doc, _AGG_FIELDS, location)
    bid = _expect(doc, "id", str, location)
    kind = _expect(doc, "estimator", str, location, default="ols_with_intercept")
    atoms_doc = _expect(doc, "query_distribution", list, location)
    atoms = []
    for k, atom in enumerate(atoms_doc):
        aloc = f"{location}.query_distribution[{k}]"
        if not isinstance(atom, dict):
            raise ParseError("atom must be an object", location=aloc)
        _no_unknown_fields(atom, {"point", "probability"}, aloc)
        point = _expect(atom, "point", list, aloc)
        prob = _expect(atom, "probability", (int, float), aloc)
        atoms.append((tuple(float(c) for c in point), float(prob)))
    zeta_doc = _expect(doc, "zeta", dict, location, default={})
    eta = float(_expect(doc, "eta", (int, float), location, default=1.0))
    try:
        return AggregatorSpec(bid, EstimatorSpec(kind),
                              QueryDistribution(tuple(atoms)),
                              zeta={str(j): float(z) for j, z in zeta_doc.items()},
                              payment_scale=eta)
    except DomainError as exc:
        raise ParseError(str(exc), location=location) from exc


def _parse_direct_tables(doc, source_ids, aggregator_ids):
    location = "direct_parameters"
    _no_unknown_fields(doc, {"beta", "xi"}, location)
    beta_doc = _expect(doc, "beta", dict, location)
    xi_doc = _expect(doc, "xi", dict, location)
    beta = {}
    for sid, row in beta_doc.items():
        if sid not in source_ids:
            raise ParseError(f"beta row for unknown source {sid!r}", location=location)
        if not isinstance(row, dict):
            raise ParseError(f"beta[{sid!r}] must be an object", location=location)
        for bid, value in row.items():
            if bid not in aggregator_ids:
                raise ParseError(f"beta[{sid!r}] names unknown aggregator {bid!r}",
                                 location=location)
            beta[(sid, bid)] = float(value)
    xi = {}
    for bid, rows in xi_doc.items():
        if bid not in aggregator_ids:
            raise ParseError(f"xi table for unknown aggregator {bid!r}",
                             location=location)
        if not isinstance(rows, dict):
            raise ParseError(f"xi[{bid!r}] must be an object", location=location)
        table = {}
        for i, row in rows.items():
            if not isinstance(row, dict):
                raise ParseError(f"xi[{bid!r}][{i!r}] must be an object",
                                 location=location)
            for l, value in row.items():
                value = float(value)
                if i == l and value != 1.0:
                    raise ParseError(f"diagonal xi must be 1 (aggregator {bid!r}, "
                                     f"source {i!r} has {value})", location=location)
                table[(str(i), str(l))] = value
        xi[bid] = table
    return beta, xi


def parse_scenario(text: str) -> MarketScenario:
    """Parse and validate a scenario document; structured ParseError on any
    malformation, naming the offending field."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}", location=f"line {exc.lineno}") from exc
    if not isinstance(doc, dict):
        raise ParseError("document root must be an object")
    _no_unknown_fields(doc, _TOP_FIELDS, "document")
    version = _expect(doc, "schema_version", int, "document")
    if version != SCHEMA_VERSION:
        raise ParseError(f"schema_version {version} unsupported "
                         f"(expected {SCHEMA_VERSION})", location="document")
    mode = _expect(doc, "mode", str, "document", default=MODE_ESTIMATOR)
    gt_doc = _expect(doc, "ground_truth", dict, "document")
    _no_unknown_fields(gt_doc, {"coefficients", "intercept"}, "ground_truth")
    ground_truth = GroundTruth(
        tuple(float(c) for c in _expect(gt_doc, "coefficients", list, "ground_truth")),
        float(_expect(gt_doc, "intercept", (int, float), "ground_truth")))

    sources_doc = _expect(doc, "sources", list, "document")
    sources = tuple(_parse_source(s, k) for k, s in enumerate(sources_doc))
    agg_doc = _expect(doc, "aggregators", list, "document")
    aggregators = tuple(_parse_aggregator(a, k) for k, a in enumerate(agg_doc))

    sids = [s.id for s in sources]
    bids = [a.id for a in aggregators]
    for name, ids in (("source", sids), ("aggregator", bids)):
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ParseError(f"duplicate {name} ids {sorted(dupes)}", location="document")

    direct_beta = direct_xi = None
    if mode == MODE_DIRECT:
        direct_beta, direct_xi = _parse_direct_tables(
            _expect(doc, "direct_parameters", dict, "document"),
            set(sids), set(bids))
    elif "direct_parameters" in doc:
        raise ParseError("direct_parameters given in estimator mode",
                         location="document")
    try:
        return MarketScenario(sources, aggregators, ground_truth, mode=mode,
                              direct_beta=direct_beta, direct_xi=direct_xi)
    except DomainError as exc:
        raise ParseError(str(exc), location="document") from exc


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _effort_to_dict(model: EffortVarianceModel) -> dict:
    family = model.family
    if isinstance(family, ExponentialVariance):
        out = {"family": "exponential", "sigma0": family.sigma0,
               "lambda": family.lam}
    elif isinstance(family, InversePowerVariance):
        out = {"family": "inverse_power", "sigma0": family.sigma0, "k": family.k}
    else:
        raise DomainError("custom effort families are not serializable")
    eset = model.effort_set
    out["set"] = ({"kind": "bounded", "e_max": eset.e_max}
                  if eset.bounded else {"kind": "unbounded"})
    return out


def scenario_to_dict(scenario: MarketScenario) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "mode": scenario.mode,
        "ground_truth": {
            "coefficients": list(scenario.ground_truth.coefficients),
            "intercept": scenario.ground_truth.intercept,
        },
        "sources": [
            {
                "id": s.id,
                "feature": list(s.feature),
                "effort": _effort_to_dict(s.effort_model),
                "sharing": list(s.sharing),
            }
            for s in sorted(scenario.sources, key=lambda s: s.id)
        ],
        "aggregators": [
            {
                "id": a.id,
                "estimator": a.estimator.kind,
                "query_distribution": [
                    {"point": list(p), "probability": w} for p, w in a.query_dist.atoms
                ],
                "zeta": {j: a.zeta[j] for j in sorted(a.zeta)},
                "eta": a.payment_scale,
            }
            for a in sorted(scenario.aggregators, key=lambda a: a.id)
        ],
    }
    if scenario.mode == MODE_DIRECT:
        beta: dict[str, dict[str, float]] = {}
        for (sid, bid), v in sorted(scenario.direct_beta.items()):
            beta.setdefault(sid, {})[bid] = v
        xi: dict[str, dict[str, dict[str, float]]] = {}
        for bid in sorted(scenario.direct_xi):
            table: dict[str, dict[str, float]] = {}
            for (i, l), v in sorted(scenario.direct_xi[bid].items()):
                table.setdefault(i, {})[l] = v
            xi[bid] = table
        doc["direct_parameters"] = {"beta": beta, "xi": xi}
    return doc


def serialize_scenario(scenario: MarketScenario) -> str:
    """Canonical document text: fixed key order, id-sorted sections,
    full-precision decimals."""
    return json.dumps(scenario_to_dict(scenario), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationSpec:
    n_sources: int
    n_aggregators: int
    dimension: int = 1
    family: str = "exponential"     # exponential | inverse_power | mixed
    bounded: bool = False
    coupling_scale: float = 0.3     # direct mode only
    sharing_density: float = 1.0
    zeta_max: float = 0.3
    mode: str = MODE_ESTIMATOR

    def __post_init__(self):
        if self.n_sources < 1 or self.n_aggregators < 1:
            raise InfeasibleSpecError("need at least one source and one aggregator")
        if self.dimension < 1:
            raise InfeasibleSpecError("dimension must be at least 1")
        if self.mode not in (MODE_ESTIMATOR, MODE_DIRECT):
            raise InfeasibleSpecError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_ESTIMATOR and self.n_sources < self.dimension + 2:
            raise InfeasibleSpecError(
                f"estimator mode needs n_sources >= dimension + 2 "
                f"(= {self.dimension + 2}) so leave-one-out designs stay "
                f"invertible; got {self.n_sources}")
        if self.family not in ("exponential", "inverse_power", "mixed"):
            raise InfeasibleSpecError(f"unknown effort family {self.family!r}")
        if not 0.0 < self.sharing_density <= 1.0:
            raise InfeasibleSpecError("sharing density must lie in (0, 1]")
        if not 0.0 <= self.zeta_max <= 1.0:
            raise InfeasibleSpecError("zeta_max must lie in [0, 1]")


MAX_GENERATION_ATTEMPTS = 60


def _draw_model(spec: GenerationSpec, rng, a_lower_target: float) -> EffortVarianceModel:
    """Family with its minimum incentive placed at a_lower_target, so demand
    clears the participation region whatever the market size."""
    family = spec.family
    if family == "mixed":
        family = "exponential" if rng.uniform() < 0.5 else "inverse_power"
    if family == "exponential":
        lam = float(rng.uniform(0.3, 3.0))
        sigma0 = math.sqrt(1.0 / (2.0 * lam * a_lower_target))
        return EffortVarianceModel(ExponentialVariance(sigma0, lam))
    k = float(rng.uniform(0.5, 3.0))
    sigma0 = math.sqrt(1.0 / (2.0 * k * a_lower_target))
    return EffortVarianceModel(InversePowerVariance(sigma0, k))


def _draw_sharing(spec: GenerationSpec, rng, sids, bids):
    sharing = {sid: [bid for bid in bids if rng.uniform() < spec.sharing_density]
               for sid in sids}
    for sid in sids:
        if not sharing[sid]:
            sharing[sid] = [bids[int(rng.integers(0, len(bids)))]]
    if spec.mode == MODE_ESTIMATOR:
        need = spec.dimension + 2
        for bid in bids:
            holders = [sid for sid in sids if bid in sharing[sid]]
            missing = need - len(holders)
            if missing > 0:
                outsiders = [sid for sid in sids if bid not in sharing[sid]]
                picks = rng.permutation(len(outsiders))[:missing]
                for p in picks:
                    sharing[outsiders[int(p)]].append(bid)
    return {sid: tuple(sorted(set(v))) for sid, v in sharing.items()}


def _latin_features(rng, n: int, d: int) -> np.ndarray:
    """Jittered per-axis grids: spread points keep design and leave-one-out
    Gram matrices well conditioned far more often than i.i.d. uniforms."""
    coords = np.empty((n, d))
    for axis in range(d):
        order = rng.permutation(n)
        offsets = rng.uniform(0.1, 0.9, size=n)
        coords[:, axis] = -2.0 + 4.0 * (order + offsets) / n
    return coords


def _attempt(spec: GenerationSpec, rng) -> MarketScenario:
    sids = [f"s{k + 1:03d}" for k in range(spec.n_sources)]
    bids = [f"b{k + 1:03d}" for k in range(spec.n_aggregators)]
    features = _latin_features(rng, spec.n_sources, spec.dimension)
    sharing = _draw_sharing(spec, rng, sids, bids)
    datasets = {bid: [sid for sid in sids if bid in sharing[sid]] for bid in bids}

    aggregators = []
    for bid in bids:
        ds = datasets[bid]
        n_atoms = int(rng.integers(1, 4))
        atoms = []
        weights = rng.dirichlet(np.ones(n_atoms))
        for w in weights:
            # queries mix dataset points so relevance is spread over sources
            mix = rng.dirichlet(np.ones(len(ds)))
            point = tuple(float(c) for c in
                          mix @ features[[sids.index(s) for s in ds]])
            atoms.append((point, float(w)))
        zeta = {j: float(rng.uniform(0.0, spec.zeta_max)) for j in bids if j != bid}
        aggregators.append(AggregatorSpec(bid, EstimatorSpec(),
                                          QueryDistribution(tuple(atoms)), zeta))
    ground_truth = GroundTruth(tuple(float(c) for c in
                                     rng.uniform(-2.0, 2.0, size=spec.dimension)),
                               float(rng.uniform(-1.0, 1.0)))

    direct_beta = direct_xi = None
    if spec.mode == MODE_DIRECT:
        beta = {(sid, bid): float(rng.uniform(0.5, 2.0))
                for sid in sids for bid in sharing[sid]}
        direct_beta = beta
        direct_xi = {
            bid: {(i, l): 1.0 if i == l else float(rng.uniform(0.0, spec.coupling_scale))
                  for i in datasets[bid] for l in datasets[bid]}
            for bid in bids}
    else:
        # relevance is pure geometry, derivable before any effort family exists
        beta = {}
        for k, bid in enumerate(bids):
            pts = features[[sids.index(s) for s in datasets[bid]]]
            h = ols_coefficients(pts, aggregators[k].query_dist)
            for sid, value in zip(datasets[bid], h):
                beta[(sid, bid)] = float(value)

    zeta_by_bid = {a.id: a.zeta for a in aggregators}
    gamma_total = {}
    for sid in sids:
        total = 0.0
        for bid in sharing[sid]:
            rival = sum(zeta_by_bid[bid].get(j, 0.0) * beta[(sid, j)]
                        for j in sharing[sid] if j != bid)
            total += beta[(sid, bid)] - rival
        gamma_total[sid] = total
    if min(gamma_total.values()) <= 0:
        raise DomainError("competition cancelled some source's demand")  # retried

    # minimum incentives sized a random fraction below each total demand
    models = {sid: _draw_model(spec, rng,
                               gamma_total[sid] * float(rng.uniform(0.05, 0.6)))
              for sid in sids}
    effort_sets = {sid: EffortSet("unbounded") for sid in sids}
    if spec.bounded:
        # caps a random factor above total demand satisfy the saturation
        # hypothesis by construction
        for sid in sids:
            a_upper = gamma_total[sid] * float(rng.uniform(1.1, 2.5))
            e_max = effort_response(models[sid], a_upper)
            effort_sets[sid] = EffortSet("bounded", e_max=e_max)
    sources = tuple(
        DataSourceSpec(sid, tuple(map(float, features[k])),
                       EffortVarianceModel(models[sid].family, effort_sets[sid]),
                       sharing[sid])
        for k, sid in enumerate(sids))
    return MarketScenario(sources, tuple(aggregators), ground_truth,
                          mode=spec.mode, direct_beta=direct_beta,
                          direct_xi=direct_xi)


def generate_scenario(spec: GenerationSpec, seed: int) -> MarketScenario:
    """Deterministic random scenario guaranteed to pass validation.

    Attempt k draws from the substream SeedSequence(entropy=seed,
    spawn_key=(k,)); the first draw whose validation report is clean is
    returned, so identical (spec, seed) always yield identical documents.
    Raises GenerationError (with the attempt count) if the retry budget is
    exhausted.
    """
    scenario, _ = generate_scenario_with_attempts(spec, seed)
    return scenario


def generate_scenario_with_attempts(spec: GenerationSpec, seed: int
                                    ) -> tuple[MarketScenario, int]:
    last_failure = "no attempt recorded"
    for attempt in range(MAX_GENERATION_ATTEMPTS):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
        try:
            scenario = _attempt(spec, rng)
        except DomainError as exc:
            last_failure = str(exc)
            continue
        report = validate_scenario(scenario)
        if report.ok:
            return scenario, attempt + 1
        last_failure = "; ".join(v.message for v in report.violations[:3])
    raise GenerationError(
        f"no valid scenario in {MAX_GENERATION_ATTEMPTS} attempts for "
        f"spec {spec} seed {seed} (last failure: {last_failure})",
        attempts=MAX_GENERATION_ATTEMPTS)
