"""
ShellRig Experiments Module

Scenario construction from a validated config, the partition-and-classify
procedure, convergence traces of immersion families, parameter sweeps and
report emission.
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from shellrig.config import ScenarioConfig
from shellrig.errors import ConfigError, HypothesisError, MetricError, PatchError, ReportError
from shellrig.families import Family
from shellrig.immersions import (
    DiscreteImmersion,
    GridDomain,
    ShapeField,
    bending_energy,
    lp_distance,
    modified_bending,
    poincare_check,
    reference_shape_operator,
    shape_residual_density,
    stretching_density,
    stretching_energy,
    w1p_distance,
)
from shellrig.metric_core import map_norms
from shellrig.rigidity import (
    BoundReport,
    GoodSet,
    bound_report,
    local_rigidity_codim1,
    reverse_poincare_check,
)
from shellrig.target_space import (
    ChristoffelField,
    CutoffProfile,
    ExtendedChart,
    MetricField,
    affine_chart,
    catalog_metric,
    constant,
    conformal_wave,
    extend_chart,
    flat,
    normal_coordinates,
)
from shellrig.transport import pointwise_distance, segment_sasaki_bound

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "k",
    "E_s",
    "E_b",
    "E_bS",
    "lp_to_final",
    "w1p_to_final",
    "cauchy_increment",
    "dist_du_Ort_median",
    "shape_residual_median",
]

SUBSEQUENCE_NOTE = (
    "increments are reported for the full sequence; convergence is only guaranteed along a subsequence"
)

_FAMILY_ADAPTER = TypeAdapter(Family)


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    domain: GridDomain
    target: MetricField
    family: Any
    immersion: DiscreteImmersion
    reference: ShapeField

    @property
    def name(self) -> str:
        return self.config.scenario.name

    @property
    def p(self) -> float:
        return self.config.p

    @property
    def seed(self) -> int:
        return self.config.scenario.seed

    @cached_property
    def extended_chart(self) -> ExtendedChart:
        section = self.config.chart
        center = self.immersion.values[self.domain.center_index()] if section.center is None else section.center
        try:
            if section.kind == "normal":
                chart = normal_coordinates(self.target, center, section.radius)
            else:
                chart = affine_chart(self.target, center, section.radius)
        except (MetricError, PatchError) as exc:
            raise ConfigError("chart.center", str(exc)) from exc
        return extend_chart(chart, CutoffProfile(self.target.dim), section.r)

    def with_family(self, updates: Dict[str, Any], path: str = "family") -> "Scenario":
        merged = {**self.family.model_dump(), **updates}
        try:
            family = _FAMILY_ADAPTER.validate_python(merged)
        except ValidationError as exc:
            first = exc.errors()[0]
            raise ConfigError(".".join([path, *map(str, first["loc"])]), first["msg"]) from None
        immersion = _build_immersion(family, self.domain, self.target)
        reference = _reference(self.config, family, self.domain)
        return Scenario(self.config, self.domain, self.target, family, immersion, reference)


def _source_metric(config: ScenarioConfig) -> MetricField:
    section = config.domain
    d = section.d
    try:
        if section.source_metric == "flat":
            return flat(d)
        if section.source_metric == "constant":
            return constant(d, section.source_params["entries"])
        if section.source_metric == "conformal-wave":
            return conformal_wave(d, **section.source_params)
        provisional = GridDomain(d, section.side, section.m_per_side, section.origin)
        return config.family.induced_metric(d, provisional)
    except KeyError as exc:
        raise ConfigError("domain.source_params", f"missing parameter {exc.args[0]!r}") from None
    except (MetricError, TypeError) as exc:
        raise ConfigError("domain.source_params", str(exc)) from None


def _build_immersion(family, domain: GridDomain, target: MetricField) -> DiscreteImmersion:
    try:
        return family.build(domain, target)
    except (PatchError, MetricError) as exc:
        raise ConfigError("family", str(exc)) from None


def _reference(config: ScenarioConfig, family, domain: GridDomain) -> ShapeField:
    section = config.reference
    if section.kind == "zero":
        return reference_shape_operator(domain, np.zeros((domain.d, domain.d)))
    if section.kind == "constant":
        try:
            return reference_shape_operator(domain, np.asarray(section.entries, dtype=float))
        except (MetricError, ValueError) as exc:
            raise ConfigError("reference.entries", str(exc)) from None
    return ShapeField(family.limit_shape(domain), np.ones(domain.shape, dtype=bool))


def build_scenario(config: ScenarioConfig) -> Scenario:
    section = config.domain
    try:
        domain = GridDomain(section.d, section.side, section.m_per_side, section.origin, _source_metric(config),
                            section.lam)
    except MetricError as exc:
        raise ConfigError("domain.lam", str(exc)) from None
    try:
        target = catalog_metric(config.target_metric, section.d + 1, **config.target.params)
    except MetricError as exc:
        raise ConfigError("target.metric", str(exc)) from None
    except TypeError as exc:
        raise ConfigError("target.params", str(exc)) from None
    immersion = _build_immersion(config.family, domain, target)
    reference = _reference(config, config.family, domain)
    logger.info(
        "scenario %r: %s family on %d^%d grid into %s",
        config.scenario.name, config.family.name, section.m_per_side, section.d, target.name,
    )
    return Scenario(config, domain, target, config.family, immersion, reference)


# ---------------------------------------------------------------- partition


class PartitionClassification(BaseModel):
    m: int
    cubes: List[List[int]]
    densities: List[float]
    good: List[List[int]]
    bad: List[List[int]]
    tau: float
    q0: List[float]
    outside_fraction: float
    bad_volume: float
    volume_bound: float
    hypothesis_holds: bool


def classify_partition(u: DiscreteImmersion, m: int, q0=None, tau: Optional[float] = None,
                       epsilon: float = 0.1, p: float = 2.0) -> PartitionClassification:
    """Subcubes whose image density in B(q0, tau) exceeds 1/2 are good"""
    domain = u.domain
    q0 = u.values[domain.center_index()] if q0 is None else np.asarray(q0, dtype=float)
    distance = pointwise_distance(u.target, u.values, np.broadcast_to(q0, u.values.shape))
    if tau is None:
        tau = 3.0 * float(np.max(distance))
    inside = distance <= tau
    cubes, densities, good, bad = [], [], [], []
    cube_volume = domain.volume / m**domain.d
    for index in np.ndindex(*(m,) * domain.d):
        slices = domain.subcube_slices(index, m)
        weights = domain.subcube(index, m).weights
        density = float(np.sum(weights * inside[slices]) / np.sum(weights))
        cubes.append(list(index))
        densities.append(density)
        (good if density > 0.5 else bad).append(list(index))
    outside = float(np.sum(domain.weights * ~inside) / np.sum(domain.weights))
    holds = outside <= epsilon**p
    bad_volume = len(bad) * cube_volume
    bound = 2.0 * epsilon**p * domain.volume
    if holds and bad_volume > bound * (1.0 + 1e-12):
        raise ArithmeticError(f"bad cubes cover {bad_volume:.6g} > {bound:.6g} although the density hypothesis holds")
    return PartitionClassification(
        m=m, cubes=cubes, densities=densities, good=good, bad=bad, tau=float(tau), q0=np.asarray(q0).tolist(),
        outside_fraction=outside, bad_volume=bad_volume, volume_bound=bound, hypothesis_holds=holds,
    )


def aggregate_partition_bound(u1: DiscreteImmersion, u2: DiscreteImmersion,
                              classification: PartitionClassification, ext: ExtendedChart, delta: float,
                              p: float) -> BoundReport:
    """Good-cube reverse Poincare integrals plus the triangle bound on bad cubes against the global integral"""
    domain = u1.domain
    target = u1.target
    G = domain.metric_tables
    sasaki = segment_sasaki_bound(target, ChristoffelField(target), u1.values, u1.du, u2.values, u2.du, G)
    lhs = domain.integrate(sasaki**p, volume_form=False)
    m = classification.m
    good_sum, good_rhs, bad_cubes = 0.0, 0.0, [tuple(i) for i in classification.bad]
    for index in map(tuple, classification.good):
        v1, v2 = u1.restrict(index, m), u2.restrict(index, m)
        try:
            report = reverse_poincare_check(v1, v2, ext, GoodSet.from_chart(v1, ext), GoodSet.from_chart(v2, ext),
                                            delta, p)
        except HypothesisError as exc:
            logger.info("good cube %s fails %s; bounded as a bad cube", index, exc.hypothesis)
            bad_cubes.append(index)
            continue
        good_sum += report.lhs
        good_rhs += report.rhs
    segment = segment_sasaki_bound(target, ChristoffelField(target), u1.values, np.zeros_like(u1.du), u2.values,
                                   np.zeros_like(u2.du), G)
    crude = (map_norms(u1.du, G, u1.target_tables) + map_norms(u2.du, G, u2.target_tables) + segment) ** p
    bad_sum = 0.0
    for index in bad_cubes:
        slices = domain.subcube_slices(index, m)
        bad_sum += float(np.sum(domain.subcube(index, m).weights * crude[slices]))
    return bound_report(
        "partition_aggregate",
        lhs,
        {"good_cubes": good_sum, "bad_cubes": bad_sum},
        {"good_count": m**domain.d - len(bad_cubes), "bad_count": len(bad_cubes), "good_rhs": good_rhs},
    )


# ---------------------------------------------------------------- convergence


class ConvergenceTrace(BaseModel):
    rows: List[Dict[str, float]]
    es_rate: Optional[float] = None
    cauchy_rate: Optional[float] = None
    cauchy_ratio: Optional[float] = None
    converging: Optional[bool] = None
    final: Dict[str, float] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)
    note: str = SUBSEQUENCE_NOTE


def _energies(u: DiscreteImmersion, reference: ShapeField, p: float) -> Dict[str, float]:
    residual = shape_residual_density(u, reference)
    return {
        "E_s": stretching_energy(u, p),
        "E_b": bending_energy(u, p),
        "E_bS": modified_bending(u, reference, p),
        "dist_du_Ort_median": float(np.median(stretching_density(u)[u.regular])),
        "shape_residual_median": float(np.nanmedian(residual)) if np.any(np.isfinite(residual)) else float("nan"),
    }


def _trace_row(k: float, u, previous, final, reference: ShapeField, p: float) -> Dict[str, float]:
    row = {"k": float(k)}
    row.update(_energies(u, reference, p))
    row["lp_to_final"] = lp_distance(u, final, p)
    row["w1p_to_final"] = w1p_distance(u, final, p)
    row["cauchy_increment"] = float("nan") if previous is None else w1p_distance(previous, u, p)
    return {column: row[column] for column in TRACE_COLUMNS}


def _fit_rate(k: np.ndarray, values: np.ndarray, fit_from: float) -> Optional[float]:
    keep = (k >= fit_from) & np.isfinite(values) & (values > 0.0)
    if np.count_nonzero(keep) < 2:
        return None
    slope, _ = np.polyfit(np.log(k[keep]), np.log(values[keep]), 1)
    return float(slope)


def convergence_experiment(scenarios: Sequence[Scenario], ks: Sequence[float], fit_from: float = 4.0,
                           n_jobs: int = 1) -> ConvergenceTrace:
    """Energies, distances to the final iterate and Cauchy increments over a family ordered by k"""
    if len(scenarios) != len(ks):
        raise ValueError("one scenario per sequence index is required")
    if not scenarios:
        return ConvergenceTrace(rows=[])
    p = scenarios[0].p
    immersions = [s.immersion for s in scenarios]
    final = immersions[-1]
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_trace_row)(k, u, immersions[i - 1] if i else None, final, scenarios[i].reference, p)
        for i, (k, u) in enumerate(zip(ks, immersions))
    )
    k = np.asarray(ks, dtype=float)
    es = np.array([row["E_s"] for row in rows])
    increments = np.array([row["cauchy_increment"] for row in rows])
    warnings = []
    rising = np.flatnonzero(np.diff(es) > 1e-14 * max(1.0, float(es.max())))
    if rising.size:
        message = f"E_s is not monotone: increases after k = {', '.join(f'{k[i]:g}' for i in rising)}"
        logger.warning(message)
        warnings.append(message)
    finite = increments[np.isfinite(increments)]
    ratio = float(finite[-1] / finite[0]) if finite.size >= 2 and finite[0] > 0.0 else None
    last = rows[-1]
    return ConvergenceTrace(
        rows=rows,
        es_rate=_fit_rate(k, es, fit_from),
        cauchy_rate=_fit_rate(k, increments, fit_from),
        cauchy_ratio=ratio,
        converging=None if ratio is None else ratio < 0.5,
        final={
            "dist_du_Ort_median": last["dist_du_Ort_median"],
            "dist_du_Ort_max": float(np.max(stretching_density(final))),
            "shape_residual_median": last["shape_residual_median"],
            "shape_residual_q90": float(np.nanquantile(shape_residual_density(final, scenarios[-1].reference), 0.9)),
            "spacing": final.domain.spacing,
        },
        warnings=warnings,
    )


# ---------------------------------------------------------------- results


class ExperimentResult(BaseModel):
    kind: str
    scenario: str
    columns: List[str]
    rows: List[Dict[str, Any]] = Field(default_factory=list)
    reports: List[Dict[str, Any]] = Field(default_factory=list)
    summary: Dict[str, Any] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)


def json_document(result: ExperimentResult) -> Dict[str, Any]:
    """Result as plain JSON data; NaN and infinite entries become null"""

    def clean(value):
        if isinstance(value, dict):
            return {key: clean(val) for key, val in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(val) for val in value]
        if isinstance(value, float) and not math.isfinite(value):
            return None
        return value

    return clean(result.model_dump())


def emit_reports(result: ExperimentResult, directory, stem: Optional[str] = None,
                 formats: Sequence[str] = ("csv", "json")) -> List[Path]:
    """CSV table (one row per k or sweep point) and the full JSON document"""
    directory = Path(directory)
    stem = stem or result.scenario
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            path = directory / f"{stem}.csv"
            pd.DataFrame(result.rows, columns=result.columns).to_csv(path, index=False, float_format="%.12g")
            written.append(path)
        if "json" in formats:
            path = directory / f"{stem}.json"
            path.write_text(json.dumps(json_document(result), sort_keys=True, indent=2, allow_nan=False) + "\n")
            written.append(path)
    except OSError as exc:
        raise ReportError(f"cannot write reports to {directory}: {exc}") from exc
    logger.info("wrote %s", ", ".join(str(p) for p in written))
    return written


def export_immersion(u: DiscreteImmersion, path) -> Path:
    """CSV of node coordinates, values, normals and shape operator entries"""
    d, n = u.d, u.d + 1
    columns = {f"x{a + 1}": u.domain.nodes[..., a].ravel() for a in range(d)}
    columns.update({f"u{k + 1}": u.values[..., k].ravel() for k in range(n)})
    columns.update({f"nu{k + 1}": u.normal[..., k].ravel() for k in range(n)})
    for i in range(d):
        for j in range(d):
            columns[f"S{i + 1}{j + 1}"] = u.shape.tables[..., i, j].ravel()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns).to_csv(path, index=False, float_format="%.12g")
    except OSError as exc:
        raise ReportError(f"cannot export immersion to {path}: {exc}") from exc
    return path


def _report_row(report: BoundReport, **extra) -> Dict[str, float]:
    row = dict(extra)
    row.update(lhs=report.lhs, rhs=report.rhs, ratio=report.ratio)
    row.update({f"rhs_{key}": value for key, value in report.rhs_terms.items()})
    return row


def _sweep_point(scenario: Scenario, name: str, value: float) -> Dict[str, Any]:
    point = scenario.with_family({name: value})
    u, p = point.immersion, point.p
    ext = point.extended_chart
    report = local_rigidity_codim1(u, ext, GoodSet.from_chart(u, ext), point.config.chart.delta, p)
    row = {name: float(value)}
    row.update({key: val for key, val in _energies(u, point.reference, p).items() if key.startswith("E_")})
    row.update(_report_row(report))
    return {"row": row, "report": report.model_dump()}


def parameter_sweep(scenario: Scenario, name: str, values: Sequence[float], n_jobs: int = 1) -> ExperimentResult:
    """Energies and the local rigidity report for each value of a family parameter"""
    if name not in type(scenario.family).model_fields:
        raise ConfigError(f"family.{name}", f"family {scenario.family.name!r} has no parameter {name!r}")
    points = Parallel(n_jobs=n_jobs)(delayed(_sweep_point)(scenario, name, v) for v in values)
    rows = [point["row"] for point in points]
    columns = list(rows[0]) if rows else [name, "E_s", "E_b", "E_bS", "lhs", "rhs", "ratio"]
    ratios = [row["ratio"] for row in rows]
    summary = {"max_ratio": max(ratios), "min_ratio": min(ratios)} if ratios else {}
    return ExperimentResult(kind="sweep", scenario=scenario.name, columns=columns, rows=rows,
                            reports=[point["report"] for point in points], summary=summary,
                            config=scenario.config.resolved())


def _energies_result(scenario: Scenario) -> ExperimentResult:
    u, p = scenario.immersion, scenario.p
    row = {key: val for key, val in _energies(u, scenario.reference, p).items()}
    check = poincare_check(u, p, seed=scenario.seed)
    row.update(poincare_lhs=check.lhs, poincare_rhs=check.rhs, poincare_ratio=check.ratio)
    row["degenerate_nodes"] = int(u.regular.size - np.count_nonzero(u.regular))
    return ExperimentResult(kind="energies", scenario=scenario.name, columns=list(row), rows=[row],
                            config=scenario.config.resolved())


def _rigidity_result(scenario: Scenario, n_jobs: int) -> ExperimentResult:
    section = scenario.config.experiment
    if section.values:
        result = parameter_sweep(scenario, section.sweep_param, section.values, n_jobs)
        return result.model_copy(update={"kind": "rigidity"})
    u, ext = scenario.immersion, scenario.extended_chart
    report = local_rigidity_codim1(u, ext, GoodSet.from_chart(u, ext), scenario.config.chart.delta, scenario.p)
    row = _report_row(report)
    return ExperimentResult(kind="rigidity", scenario=scenario.name, columns=list(row), rows=[row],
                            reports=[report.model_dump()], config=scenario.config.resolved())


def _reverse_poincare_result(scenario: Scenario) -> ExperimentResult:
    partner = scenario.with_family(scenario.config.experiment.partner, "experiment.partner")
    u1, u2, ext = scenario.immersion, partner.immersion, scenario.extended_chart
    delta, p = scenario.config.chart.delta, scenario.p
    sizes = [int(v) for v in scenario.config.experiment.values] or [1]
    rows, reports = [], []
    for m in sizes:
        index = (0,) * u1.d
        v1, v2 = (u1, u2) if m == 1 else (u1.restrict(index, m), u2.restrict(index, m))
        report = reverse_poincare_check(v1, v2, ext, GoodSet.from_chart(v1, ext), GoodSet.from_chart(v2, ext),
                                        delta, p)
        rows.append(_report_row(report, m=m))
        reports.append(report.model_dump())
    ratios = [row["ratio"] for row in rows]
    return ExperimentResult(kind="reverse-poincare", scenario=scenario.name, columns=list(rows[0]), rows=rows,
                            reports=reports, summary={"max_ratio": max(ratios), "min_ratio": min(ratios)},
                            config=scenario.config.resolved())


def _partition_result(scenario: Scenario) -> ExperimentResult:
    section = scenario.config.partition
    partner = scenario.with_family(scenario.config.experiment.partner, "experiment.partner")
    try:
        classification = classify_partition(scenario.immersion, section.m, section.q0, section.tau,
                                            section.epsilon, scenario.p)
    except ValueError as exc:
        raise ConfigError("partition.m", str(exc)) from None
    report = aggregate_partition_bound(scenario.immersion, partner.immersion, classification,
                                       scenario.extended_chart, scenario.config.chart.delta, scenario.p)
    rows = [
        {"cube": "-".join(map(str, cube)), "density": density, "good": density > 0.5}
        for cube, density in zip(classification.cubes, classification.densities)
    ]
    return ExperimentResult(kind="partition", scenario=scenario.name, columns=["cube", "density", "good"],
                            rows=rows, reports=[report.model_dump()],
                            summary=classification.model_dump(exclude={"cubes", "densities"}),
                            config=scenario.config.resolved())


def _convergence_result(scenario: Scenario, n_jobs: int) -> ExperimentResult:
    section = scenario.config.experiment
    if not section.values:
        raise ConfigError("experiment.values", "a convergence experiment needs the sequence indices")
    scenarios = [scenario.with_family({section.sweep_param: v}) for v in section.values]
    trace = convergence_experiment(scenarios, section.values, section.fit_from, n_jobs)
    summary = trace.model_dump(exclude={"rows"})
    return ExperimentResult(kind="convergence", scenario=scenario.name, columns=list(TRACE_COLUMNS),
                            rows=trace.rows, summary=summary, config=scenario.config.resolved())


def run_experiment(config: ScenarioConfig, n_jobs: Optional[int] = None) -> ExperimentResult:
    scenario = build_scenario(config)
    kind = config.experiment.kind
    n_jobs = config.experiment.n_jobs if n_jobs is None else n_jobs
    logger.info("running %s experiment for %r", kind, scenario.name)
    if kind == "energies":
        return _energies_result(scenario)
    if kind == "rigidity":
        return _rigidity_result(scenario, n_jobs)
    if kind == "reverse-poincare":
        return _reverse_poincare_result(scenario)
    if kind == "partition":
        return _partition_result(scenario)
    return _convergence_result(scenario, n_jobs)
