"""
ShellRig Rigidity Module

Quantitative rigidity estimates evaluated as measurable left- and right-hand
sides: the flat estimate with variable metric, the codimension-1 local
estimate in a chart, the norm estimate for linear maps and the reverse
Poincare comparison of two immersions.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize

from shellrig.errors import HypothesisError
from shellrig.immersions import (
    DiscreteImmersion,
    GridDomain,
    bending_energy,
    grid_gradient,
    stretching_energy,
)
from shellrig.metric_core import (
    ConstMetric,
    LinearMapSample,
    isometry_distance,
    isometry_is_unique,
    map_norms,
    nearest_isometry,
)
from shellrig.target_space import ChristoffelField, ExtendedChart, epsilon_isometric_check
from shellrig.transport import pointwise_distance, segment_sasaki_bound

logger = logging.getLogger(__name__)

EPSILON_SAMPLES = 64


class BoundReport(BaseModel):
    """lhs against the sum of labelled additive rhs terms"""

    model_config = ConfigDict(frozen=True)

    name: str
    lhs: float
    rhs_terms: Dict[str, float]
    ratio: float
    details: Dict[str, float] = Field(default_factory=dict)

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms.values()))


class RigidityReport(BoundReport):
    x0: List[int]
    x0_coords: List[float]
    rotation: List[List[float]]
    rotation_unique: bool


def _ratio(lhs: float, rhs_terms: Dict[str, float]) -> float:
    total = float(sum(rhs_terms.values()))
    if total > 0.0:
        return float(lhs) / total
    return 0.0 if lhs == 0.0 else float("inf")


def bound_report(name: str, lhs: float, rhs_terms: Dict[str, float], details: Optional[Dict[str, float]] = None,
                 model=BoundReport, **extra):
    rhs_terms = {key: float(value) for key, value in rhs_terms.items()}
    return model(
        name=name,
        lhs=float(lhs),
        rhs_terms=rhs_terms,
        ratio=_ratio(lhs, rhs_terms),
        details={key: float(value) for key, value in (details or {}).items()},
        **extra,
    )


def _check_exponent(p: float):
    if not p > 1.0:
        raise ValueError(f"exponent p must lie in (1, inf), got {p}")


@dataclass(frozen=True, eq=False)
class GoodSet:
    """Node mask F with its dx-fraction |Q \\ F| / |Q|"""

    mask: np.ndarray
    fraction: float

    @classmethod
    def from_mask(cls, domain: GridDomain, mask) -> "GoodSet":
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != domain.shape:
            raise ValueError(f"good-set mask has shape {mask.shape}, grid is {domain.shape}")
        outside = float(np.sum(domain.weights[~mask]) / np.sum(domain.weights))
        return cls(mask, outside)

    @classmethod
    def full(cls, domain: GridDomain) -> "GoodSet":
        return cls(np.ones(domain.shape, dtype=bool), 0.0)

    @classmethod
    def from_chart(cls, u: DiscreteImmersion, ext: ExtendedChart) -> "GoodSet":
        """All nodes whose image lies in phi^-1(B(0, r))"""
        return cls.from_mask(u.domain, ext.inside(u.values))

    def require(self, delta: float, p: float):
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        if self.fraction > delta**p + 1e-12:
            raise HypothesisError(
                "good-set fraction", f"|Q \\ F|/|Q| = {self.fraction:.6g} exceeds delta^p = {delta**p:.6g}"
            )


def _require_image_in_ball(u: DiscreteImmersion, ext: ExtendedChart, F: GoodSet, label: str = "u"):
    escaped = F.mask & ~np.asarray(ext.inside(u.values), dtype=bool)
    if np.any(escaped):
        raise HypothesisError(
            "image of F inside the chart ball",
            f"{int(np.count_nonzero(escaped))} nodes of F are mapped by {label} outside phi^-1(B(0, {ext.r:g}))",
        )


def oscillation(domain: GridDomain, max_pairs: int = 10_000, seed: int = 0) -> float:
    """max |g(x) - g(z)| over all node pairs, or over a seeded sample of them"""
    tables = domain.metric_tables.reshape(-1, domain.d * domain.d)
    count = len(tables)
    if domain.metric.flat or count < 2:
        return 0.0
    if count * (count - 1) // 2 <= max_pairs:
        i, j = np.triu_indices(count, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, count, max_pairs)
        j = rng.integers(0, count, max_pairs)
    return float(np.max(np.linalg.norm(tables[i] - tables[j], axis=-1)))


# ---------------------------------------------------------------- flat estimate

X0Strategy = Union[str, Tuple[int, ...]]


class _RotationFit(NamedTuple):
    index: Tuple[int, ...]
    rotation: np.ndarray
    unique: bool
    lhs: float


def _fit_rotation(Dv: np.ndarray, domain: GridDomain, index: Tuple[int, ...], p: float) -> _RotationFit:
    """Oriented nearest isometry in SO(g(x0), e) to the mean differential"""
    G0 = domain.metric_tables[index]
    mean = np.tensordot(domain.weights, Dv, axes=domain.d) / np.sum(domain.weights)
    sample = LinearMapSample(mean, ConstMetric(0.5 * (G0 + G0.T)), ConstMetric.euclidean(Dv.shape[-2]))
    rotation = nearest_isometry(sample, oriented=True).rotation.coefficients
    lhs = domain.integrate(map_norms(Dv - rotation, domain.metric_tables, None) ** p, volume_form=False)
    return _RotationFit(tuple(int(i) for i in index), rotation, isometry_is_unique(sample, oriented=True), lhs)


def _candidate_indices(domain: GridDomain, per_axis: int = 5):
    line = np.unique(np.linspace(0, domain.m_per_side - 1, per_axis).round().astype(int))
    grids = np.meshgrid(*([line] * domain.d), indexing="ij")
    return [tuple(int(g.flat[k]) for g in grids) for k in range(grids[0].size)]


def flat_rigidity(v, domain: GridDomain, p: float, x0: X0Strategy = "center",
                  osc: Optional[float] = None) -> RigidityReport:
    """int |Dv - R|^p dx against |Q| osc(g)^p + int dist^p(Dv, SO(g, e)) dx"""
    _check_exponent(p)
    v = np.asarray(v, dtype=float)
    if v.shape != domain.shape + (domain.d,):
        raise ValueError(f"map values have shape {v.shape}, expected {domain.shape + (domain.d,)}")
    Dv = grid_gradient(v, domain)
    if x0 == "center":
        fit = _fit_rotation(Dv, domain, domain.center_index(), p)
    elif x0 == "best":
        fit = min((_fit_rotation(Dv, domain, index, p) for index in _candidate_indices(domain)), key=lambda f: f.lhs)
    elif isinstance(x0, str):
        raise ValueError(f"unknown base point strategy {x0!r}; use 'center', 'best' or a node index")
    else:
        fit = _fit_rotation(Dv, domain, tuple(x0), p)
    osc = oscillation(domain) if osc is None else osc
    distance = isometry_distance(Dv, domain.metric_tables, None, oriented=True)
    rhs_terms = {
        "oscillation": domain.volume * osc**p,
        "rotation_distance": domain.integrate(distance**p, volume_form=False),
    }
    return bound_report(
        "flat_rigidity",
        fit.lhs,
        rhs_terms,
        model=RigidityReport,
        x0=list(fit.index),
        x0_coords=domain.nodes[fit.index].tolist(),
        rotation=fit.rotation.tolist(),
        rotation_unique=fit.unique,
    )


# ---------------------------------------------------------------- norm estimate


def _half_axis_rule(order: int):
    """Nodes and weights on [-1, 1] for the weight 1 - |z|"""
    t, w = np.polynomial.legendre.leggauss(order)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    return np.concatenate([-t, t]), np.concatenate([w * (1.0 - t), w * (1.0 - t)])


def _difference_rule(d: int, order: int):
    nodes, weights = _half_axis_rule(order)
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    wgrid = np.meshgrid(*([weights] * d), indexing="ij")
    return points, np.prod(np.stack([g.ravel() for g in wgrid], axis=-1), axis=-1)


def norm_functional(R, d: int, p: float, side: float = 1.0, order: int = 24) -> float:
    """Psi(R) = (int_Q int_Q |R(x - y)|^p dx dy)^(1/p) on a cube of the given side"""
    points, weights = _difference_rule(d, order)
    return _psi(np.asarray(R, dtype=float).reshape(-1, d), points, weights, p) * side ** (1.0 + 2.0 * d / p)


def _psi(R: np.ndarray, points: np.ndarray, weights: np.ndarray, p: float) -> float:
    values = np.linalg.norm(points @ R.T, axis=-1) ** p
    return float(weights @ values) ** (1.0 / p)


class NormEstimate(NamedTuple):
    m: float
    constant: float
    minimizer: np.ndarray


def norm_estimate_constant(domain: GridDomain, p: float, tgt_dim: int, order: int = 24, n_random: int = 8,
                           seed: int = 0) -> NormEstimate:
    """m = min Psi(R) over |R| = 1 on the unit cube; C = 1/m"""
    _check_exponent(p)
    d = domain.d
    points, weights = _difference_rule(d, order)

    def objective(x):
        size = np.linalg.norm(x)
        if size == 0.0:
            return 1e30
        return _psi(x.reshape(tgt_dim, d) / size, points, weights, p)

    seeds = list(np.eye(tgt_dim * d))
    rng = np.random.default_rng(seed)
    seeds.extend(rng.standard_normal((n_random, tgt_dim * d)))
    best = None
    for start in seeds:
        result = minimize(objective, start, method="Nelder-Mead",
                          options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        if best is None or result.fun < best.fun:
            best = result
    minimizer = best.x.reshape(tgt_dim, d) / np.linalg.norm(best.x)
    m = float(best.fun)
    logger.debug("norm estimate: d=%d p=%g m=%.8g from %d seeds", d, p, m, len(seeds))
    return NormEstimate(m, 1.0 / m, minimizer)


def norm_estimate_check(R, estimate: NormEstimate, domain: GridDomain, p: float, order: int = 24) -> BoundReport:
    """|R| against C |Q|^(-1/d - 2/p) Psi(R)"""
    R = np.asarray(R, dtype=float)
    d = domain.d
    psi = norm_functional(R, d, p, domain.side, order)
    scale = domain.volume ** (-1.0 / d - 2.0 / p)
    return bound_report(
        "norm_estimate",
        float(np.linalg.norm(R)),
        {"psi": estimate.constant * scale * psi},
        {"psi": psi, "constant": estimate.constant},
    )


# ---------------------------------------------------------------- codimension one


def _outside_energy(u: DiscreteImmersion, F: GoodSet, r: float, p: float) -> Dict[str, float]:
    """The three parts of (1/r^p) int_{Q\\F} |du|^p + int_Q |du|^p + E_b"""
    gradient = map_norms(u.du, None, u.target_tables) ** p
    return {
        "outside_gradient": u.domain.integrate(np.where(F.mask, 0.0, gradient), volume_form=False) / r**p,
        "gradient": u.domain.integrate(gradient, volume_form=False),
        "bending": bending_energy(u, p),
    }


class EuclideanNormal(NamedTuple):
    normal: np.ndarray
    derivative: np.ndarray
    report: BoundReport


def euclidean_normal_field(u: DiscreteImmersion, ext: ExtendedChart, p: float) -> EuclideanNormal:
    """n~ = D phi^(r)(u) nu and int |Dn~|^p against the energy parts it is bounded by"""
    _check_exponent(p)
    normal = np.einsum("...ij,...j->...i", ext.differential(u.values), u.normal)
    derivative = grid_gradient(normal, u.domain)
    F = GoodSet.from_chart(u, ext)
    lhs = u.domain.integrate(map_norms(derivative, u.domain.metric_tables, None) ** p, volume_form=False)
    report = bound_report("euclidean_normal", lhs, _outside_energy(u, F, ext.r, p))
    return EuclideanNormal(normal, derivative, report)


def _oriented_complement(n0: np.ndarray) -> np.ndarray:
    """Orthonormal columns T spanning n0^perp with det[T, n0] > 0"""
    n = n0.shape[0]
    q, _ = np.linalg.qr(np.column_stack([n0, np.eye(n)]))
    T = q[:, 1:].copy()
    if np.linalg.det(np.column_stack([T, n0])) < 0.0:
        T[:, -1] *= -1.0
    return T


def _euclidean_unit_normal(D: np.ndarray) -> np.ndarray:
    n = D.shape[-2]
    cofactor = np.empty(D.shape[:-1])
    for k in range(n):
        column = np.broadcast_to(np.eye(n)[:, k : k + 1], D.shape[:-1] + (1,))
        cofactor[..., k] = np.linalg.det(np.concatenate([D, column], axis=-1))
    size = np.linalg.norm(cofactor, axis=-1, keepdims=True)
    return np.divide(cofactor, size, out=np.zeros_like(cofactor), where=size > 0.0)


def _select_base_node(normal: np.ndarray, weights: np.ndarray, candidates: np.ndarray, p: float, chunk: int = 128):
    """Candidate z minimizing int |n~(x) - n~(z)|^p dx"""
    flat = normal.reshape(-1, normal.shape[-1])
    w = weights.reshape(-1)
    best_index, best_value = -1, np.inf
    for start in range(0, len(candidates), chunk):
        block = candidates[start : start + chunk]
        spread = np.linalg.norm(flat[None, :, :] - flat[block][:, None, :], axis=-1) ** p @ w
        k = int(np.argmin(spread))
        if spread[k] < best_value:
            best_index, best_value = int(block[k]), float(spread[k])
    return best_index, best_value


def _chart_epsilon(ext: ExtendedChart, images: List[np.ndarray]) -> float:
    samples = np.concatenate(images, axis=0)
    if len(samples) > EPSILON_SAMPLES:
        samples = samples[np.linspace(0, len(samples) - 1, EPSILON_SAMPLES).round().astype(int)]
    return epsilon_isometric_check(ext.base, ext.base.forward(samples)).epsilon


def local_rigidity_codim1(u: DiscreteImmersion, ext: ExtendedChart, F: GoodSet, delta: float, p: float,
                          epsilon: Optional[float] = None) -> RigidityReport:
    """Single rotation R with int |D(phi^(r) o u) - R|^p dx bounded by the chart, metric and energy terms"""
    _check_exponent(p)
    F.require(delta, p)
    _require_image_in_ball(u, ext, F)
    domain = u.domain
    if epsilon is None:
        epsilon = _chart_epsilon(ext, [u.values[F.mask]])

    extended = ext.value(u.values)
    D_ext = grid_gradient(extended, domain)
    normal = np.einsum("...ij,...j->...i", ext.differential(u.values), u.normal)

    usable = F.mask & u.regular & (np.linalg.norm(normal, axis=-1) > 0.0)
    if not usable.any():
        raise HypothesisError("regular good set", "no regular node of F carries a nonzero normal")
    flat_index, spread = _select_base_node(normal, domain.weights, np.flatnonzero(usable), p)
    index = tuple(int(i) for i in np.unravel_index(flat_index, domain.shape))
    n0 = normal[index] / np.linalg.norm(normal[index])

    T = _oriented_complement(n0)
    projected = extended @ T
    flat_report = flat_rigidity(projected, domain, p, x0=index)
    rotation = T @ np.asarray(flat_report.rotation)

    lhs = domain.integrate(map_norms(D_ext - rotation, domain.metric_tables, None) ** p, volume_form=False)
    parts = _outside_energy(u, F, ext.r, p)
    energy = sum(parts.values())
    factor = domain.diameter**p / (1.0 - delta**p)
    euclidean_normal = _euclidean_unit_normal(D_ext)
    gap = np.linalg.norm(euclidean_normal - normal / np.maximum(np.linalg.norm(normal, axis=-1, keepdims=True), 1e-300),
                         axis=-1)
    rhs_terms = {
        "delta": domain.volume * delta**p,
        "epsilon": domain.volume * epsilon**p,
        "oscillation": flat_report.rhs_terms["oscillation"],
        "stretching": stretching_energy(u, p),
        "scaled_energy": factor * energy,
    }
    details = dict(parts)
    details.update(
        energy=energy,
        energy_factor=factor,
        epsilon_measured=epsilon,
        normal_gap=float(np.max(gap[usable])),
        x0_spread=spread,
    )
    return bound_report(
        "local_rigidity_codim1",
        lhs,
        rhs_terms,
        details,
        model=RigidityReport,
        x0=list(index),
        x0_coords=domain.nodes[index].tolist(),
        rotation=rotation.tolist(),
        rotation_unique=flat_report.rotation_unique,
    )


class ProjectionCheck(NamedTuple):
    lhs_projection: float
    rhs_projection: float
    lhs_rotation: float
    rhs_rotation: float
    normal_gap: float
    measured_constant: float


def projection_error_check(T: LinearMapSample, n0, n, constant: float = 4.0) -> ProjectionCheck:
    """Projection onto n0^perp of a map into n^perp, against |T||n0 - n| and dist(T, Ort) + C|n0 - n|"""
    n0, n = np.asarray(n0, dtype=float), np.asarray(n, dtype=float)
    for label, vec in (("n0", n0), ("n", n)):
        if abs(np.linalg.norm(vec) - 1.0) > 1e-10:
            raise ValueError(f"{label} must be a unit vector, |{label}| = {np.linalg.norm(vec):.12g}")
    A = T.coefficients
    g0 = T.src_metric.entries
    scale = map_norms(A, g0, None)
    if np.linalg.norm(n @ A) > 1e-9 * max(1.0, scale):
        raise ValueError("T does not map into the hyperplane orthogonal to n")
    P = np.eye(len(n0)) - np.outer(n0, n0)
    gap = float(np.linalg.norm(n0 - n))
    lhs_projection = float(map_norms(P @ A - A, g0, None))
    rhs_projection = float(scale * gap)
    if lhs_projection > rhs_projection + 1e-12 * (1.0 + rhs_projection):
        raise ArithmeticError(f"projection bound violated: {lhs_projection!r} > {rhs_projection!r}")
    basis = _oriented_complement(n0)
    lhs_rotation = float(isometry_distance(basis.T @ P @ A, g0, None, oriented=True))
    distance = float(isometry_distance(A, g0, None))
    measured = (lhs_rotation - distance) / gap if gap > 0.0 else 0.0
    return ProjectionCheck(lhs_projection, rhs_projection, lhs_rotation, distance + constant * gap, gap,
                           max(measured, 0.0))


def reverse_poincare_check(u1: DiscreteImmersion, u2: DiscreteImmersion, ext: ExtendedChart, F1: GoodSet,
                           F2: GoodSet, delta: float, p: float, epsilon: Optional[float] = None) -> BoundReport:
    """int d_sigma^p(du1, du2) dx against the rigidity, energy and L^p distance terms"""
    _check_exponent(p)
    for label, u, F in (("u1", u1, F1), ("u2", u2, F2)):
        F.require(delta, p)
        _require_image_in_ball(u, ext, F, label)
    domain = u1.domain
    if epsilon is None:
        epsilon = _chart_epsilon(ext, [u1.values[F1.mask], u2.values[F2.mask]])
    target = u1.target
    sasaki = segment_sasaki_bound(target, ChristoffelField(target), u1.values, u1.du, u2.values, u2.du,
                                  domain.metric_tables)
    lhs = domain.integrate(sasaki**p, volume_form=False)
    distance = domain.integrate(pointwise_distance(target, u1.values, u2.values) ** p, volume_form=False)
    volume, diameter, r = domain.volume, domain.diameter, ext.r
    factor = diameter**p / (1.0 - delta**p)
    rhs_terms = {
        "volume": volume * (delta**p + epsilon**p + oscillation(domain) ** p + factor * (1.0 + delta**p / r**p)),
        "stretching": (1.0 + 1.0 / r**p) * max(stretching_energy(u1, p), stretching_energy(u2, p)),
        "bending": factor * max(bending_energy(u1, p), bending_energy(u2, p)),
        "distance": (1.0 + volume ** (-p / domain.d)) * distance,
    }
    return bound_report("reverse_poincare", lhs, rhs_terms, {"epsilon_measured": epsilon, "lp_distance": distance})
