"""
ShellRig Transport Module

Geodesics as polyline energy minimizers, parallel transport along sampled
curves and Sasaki distance upper bounds on vectors and linear maps.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize

from shellrig.errors import GeodesicError, MetricError, PatchError
from shellrig.metric_core import LinearMapSample, map_norms
from shellrig.target_space import Chart, ChristoffelField, MetricField

logger = logging.getLogger(__name__)

DEFAULT_GEODESIC_NODES = 513
STRAIGHT_CANDIDATE_NODES = 65


@dataclass(frozen=True, eq=False)
class CurveSample:
    """Polyline through ``nodes``, parameterized uniformly on [0, 1]"""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[0] < 2:
            raise ValueError(f"a curve needs at least two nodes, got shape {nodes.shape}")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def segment(cls, q1, q2, count: int = 2) -> "CurveSample":
        t = np.linspace(0.0, 1.0, count)[:, None]
        q1, q2 = np.asarray(q1, dtype=float), np.asarray(q2, dtype=float)
        return cls(q1 + t * (q2 - q1))

    @property
    def start(self) -> np.ndarray:
        return self.nodes[0]

    @property
    def end(self) -> np.ndarray:
        return self.nodes[-1]

    def refined(self) -> "CurveSample":
        """Insert the midpoint of every segment"""
        mids = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        out = np.empty((2 * len(self.nodes) - 1, self.nodes.shape[1]))
        out[0::2] = self.nodes
        out[1::2] = mids
        return CurveSample(out)

    def reversed(self) -> "CurveSample":
        return CurveSample(self.nodes[::-1])


@dataclass(frozen=True, eq=False)
class TangentAt:
    base: np.ndarray
    vec: np.ndarray

    def __post_init__(self):
        base = np.array(self.base, dtype=float)
        vec = np.array(self.vec, dtype=float)
        if base.ndim != 1 or vec.shape[0] != base.shape[0]:
            raise MetricError(f"tangent vector of shape {vec.shape} does not match base point of shape {base.shape}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "vec", vec)

    def norm(self, field: MetricField) -> float:
        return float(field.norm(self.base, self.vec))


def _polyline_length(field: MetricField, nodes: np.ndarray) -> np.ndarray:
    """Simpson rule on every segment; batched over leading axes of ``nodes``"""
    deltas = np.diff(nodes, axis=-2)
    mids = 0.5 * (nodes[..., :-1, :] + nodes[..., 1:, :])
    speed_start = field.norm(nodes[..., :-1, :], deltas)
    speed_mid = field.norm(mids, deltas)
    speed_end = field.norm(nodes[..., 1:, :], deltas)
    return np.sum((speed_start + 4.0 * speed_mid + speed_end) / 6.0, axis=-1)


def curve_length(field: MetricField, curve: CurveSample) -> float:
    return float(_polyline_length(field, curve.nodes))


# ---------------------------------------------------------------- geodesics


class Geodesic(NamedTuple):
    curve: CurveSample
    distance: float


def _energy(interior: np.ndarray, field: MetricField, q1, q2, count: int):
    nodes = np.vstack([q1, interior.reshape(count - 2, -1), q2])
    segments = count - 1
    deltas = np.diff(nodes, axis=0)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    try:
        tables = field.metric(mids)
        derivs = field.metric_derivatives(mids)
    except PatchError:
        return 1e20, np.zeros_like(interior)
    hd = np.einsum("sij,sj->si", tables, deltas)
    quad = np.einsum("si,slij,sj->sl", deltas, derivs, deltas)
    energy = segments * float(np.sum(hd * deltas))
    grad = np.zeros_like(nodes)
    grad[1:] += 2.0 * hd + 0.5 * quad
    grad[:-1] += -2.0 * hd + 0.5 * quad
    return energy, segments * grad[1:-1].ravel()


def geodesic_family(field: MetricField, q1, q2, max_nodes: int = DEFAULT_GEODESIC_NODES,
                    initial_nodes: int = 9) -> List[CurveSample]:
    """Energy minimizers along the node-doubling continuation, coarsest first"""
    q1, q2 = field.check(q1), field.check(q2)
    if np.array_equal(q1, q2):
        return [CurveSample(np.vstack([q1, q2]))]
    if field.flat:
        return [CurveSample.segment(q1, q2)]
    curve = CurveSample.segment(q1, q2, initial_nodes)
    family = []
    while True:
        count = len(curve.nodes)
        result = minimize(
            _energy,
            curve.nodes[1:-1].ravel(),
            args=(field, q1, q2, count),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12},
        )
        if result.fun >= 1e20:
            raise GeodesicError(f"no curve from {q1} to {q2} stays inside the patch of {field.name}")
        curve = CurveSample(np.vstack([q1, result.x.reshape(count - 2, -1), q2]))
        try:
            field.check(curve.nodes)
        except PatchError as exc:
            raise GeodesicError(f"energy minimizer from {q1} to {q2} leaves the patch") from exc
        family.append(curve)
        if 2 * count - 1 > max_nodes:
            return family
        curve = curve.refined()


def geodesic_between(field: MetricField, q1, q2, max_nodes: int = DEFAULT_GEODESIC_NODES) -> Geodesic:
    curve = geodesic_family(field, q1, q2, max_nodes)[-1]
    return Geodesic(curve, curve_length(field, curve))


def pointwise_distance(field: MetricField, q1, q2, max_nodes: int = DEFAULT_GEODESIC_NODES) -> np.ndarray:
    """d_h over matching leading axes; closed form when the field has one"""
    q1, q2 = field.check(q1), field.check(q2)
    if field.closed_distance is not None:
        return np.asarray(field.closed_distance(q1, q2), dtype=float)
    shape = np.broadcast_shapes(q1.shape, q2.shape)
    a = np.broadcast_to(q1, shape).reshape(-1, field.dim)
    b = np.broadcast_to(q2, shape).reshape(-1, field.dim)
    out = np.array([geodesic_between(field, x, y, max_nodes).distance for x, y in zip(a, b)])
    return out.reshape(shape[:-1])


# ---------------------------------------------------------------- transport


def _transport(gamma_field: ChristoffelField, nodes: np.ndarray, columns: np.ndarray, substeps: int) -> np.ndarray:
    """RK4 for a' = -Gamma(gamma)[gamma', a] along ``nodes`` in the given order

    ``nodes`` has shape (..., M, n) and ``columns`` (..., n, c).
    """
    deltas = np.diff(nodes, axis=-2)
    t = np.arange(2 * substeps + 1) / (2.0 * substeps)
    points = nodes[..., :-1, None, :] + t[:, None] * deltas[..., :, None, :]
    generator = -np.einsum("...kij,...j->...ki", gamma_field.at(points), deltas[..., :, None, :])
    h = 1.0 / substeps
    a = np.array(columns, dtype=float)
    for seg in range(deltas.shape[-2]):
        table = generator[..., seg, :, :, :]
        for step in range(substeps):
            A0 = table[..., 2 * step, :, :]
            Am = table[..., 2 * step + 1, :, :]
            A1 = table[..., 2 * step + 2, :, :]
            k1 = A0 @ a
            k2 = Am @ (a + 0.5 * h * k1)
            k3 = Am @ (a + 0.5 * h * k2)
            k4 = A1 @ (a + h * k3)
            a = a + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return a


def transport_columns(gamma_field: ChristoffelField, curve: CurveSample, columns, substeps: Optional[int] = None,
                      tol: float = 1e-10, max_substeps: int = 256) -> np.ndarray:
    """P^gamma applied to each column of an (n, c) table based at gamma(1)"""
    columns = np.asarray(columns, dtype=float)
    if gamma_field.source.flat:
        return columns.copy()
    gamma_field.source.check(curve.nodes)
    nodes = curve.nodes[::-1]
    if substeps is not None:
        return _transport(gamma_field, nodes, columns, substeps)
    scale = 1.0 + float(np.max(np.abs(columns), initial=0.0))
    steps = 1
    previous = _transport(gamma_field, nodes, columns, steps)
    while steps < max_substeps:
        steps *= 2
        current = _transport(gamma_field, nodes, columns, steps)
        if np.max(np.abs(current - previous), initial=0.0) < tol * scale:
            return current
        previous = current
    logger.warning("parallel transport step control stopped at %d substeps", steps)
    return previous


def parallel_transport(gamma_field: ChristoffelField, curve: CurveSample, v: TangentAt,
                       substeps: Optional[int] = None, tol: float = 1e-10) -> TangentAt:
    """Transport v from gamma(1) back to gamma(0)"""
    if not np.allclose(v.base, curve.end, rtol=0.0, atol=1e-12):
        raise MetricError(f"vector is based at {v.base}, but the curve ends at {curve.end}")
    moved = transport_columns(gamma_field, curve, v.vec[:, None], substeps, tol)
    return TangentAt(curve.start, moved[:, 0])


# ---------------------------------------------------------------- Sasaki distances


def _candidate_curves(field: MetricField, q1, q2, max_nodes: int) -> List[CurveSample]:
    curves = [CurveSample.segment(q1, q2, STRAIGHT_CANDIDATE_NODES)]
    if not field.flat:
        curves.extend(geodesic_family(field, q1, q2, max_nodes))
    return curves


def _best_candidate(values: List[float]) -> float:
    best = min(values)
    if len(values) > 1:
        gap = sorted(values)[1] - best
        logger.debug("Sasaki candidates: %d curves, best %.6g, gap to runner-up %.3g", len(values), best, gap)
    return best


def sasaki_distance_vectors(field: MetricField, gamma_field: ChristoffelField, e1: TangentAt, e2: TangentAt,
                            max_nodes: int = DEFAULT_GEODESIC_NODES) -> float:
    """Upper bound of d_sigma(e1, e2) over the straight segment and the geodesic descent path"""
    q1, q2 = field.check(e1.base), field.check(e2.base)
    if np.array_equal(q1, q2):
        return float(field.norm(q1, e1.vec - e2.vec))
    values = []
    for curve in _candidate_curves(field, q1, q2, max_nodes):
        moved = transport_columns(gamma_field, curve, e2.vec[:, None])[:, 0]
        gap = float(field.norm(q1, e1.vec - moved))
        values.append(float(np.hypot(gap, curve_length(field, curve))))
    return _best_candidate(values)


def sasaki_distance_maps(field: MetricField, gamma_field: ChristoffelField, q1, L1: LinearMapSample, q2,
                         L2: LinearMapSample, max_nodes: int = DEFAULT_GEODESIC_NODES) -> float:
    """Upper bound of d_sigma(L1, L2) for maps sharing a source point, L2 transported columnwise"""
    if not L1.src_metric.same_as(L2.src_metric):
        raise MetricError("linear maps must share the source metric of a common base point")
    q1, q2 = field.check(q1), field.check(q2)
    g = L1.src_metric.entries
    H1 = field.metric(q1)
    if np.array_equal(q1, q2):
        return float(map_norms(L1.coefficients - L2.coefficients, g, H1))
    values = []
    for curve in _candidate_curves(field, q1, q2, max_nodes):
        moved = transport_columns(gamma_field, curve, L2.coefficients)
        gap = float(map_norms(L1.coefficients - moved, g, H1))
        values.append(float(np.hypot(gap, curve_length(field, curve))))
    return _best_candidate(values)


def segment_sasaki_bound(field: MetricField, gamma_field: ChristoffelField, q1, L1, q2, L2, g,
                         count: int = 9, substeps: int = 2) -> np.ndarray:
    """Batched d_sigma upper bound along straight coordinate segments

    q1, q2 have shape (..., n); L1, L2 (..., n, d); g (..., d, d).
    """
    q1, q2 = field.check(q1), field.check(q2)
    L1, L2 = np.asarray(L1, dtype=float), np.asarray(L2, dtype=float)
    t = np.linspace(0.0, 1.0, count)[:, None]
    nodes = q1[..., None, :] + t * (q2 - q1)[..., None, :]
    if field.flat:
        moved = L2
    else:
        # nodes traversed from q2 back to q1
        moved = _transport(gamma_field, nodes[..., ::-1, :], L2, substeps)
    gap = map_norms(L1 - moved, g, field.metric(q1))
    return np.hypot(gap, _polyline_length(field, nodes))


class CoordinateRatio(NamedTuple):
    lhs: np.ndarray
    rhs: np.ndarray
    ratio: float


def sasaki_coordinate_ratio(chart: Chart, q1, L1, q2, L2, g) -> CoordinateRatio:
    """d_sigma(L1, L2) against |Dphi(q1) L1 - Dphi(q2) L2| + d_h(q1, q2)(1 + |L2|)"""
    field = chart.field
    gamma = ChristoffelField(field)
    q1, q2 = np.asarray(q1, dtype=float), np.asarray(q2, dtype=float)
    lhs = segment_sasaki_bound(field, gamma, q1, L1, q2, L2, g)
    pushed = chart.differential(q1) @ L1 - chart.differential(q2) @ L2
    distance = pointwise_distance(field, q1, q2)
    rhs = map_norms(pushed, g, None) + distance * (1.0 + map_norms(L2, g, field.metric(q2)))
    positive = rhs > 0.0
    ratio = float(np.max(lhs[positive] / rhs[positive])) if np.any(positive) else 0.0
    return CoordinateRatio(lhs, rhs, ratio)
