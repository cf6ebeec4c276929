"""
ShellRig Immersions Module

Discrete codimension-1 immersions sampled on a cube grid: differentials,
oriented unit normals, shape operators, elastic energies and the Poincare
check on cubes.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from shellrig.errors import MetricError
from shellrig.metric_core import isometry_distance, map_norms, whitened_singular_values
from shellrig.target_space import ChristoffelField, MetricField, connector, flat
from shellrig.transport import pointwise_distance, segment_sasaki_bound

logger = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-8


def _check_exponent(p: float):
    if not p > 1.0:
        raise ValueError(f"exponent p must lie in (1, inf), got {p}")


def grid_gradient(values: np.ndarray, domain: "GridDomain") -> np.ndarray:
    """result[..., k, a] = d_a values_k, second order up to the boundary"""
    return np.stack(
        [np.gradient(values, domain.spacing, axis=a, edge_order=2) for a in range(domain.d)], axis=-1
    )


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Cube origin + [0, side]^d sampled with m_per_side nodes per axis, carrying the source metric g"""

    d: int
    side: float = 1.0
    m_per_side: int = 17
    origin: Optional[Tuple[float, ...]] = None
    metric: Optional[MetricField] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"source dimension must be 1, 2 or 3, got {self.d}")
        if self.m_per_side < 3:
            raise ValueError("second-order stencils need at least 3 nodes per side")
        if self.side <= 0:
            raise ValueError("cube side must be positive")
        origin = np.zeros(self.d) if self.origin is None else np.asarray(self.origin, dtype=float)
        if origin.shape != (self.d,):
            raise ValueError(f"origin must have {self.d} coordinates")
        object.__setattr__(self, "origin", tuple(float(x) for x in origin))
        metric = flat(self.d) if self.metric is None else self.metric
        if metric.dim != self.d:
            raise MetricError(f"source metric has dimension {metric.dim}, domain has {self.d}")
        object.__setattr__(self, "metric", metric)
        eigenvalues = np.linalg.eigvalsh(self.metric_tables)
        measured = float(max(eigenvalues.max(), 1.0 / eigenvalues.min()))
        if self.lam is None:
            object.__setattr__(self, "lam", measured)
        elif measured > self.lam * (1.0 + 1e-12):
            raise MetricError(f"source metric needs comparability {measured:.6g}, declared {self.lam:.6g}")

    @property
    def spacing(self) -> float:
        return self.side / (self.m_per_side - 1)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.m_per_side,) * self.d

    @cached_property
    def axes(self):
        return [o + np.linspace(0.0, self.side, self.m_per_side) for o in self.origin]

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Tensor-product trapezoid weights for dx"""
        line = np.full(self.m_per_side, self.spacing)
        line[[0, -1]] *= 0.5
        out = line
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, line)
        return out

    @cached_property
    def metric_tables(self) -> np.ndarray:
        return self.metric.metric(self.nodes)

    @cached_property
    def dvol(self) -> np.ndarray:
        """Trapezoid weights for dvol_g = sqrt(det G) dx"""
        return self.weights * np.sqrt(np.linalg.det(self.metric_tables))

    @property
    def volume(self) -> float:
        return self.side**self.d

    @property
    def diameter(self) -> float:
        return self.side * np.sqrt(self.d)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.origin) + 0.5 * self.side

    def integrate(self, density, volume_form: bool = True) -> float:
        weights = self.dvol if volume_form else self.weights
        return float(np.sum(weights * density))

    def center_index(self) -> Tuple[int, ...]:
        return (self.m_per_side // 2,) * self.d

    def subcube_slices(self, index, m: int) -> Tuple[slice, ...]:
        if m < 1 or (self.m_per_side - 1) % m != 0:
            raise ValueError(f"{m} subcubes per side do not divide a grid of {self.m_per_side} nodes")
        step = (self.m_per_side - 1) // m
        if len(index) != self.d or any(not 0 <= i < m for i in index):
            raise ValueError(f"subcube index {tuple(index)} out of range for {m} per side")
        return tuple(slice(i * step, (i + 1) * step + 1) for i in index)

    def subcube(self, index, m: int) -> "GridDomain":
        self.subcube_slices(index, m)
        origin = tuple(o + i * self.side / m for o, i in zip(self.origin, index))
        return GridDomain(self.d, self.side / m, (self.m_per_side - 1) // m + 1, origin, self.metric, self.lam)

    def same_grid(self, other: "GridDomain") -> bool:
        return (
            self.d == other.d
            and self.m_per_side == other.m_per_side
            and np.isclose(self.side, other.side)
            and np.allclose(self.origin, other.origin)
        )


@dataclass(frozen=True)
class ShapeField:
    """Per-node d x d tables; ``mask`` marks nodes that carry a value"""

    tables: np.ndarray
    mask: np.ndarray
    residual: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class DiscreteImmersion:
    domain: GridDomain
    target: MetricField
    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = self.domain.shape + (self.domain.d + 1,)
        if self.target.dim != self.domain.d + 1:
            raise MetricError(f"target dimension {self.target.dim} is not d + 1 = {self.domain.d + 1}")
        if values.shape != expected:
            raise MetricError(f"immersion values have shape {values.shape}, grid requires {expected}")
        self.target.check(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.domain.d

    def _grad(self, field_values: np.ndarray) -> np.ndarray:
        return grid_gradient(field_values, self.domain)

    @cached_property
    def du(self) -> np.ndarray:
        return self._grad(self.values)

    @cached_property
    def target_tables(self) -> np.ndarray:
        return self.target.metric(self.values)

    @cached_property
    def singular_values(self) -> np.ndarray:
        return whitened_singular_values(self.du, self.domain.metric_tables, self.target_tables)

    @cached_property
    def regular(self) -> np.ndarray:
        return self.singular_values[..., -1] >= DEGENERATE_TOL

    @cached_property
    def normal(self) -> np.ndarray:
        """Oriented h-unit normal; zero on degenerate nodes"""
        du = self.du
        n = self.d + 1
        cofactor = np.empty(du.shape[:-1])
        for k in range(n):
            column = np.broadcast_to(np.eye(n)[:, k : k + 1], du.shape[:-1] + (1,))
            cofactor[..., k] = np.linalg.det(np.concatenate([du, column], axis=-1))
        # H^-1 c is h-orthogonal to every column of du and positively oriented
        raw = np.linalg.solve(self.target_tables, cofactor[..., None])[..., 0]
        size = np.sqrt(np.einsum("...i,...i->...", raw, cofactor))
        regular = self.regular
        safe = np.where(regular, size, 1.0)
        return np.where(regular[..., None], raw / safe[..., None], 0.0)

    @cached_property
    def valid(self) -> np.ndarray:
        """Nodes whose difference stencil only touches regular nodes"""
        structure = ndimage.iterate_structure(ndimage.generate_binary_structure(self.d, 1), 2)
        return ndimage.binary_erosion(self.regular, structure=structure, border_value=1)

    @cached_property
    def normal_derivative(self) -> np.ndarray:
        """K(d nu) per node with shape (..., d+1, d)"""
        gamma = ChristoffelField(self.target)
        return connector(gamma, self.values, self.normal, self.du, self._grad(self.normal))

    @cached_property
    def shape(self) -> ShapeField:
        du, K, H = self.du, self.normal_derivative, self.target_tables
        mask = self.valid & self.regular
        tables = np.full(du.shape[:-2] + (self.d, self.d), np.nan)
        residual = np.full(du.shape[:-2], np.nan)
        if mask.any():
            dut_h = np.swapaxes(du[mask], -1, -2) @ H[mask]
            solved = np.linalg.solve(dut_h @ du[mask], dut_h @ K[mask])
            tables[mask] = solved
            residual[mask] = map_norms(du[mask] @ solved - K[mask], self.domain.metric_tables[mask], H[mask])
        return ShapeField(tables, mask, residual)

    def restrict(self, index, m: int) -> "DiscreteImmersion":
        slices = self.domain.subcube_slices(index, m)
        return DiscreteImmersion(self.domain.subcube(index, m), self.target, self.values[slices + (slice(None),)],
                                 self.label, dict(self.meta))


# ---------------------------------------------------------------- operations


def differential(u: DiscreteImmersion) -> np.ndarray:
    return u.du


def unit_normal(u: DiscreteImmersion) -> np.ndarray:
    return u.normal


def covariant_normal_derivative(u: DiscreteImmersion) -> np.ndarray:
    return u.normal_derivative


def induced_shape_operator(u: DiscreteImmersion) -> ShapeField:
    return u.shape


BTensor = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def reference_shape_operator(domain: GridDomain, b: BTensor) -> ShapeField:
    """S = G^-1 B, the operator with (S v, w)_g = b(v, w)"""
    tables = b(domain.nodes) if callable(b) else np.asarray(b, dtype=float)
    tables = np.broadcast_to(tables, domain.shape + (domain.d, domain.d))
    if not np.allclose(tables, np.swapaxes(tables, -1, -2), rtol=0.0, atol=1e-12):
        raise MetricError("second fundamental form b must be symmetric")
    S = np.linalg.solve(domain.metric_tables, tables)
    return ShapeField(S, np.ones(domain.shape, dtype=bool))


def stretching_density(u: DiscreteImmersion) -> np.ndarray:
    """dist_{g,h}(du, Ort) per node; sqrt(d) on degenerate nodes"""
    distance = isometry_distance(u.du, u.domain.metric_tables, u.target_tables)
    return np.where(u.regular, distance, np.sqrt(u.d))


def stretching_energy(u: DiscreteImmersion, p: float) -> float:
    _check_exponent(p)
    return u.domain.integrate(stretching_density(u) ** p)


def _excluded(mask: np.ndarray, energy: str):
    skipped = int(mask.size - np.count_nonzero(mask))
    if skipped:
        logger.warning("%s: %d of %d nodes excluded (degenerate stencil)", energy, skipped, mask.size)


def bending_energy(u: DiscreteImmersion, p: float) -> float:
    _check_exponent(p)
    density = map_norms(u.normal_derivative, u.domain.metric_tables, u.target_tables)
    _excluded(u.valid, "bending energy")
    return u.domain.integrate(np.where(u.valid, density, 0.0) ** p)


def shape_residual_density(u: DiscreteImmersion, S: ShapeField) -> np.ndarray:
    """|S_u - S|_g per node, nan where S_u is undefined"""
    G = u.domain.metric_tables
    mask = u.shape.mask & S.mask
    out = np.full(mask.shape, np.nan)
    out[mask] = map_norms(u.shape.tables[mask] - S.tables[mask], G[mask], G[mask])
    return out


def modified_bending(u: DiscreteImmersion, S: ShapeField, p: float) -> float:
    """E_b^S = int |du (S_u - S)|^p dvol_g over nodes where S_u is defined"""
    _check_exponent(p)
    mask = u.shape.mask & S.mask
    _excluded(mask, "modified bending energy")
    density = np.zeros(mask.shape)
    diff = u.shape.tables[mask] - S.tables[mask]
    density[mask] = map_norms(u.du[mask] @ diff, u.domain.metric_tables[mask], u.target_tables[mask])
    return u.domain.integrate(density**p)


def _same_grid(u1: DiscreteImmersion, u2: DiscreteImmersion):
    if not u1.domain.same_grid(u2.domain) or u1.target is not u2.target and u1.target.name != u2.target.name:
        raise MetricError("immersions live on mismatched grids or targets")


def lp_distance(u1: DiscreteImmersion, u2: DiscreteImmersion, p: float) -> float:
    _check_exponent(p)
    _same_grid(u1, u2)
    distance = pointwise_distance(u1.target, u1.values, u2.values)
    return u1.domain.integrate(distance**p) ** (1.0 / p)


def w1p_distance(u1: DiscreteImmersion, u2: DiscreteImmersion, p: float) -> float:
    """Upper bound of d_{sigma,p}(du1, du2) from straight-segment Sasaki bounds"""
    _check_exponent(p)
    _same_grid(u1, u2)
    gamma = ChristoffelField(u1.target)
    bound = segment_sasaki_bound(u1.target, gamma, u1.values, u1.du, u2.values, u2.du, u1.domain.metric_tables)
    return u1.domain.integrate(bound**p) ** (1.0 / p)


class PoincareCheck(NamedTuple):
    lhs: float
    rhs: float
    ratio: float


def poincare_check(u: DiscreteImmersion, p: float, max_pairs: int = 20000, seed: int = 0,
                   exact_limit: int = 4_000_000) -> PoincareCheck:
    """int int d_h^p(u(x), u(z)) dx dz against diam^p |Q| int |du|^p dx"""
    _check_exponent(p)
    domain = u.domain
    points = u.values.reshape(-1, u.d + 1)
    weights = domain.weights.reshape(-1)
    count = len(points)
    exact = count * count <= exact_limit and u.target.closed_distance is not None
    if exact:
        if u.target.flat:
            distance = cdist(points, points)
        else:
            distance = pointwise_distance(u.target, points[:, None, :], points[None, :, :])
        lhs = float(weights @ distance**p @ weights)
    else:
        rng = np.random.default_rng(seed)
        probability = weights / weights.sum()
        i = rng.choice(count, size=max_pairs, p=probability)
        j = rng.choice(count, size=max_pairs, p=probability)
        distance = pointwise_distance(u.target, points[i], points[j])
        lhs = float(weights.sum() ** 2 * np.mean(distance**p))
    gradient = map_norms(u.du, domain.metric_tables, u.target_tables)
    rhs = domain.diameter**p * domain.volume * domain.integrate(gradient**p, volume_form=False)
    ratio = lhs / rhs if rhs > 0.0 else 0.0
    return PoincareCheck(lhs, rhs, ratio)


class VolumeComparison(NamedTuple):
    lower: float
    value: float
    upper: float


def volume_comparison(domain: GridDomain, f) -> VolumeComparison:
    """lam^(-d/2) int f dx <= int f dvol_g <= lam^(d/2) int f dx for f >= 0"""
    density = f(domain.nodes) if callable(f) else np.asarray(f, dtype=float)
    if np.any(density < 0.0):
        raise ValueError("volume comparison needs a nonnegative integrand")
    flat_integral = domain.integrate(density, volume_form=False)
    factor = domain.lam ** (domain.d / 2.0)
    return VolumeComparison(flat_integral / factor, domain.integrate(density), flat_integral * factor)
