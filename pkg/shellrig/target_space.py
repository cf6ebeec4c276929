"""
ShellRig Target Space Module

The target manifold is one coordinate patch carrying a metric field. This
module computes Christoffel symbols and the connector, builds affine and
normal-coordinate charts, measures how close a chart is to an isometry and
extends charts by a cutoff profile.
"""

import abc
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Optional

import numpy as np

from shellrig.errors import ChartError, GeodesicError, MetricError, PatchError
from shellrig.metric_core import ConstMetric, LinearMapSample, isometry_distance, sym_sqrt

logger = logging.getLogger(__name__)

TableFn = Callable[[np.ndarray], np.ndarray]


def _everywhere(y: np.ndarray) -> np.ndarray:
    return np.ones(np.shape(y)[:-1], dtype=bool)


@dataclass(frozen=True, eq=False)
class MetricField:
    """Metric coefficients h(y) on a coordinate patch

    ``tables`` maps points of shape (..., dim) to coefficient tables of shape
    (..., dim, dim) and must accept any number of leading axes. The same holds
    for the optional closed forms.
    """

    name: str
    dim: int
    tables: TableFn
    inside: Callable[[np.ndarray], np.ndarray] = _everywhere
    patch: str = "all coordinates"
    deriv_step: float = 1e-4
    closed_christoffel: Optional[TableFn] = None
    closed_distance: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    flat: bool = False
    params: dict = field(default_factory=dict)

    def check(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1:] != (self.dim,):
            raise MetricError(f"{self.name}: expected points of dimension {self.dim}, got shape {y.shape}")
        inside = np.asarray(self.inside(y)) & np.all(np.isfinite(y), axis=-1)
        if not np.all(inside):
            bad = y.reshape(-1, self.dim)[~inside.reshape(-1)][0]
            raise PatchError(
                f"point {np.array2string(bad, precision=6)} lies outside the patch of {self.name} ({self.patch})"
            )
        return y

    def metric(self, y) -> np.ndarray:
        return self.tables(self.check(y))

    def const_metric(self, y) -> ConstMetric:
        table = self.metric(y)
        return ConstMetric(0.5 * (table + table.T))

    def metric_derivatives(self, y, step: Optional[float] = None) -> np.ndarray:
        """Central differences: result[..., l, i, j] = d_l h_ij"""
        y = self.check(y)
        step = self.deriv_step if step is None else step
        shift = step * np.eye(self.dim)
        upper = self.tables(y[..., None, :] + shift)
        lower = self.tables(y[..., None, :] - shift)
        return (upper - lower) / (2.0 * step)

    def norm(self, y, v) -> np.ndarray:
        table = self.metric(y)
        return np.sqrt(np.einsum("...i,...ij,...j->...", v, table, v))


# Christoffel symbols are stored as gamma[..., k, i, j] = Gamma^k_ij


def christoffel_fd(field: MetricField, y, step: Optional[float] = None) -> np.ndarray:
    y = field.check(y)
    derivs = field.metric_derivatives(y, step)
    combo = derivs + np.swapaxes(derivs, -3, -2) - np.moveaxis(derivs, -3, -1)
    inverse = np.linalg.inv(field.tables(y))
    return 0.5 * np.einsum("...kl,...ijl->...kij", inverse, combo)


def christoffel(field: MetricField, y, use_closed_form: bool = True) -> np.ndarray:
    """Levi-Civita symbols at y (closed form for catalog metrics)"""
    y = field.check(y)
    if use_closed_form and field.closed_christoffel is not None:
        return field.closed_christoffel(y)
    return christoffel_fd(field, y)


@dataclass(frozen=True, eq=False)
class ChristoffelField:
    source: MetricField
    use_closed_form: bool = True

    def at(self, y) -> np.ndarray:
        return christoffel(self.source, y, self.use_closed_form)


def connector(gamma_field: ChristoffelField, y, w, Y, W) -> np.ndarray:
    """K(y, w, Y, W)_k = W_k + sum_ij w_j Y_i Gamma^k_ij(y)

    ``Y`` and ``W`` are either vectors like ``w`` or stacks of columns with
    one column per source direction.
    """
    gamma = gamma_field.at(y)
    w = np.asarray(w, dtype=float)
    Y = np.asarray(Y, dtype=float)
    contracted = np.einsum("...kij,...j->...ki", gamma, w)
    if Y.shape == w.shape:
        return np.asarray(W, dtype=float) + np.einsum("...ki,...i->...k", contracted, Y)
    return np.asarray(W, dtype=float) + contracted @ Y


# ---------------------------------------------------------------- catalog


def _zero_christoffel(dim: int) -> TableFn:
    def gamma(y):
        return np.zeros(np.shape(y)[:-1] + (dim, dim, dim))

    return gamma


def _constant_tables(table: np.ndarray) -> TableFn:
    def tables(y):
        return np.broadcast_to(table, np.shape(y)[:-1] + table.shape).copy()

    return tables


def _conformal_christoffel(df: np.ndarray) -> np.ndarray:
    """Symbols of exp(2f)*I from the gradient of f"""
    eye = np.eye(df.shape[-1])
    return (
        np.einsum("ki,...j->...kij", eye, df)
        + np.einsum("kj,...i->...kij", eye, df)
        - np.einsum("ij,...k->...kij", eye, df)
    )


def _ball(radius: float, center=None):
    def inside(y):
        offset = y if center is None else y - center
        return np.linalg.norm(offset, axis=-1) < radius

    return inside


def flat(dim: int) -> MetricField:
    def distance(a, b):
        return np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)

    return MetricField(
        name="flat",
        dim=dim,
        tables=_constant_tables(np.eye(dim)),
        closed_christoffel=_zero_christoffel(dim),
        closed_distance=distance,
        flat=True,
    )


def constant(dim: int, entries) -> MetricField:
    table = ConstMetric(entries).entries
    if table.shape[0] != dim:
        raise MetricError(f"constant metric table has dimension {table.shape[0]}, expected {dim}")

    def distance(a, b):
        delta = np.asarray(a) - np.asarray(b)
        return np.sqrt(np.einsum("...i,ij,...j->...", delta, table, delta))

    return MetricField(
        name="constant",
        dim=dim,
        tables=_constant_tables(np.array(table)),
        closed_christoffel=_zero_christoffel(dim),
        closed_distance=distance,
        flat=bool(np.array_equal(table, np.eye(dim))),
        params={"entries": table.tolist()},
    )


def inverse_stereographic(y, radius: float = 1.0) -> np.ndarray:
    """Point of the sphere of the given radius in R^(n+1), projected from the north pole"""
    y = np.asarray(y, dtype=float)
    rho2 = radius**2
    s = np.sum(y**2, axis=-1)[..., None]
    return np.concatenate([2.0 * rho2 * y, radius * (s - rho2)], axis=-1) / (s + rho2)


def stereographic(X, radius: float = 1.0) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return radius * X[..., :-1] / (radius - X[..., -1:])


def _sphere_chord_distance(Xa, Xb, radius):
    chord = np.linalg.norm(Xa - Xb, axis=-1)
    return 2.0 * radius * np.arcsin(np.clip(chord / (2.0 * radius), 0.0, 1.0))


def sphere_stereographic(dim: int, radius: float = 1.0, patch_radius: Optional[float] = None) -> MetricField:
    rho2 = radius**2
    patch_radius = 10.0 * radius if patch_radius is None else patch_radius

    def tables(y):
        factor = 4.0 * rho2**2 / (rho2 + np.sum(y**2, axis=-1)) ** 2
        return factor[..., None, None] * np.eye(dim)

    def gamma(y):
        df = -2.0 * y / (rho2 + np.sum(y**2, axis=-1))[..., None]
        return _conformal_christoffel(df)

    def distance(a, b):
        return _sphere_chord_distance(inverse_stereographic(a, radius), inverse_stereographic(b, radius), radius)

    return MetricField(
        name="sphere-stereographic",
        dim=dim,
        tables=tables,
        inside=_ball(patch_radius),
        patch=f"|y| < {patch_radius:g}",
        deriv_step=1e-4 * radius,
        closed_christoffel=gamma,
        closed_distance=distance,
        params={"radius": radius, "patch_radius": patch_radius},
    )


def polar_to_cartesian(y, radius: float = 1.0) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    phi, lam = y[..., 0], y[..., 1]
    return radius * np.stack([np.sin(phi) * np.cos(lam), np.sin(phi) * np.sin(lam), np.cos(phi)], axis=-1)


def sphere_polar(dim: int = 2, radius: float = 1.0, polar_margin: float = 0.05) -> MetricField:
    """2-sphere in (polar angle, longitude) coordinates, h = radius^2 diag(1, sin^2)"""
    if dim != 2:
        raise MetricError(f"the polar sphere chart is two-dimensional, got dim={dim}")

    def tables(y):
        out = np.zeros(np.shape(y)[:-1] + (2, 2))
        out[..., 0, 0] = radius**2
        out[..., 1, 1] = (radius * np.sin(y[..., 0])) ** 2
        return out

    def gamma(y):
        sin, cos = np.sin(y[..., 0]), np.cos(y[..., 0])
        out = np.zeros(np.shape(y)[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -sin * cos
        out[..., 1, 0, 1] = cos / sin
        out[..., 1, 1, 0] = cos / sin
        return out

    def inside(y):
        return (y[..., 0] > polar_margin) & (y[..., 0] < np.pi - polar_margin)

    def distance(a, b):
        return _sphere_chord_distance(polar_to_cartesian(a, radius), polar_to_cartesian(b, radius), radius)

    return MetricField(
        name="sphere-polar",
        dim=2,
        tables=tables,
        inside=inside,
        patch=f"{polar_margin:g} < polar angle < pi - {polar_margin:g}",
        deriv_step=1e-4,
        closed_christoffel=gamma,
        closed_distance=distance,
        params={"radius": radius, "polar_margin": polar_margin},
    )


def warped_product(dim: int, rate: float = 1.0, patch_radius: float = 10.0) -> MetricField:
    """dt^2 + exp(2 rate t)|dx|^2, hyperbolic space of curvature -rate^2"""
    if rate <= 0:
        raise MetricError("warped product rate must be positive")

    def tables(y):
        out = np.zeros(np.shape(y)[:-1] + (dim, dim))
        out[..., 0, 0] = 1.0
        stretch = np.exp(2.0 * rate * y[..., 0])
        for i in range(1, dim):
            out[..., i, i] = stretch
        return out

    def gamma(y):
        out = np.zeros(np.shape(y)[:-1] + (dim, dim, dim))
        stretch = np.exp(2.0 * rate * y[..., 0])
        for i in range(1, dim):
            out[..., 0, i, i] = -rate * stretch
            out[..., i, 0, i] = rate
            out[..., i, i, 0] = rate
        return out

    def distance(a, b):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        za, zb = np.exp(-rate * a[..., 0]) / rate, np.exp(-rate * b[..., 0]) / rate
        spread = np.sum((a[..., 1:] - b[..., 1:]) ** 2, axis=-1) + (za - zb) ** 2
        return 2.0 * np.arcsinh(np.sqrt(spread) / (2.0 * np.sqrt(za * zb))) / rate

    return MetricField(
        name="warped-product",
        dim=dim,
        tables=tables,
        inside=_ball(patch_radius),
        patch=f"|y| < {patch_radius:g}",
        closed_christoffel=gamma,
        closed_distance=distance,
        params={"rate": rate, "patch_radius": patch_radius},
    )


def conformal_wave(dim: int, amplitude: float = 0.1, patch_radius: float = 50.0) -> MetricField:
    """exp(2a sum sin y_i) I; no closed-form distance"""

    def tables(y):
        factor = np.exp(2.0 * amplitude * np.sum(np.sin(y), axis=-1))
        return factor[..., None, None] * np.eye(dim)

    def gamma(y):
        return _conformal_christoffel(amplitude * np.cos(y))

    return MetricField(
        name="conformal-wave",
        dim=dim,
        tables=tables,
        inside=_ball(patch_radius),
        patch=f"|y| < {patch_radius:g}",
        closed_christoffel=gamma,
        params={"amplitude": amplitude, "patch_radius": patch_radius},
    )


METRIC_CATALOG = {
    "flat": flat,
    "constant": constant,
    "sphere-stereographic": sphere_stereographic,
    "sphere-polar": sphere_polar,
    "warped-product": warped_product,
    "conformal-wave": conformal_wave,
}


def catalog_metric(name: str, dim: int, **params) -> MetricField:
    try:
        builder = METRIC_CATALOG[name]
    except KeyError:
        raise MetricError(f"unknown metric {name!r}; known metrics: {', '.join(sorted(METRIC_CATALOG))}") from None
    return builder(dim, **params)


# ---------------------------------------------------------------- geodesics


def shoot_geodesics(gamma_field: ChristoffelField, start, velocities, steps: int):
    """RK4 for x'' = -Gamma(x)[x', x'] on [0, 1]; batched over leading axes of velocities"""
    velocities = np.asarray(velocities, dtype=float)
    x = np.broadcast_to(np.asarray(start, dtype=float), velocities.shape).copy()
    v = velocities.copy()
    h = 1.0 / steps

    def acceleration(x, v):
        return -np.einsum("...kij,...i,...j->...k", gamma_field.at(x), v, v)

    for _ in range(steps):
        a1 = acceleration(x, v)
        x2, v2 = x + 0.5 * h * v, v + 0.5 * h * a1
        a2 = acceleration(x2, v2)
        x3, v3 = x + 0.5 * h * v2, v + 0.5 * h * a2
        a3 = acceleration(x3, v3)
        x4, v4 = x + h * v3, v + h * a3
        a4 = acceleration(x4, v4)
        x = x + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
        v = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return x, v


def geodesic_steps(gamma_field: ChristoffelField, start, velocities, tol: float = 1e-8,
                   initial: int = 8, max_steps: int = 4096) -> int:
    """Smallest power-of-two step count whose halving moves endpoints by less than tol"""
    steps = initial
    previous, _ = shoot_geodesics(gamma_field, start, velocities, steps)
    while steps < max_steps:
        steps *= 2
        current, _ = shoot_geodesics(gamma_field, start, velocities, steps)
        if np.max(np.abs(current - previous)) < tol:
            return steps
        previous = current
    raise GeodesicError(f"geodesic step control did not reach {tol:g} with {max_steps} steps")


# ---------------------------------------------------------------- charts


class Chart(abc.ABC):
    """Chart (U, phi) on a metric patch, U = phi^-1(B(0, radius)), phi(center) = 0"""

    def __init__(self, field: MetricField, center, radius: float):
        self.field = field
        self.center = np.array(field.check(center), dtype=float)
        self.radius = float(radius)

    @property
    def dim(self) -> int:
        return self.field.dim

    @abc.abstractmethod
    def forward(self, q) -> np.ndarray:
        """phi(q)"""

    @abc.abstractmethod
    def inverse(self, y) -> np.ndarray:
        """phi^-1(y)"""

    @abc.abstractmethod
    def inverse_differential(self, y) -> np.ndarray:
        """D(phi^-1)(y) with shape (..., n, n)"""

    def differential(self, q) -> np.ndarray:
        return np.linalg.inv(self.inverse_differential(self.forward(q)))

    def differential_map(self, q) -> LinearMapSample:
        return LinearMapSample(self.differential(q), self.field.const_metric(q), ConstMetric.euclidean(self.dim))

    def _candidates(self, q) -> np.ndarray:
        return np.asarray(self.field.inside(q))

    def contains(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        shape = q.shape[:-1]
        points = q.reshape(-1, self.dim)
        mask = np.array(self._candidates(points), dtype=bool).reshape(-1)
        if mask.any():
            y = self.forward(points[mask])
            mask[mask] = np.linalg.norm(y, axis=-1) < self.radius
        return mask.reshape(shape)

    @abc.abstractmethod
    def _pushforward(self) -> MetricField:
        """Metric field of phi_* h on B(0, radius)"""

    @cached_property
    def pushforward_metric(self) -> MetricField:
        return self._pushforward()


class AffineChart(Chart):
    """phi^-1(y) = center + frame y"""

    def __init__(self, field: MetricField, center, radius: float, frame):
        super().__init__(field, center, radius)
        self.frame = np.array(frame, dtype=float)
        self.frame_inv = np.linalg.inv(self.frame)

    def forward(self, q):
        return (np.asarray(q, dtype=float) - self.center) @ self.frame_inv.T

    def inverse(self, y):
        return self.center + np.asarray(y, dtype=float) @ self.frame.T

    def inverse_differential(self, y):
        return np.broadcast_to(self.frame, np.shape(y)[:-1] + self.frame.shape).copy()

    def differential(self, q):
        return np.broadcast_to(self.frame_inv, np.shape(q)[:-1] + self.frame.shape).copy()

    def _pushforward(self) -> MetricField:
        base, frame, frame_inv, radius = self.field, self.frame, self.frame_inv, self.radius

        def tables(y):
            return frame.T @ base.tables(self.inverse(y)) @ frame

        def inside(y):
            return (np.linalg.norm(y, axis=-1) < radius) & base.inside(self.inverse(y))

        gamma = None
        if base.closed_christoffel is not None:
            def gamma(y):
                return np.einsum("ka,...abc,bi,cj->...kij", frame_inv, base.closed_christoffel(self.inverse(y)),
                                 frame, frame)

        distance = None
        if base.closed_distance is not None:
            def distance(a, b):
                return base.closed_distance(self.inverse(a), self.inverse(b))

        scale = float(np.linalg.norm(frame_inv, 2))
        return MetricField(
            name=f"{base.name}@affine",
            dim=base.dim,
            tables=tables,
            inside=inside,
            patch=f"|y| < {radius:g}",
            deriv_step=base.deriv_step * scale,
            closed_christoffel=gamma,
            closed_distance=distance,
            flat=base.flat and bool(np.allclose(frame.T @ frame, np.eye(base.dim), atol=0, rtol=1e-15)),
        )


def affine_chart(field: MetricField, q, radius: float = np.inf, orthonormal: bool = True) -> AffineChart:
    """Chart y = h(q)^(1/2)(x - q), or a plain translation when not orthonormal"""
    q = field.check(q)
    frame = sym_sqrt(field.metric(q), inverse=True) if orthonormal else np.eye(field.dim)
    return AffineChart(field, q, radius, frame)


class NormalChart(Chart):
    """Normal coordinates: phi^-1 = exp_q along an h-orthonormal frame at q"""

    newton_iterations = 30

    def __init__(self, field: MetricField, center, radius: float, steps: int):
        super().__init__(field, center, radius)
        self.frame = sym_sqrt(field.metric(self.center), inverse=True)
        self.frame_inv = np.linalg.inv(self.frame)
        self.gamma = ChristoffelField(field)
        self.steps = steps
        self.fd_step = 1e-4 * self.radius

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        points, _ = shoot_geodesics(self.gamma, self.center, y @ self.frame.T, self.steps)
        return points

    def inverse_differential(self, y):
        y = np.asarray(y, dtype=float)
        shift = self.fd_step * np.eye(self.dim)
        upper = self.inverse(y[..., None, :] + shift)
        lower = self.inverse(y[..., None, :] - shift)
        return np.swapaxes((upper - lower) / (2.0 * self.fd_step), -1, -2)

    def forward(self, q):
        q = np.asarray(q, dtype=float)
        y = (q - self.center) @ self.frame_inv.T
        tol = 1e-12 * max(1.0, self.radius)
        for _ in range(self.newton_iterations):
            residual = self.inverse(y) - q
            if np.max(np.abs(residual), initial=0.0) <= tol:
                return y
            y = y - np.linalg.solve(self.inverse_differential(y), residual[..., None])[..., 0]
        raise GeodesicError("inverse of the exponential map did not converge")

    def _candidates(self, q):
        offset = (np.asarray(q) - self.center) @ self.frame_inv.T
        return np.asarray(self.field.inside(q)) & (np.linalg.norm(offset, axis=-1) < 3.0 * self.radius)

    def _pushforward(self) -> MetricField:
        base, radius = self.field, self.radius

        def tables(y):
            jac = self.inverse_differential(y)
            return np.swapaxes(jac, -1, -2) @ base.tables(self.inverse(y)) @ jac

        def inside(y):
            return np.linalg.norm(y, axis=-1) < radius

        return MetricField(
            name=f"{base.name}@normal",
            dim=base.dim,
            tables=tables,
            inside=inside,
            patch=f"|y| < {radius:g}",
            deriv_step=1e-3 * radius,
            flat=base.flat,
        )


def normal_coordinates(field: MetricField, q, radius: float, tol: float = 1e-8) -> NormalChart:
    q = field.check(q)
    gamma = ChristoffelField(field)
    frame = sym_sqrt(field.metric(q), inverse=True)
    steps = 8
    for sign in (1.0, -1.0):
        for axis in range(field.dim):
            direction = sign * radius * np.eye(field.dim)[axis]
            try:
                steps = max(steps, geodesic_steps(gamma, q, frame @ direction, tol))
            except PatchError as exc:
                label = f"{'+' if sign > 0 else '-'}e{axis + 1}"
                raise GeodesicError(f"geodesic from {q} along frame direction {label} leaves the patch") from exc
    logger.debug("normal coordinates at %s use %d RK4 steps", q, steps)
    return NormalChart(field, q, radius, steps)


class EpsilonEstimate(NamedTuple):
    epsilon: float
    metric_deviation: float
    christoffel_max: float


def epsilon_isometric_check(chart: Chart, samples) -> EpsilonEstimate:
    """Smallest eps with (1+eps)^-1 <= phi_*h <= (1+eps) and |Gamma| <= eps on the samples"""
    samples = np.asarray(samples, dtype=float).reshape(-1, chart.dim)
    if samples.shape[0] == 0:
        raise ValueError("epsilon check needs at least one sample point")
    pushed = chart.pushforward_metric
    eigenvalues = np.linalg.eigvalsh(pushed.metric(samples))
    deviation = max(float(eigenvalues.max()) - 1.0, 1.0 / float(eigenvalues.min()) - 1.0, 0.0)
    gamma_max = float(np.abs(christoffel(pushed, samples)).max())
    return EpsilonEstimate(max(deviation, gamma_max), deviation, gamma_max)


# ---------------------------------------------------------------- cutoff


def _bump(t):
    """exp(-1/t) for t > 0 (else 0) and its first two derivatives"""
    t = np.asarray(t, dtype=float)
    positive = t > 0.0
    safe = np.where(positive, t, 1.0)
    value = np.where(positive, np.exp(-1.0 / safe), 0.0)
    first = value / safe**2
    second = value * (1.0 / safe**4 - 2.0 / safe**3)
    return value, first, second


class CutoffBounds(NamedTuple):
    value: float
    jacobian: float
    hessian: float


@dataclass(frozen=True)
class CutoffProfile:
    """theta(y) = psi(|y|) y with psi = 1 on [0, 1], 0 on [2, inf)"""

    dim: int

    @staticmethod
    def radial(s):
        s = np.asarray(s, dtype=float)
        A, A1, A2 = _bump(2.0 - s)
        B, B1, B2 = _bump(s - 1.0)
        # derivatives in s: A' = -A1, A'' = A2, B' = B1, B'' = B2
        total = A + B
        numerator = -A1 * B - A * B1
        psi = A / total
        dpsi = numerator / total**2
        d2psi = (A2 * B - A * B2) / total**2 - 2.0 * numerator * (B1 - A1) / total**3
        return psi, dpsi, d2psi

    def value(self, y):
        y = np.asarray(y, dtype=float)
        psi, _, _ = self.radial(np.linalg.norm(y, axis=-1))
        return psi[..., None] * y

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        s = np.linalg.norm(y, axis=-1)
        psi, dpsi, _ = self.radial(s)
        safe = np.where(s > 0.0, s, 1.0)
        eye = np.eye(y.shape[-1])
        return psi[..., None, None] * eye + (dpsi / safe)[..., None, None] * np.einsum("...i,...j->...ij", y, y)

    def hessian(self, y):
        """result[..., k, a, b] = d_a d_b theta_k"""
        y = np.asarray(y, dtype=float)
        s = np.linalg.norm(y, axis=-1)
        _, dpsi, d2psi = self.radial(s)
        safe = np.where(s > 0.0, s, 1.0)
        eye = np.eye(y.shape[-1])
        yy = np.einsum("...a,...b->...ab", y, y)
        radial_part = (d2psi / safe**2)[..., None, None] * yy - (dpsi / safe**3)[..., None, None] * yy
        radial_part = radial_part + (dpsi / safe)[..., None, None] * eye
        mixed = np.einsum("...a,kb->...kab", y, eye) + np.einsum("...b,ka->...kab", y, eye)
        return np.einsum("...k,...ab->...kab", y, radial_part) + (dpsi / safe)[..., None, None, None] * mixed

    @cached_property
    def bounds(self) -> CutoffBounds:
        s = np.linspace(0.0, 2.5, 5001)
        points = s[:, None] * np.eye(self.dim)[0]
        return CutoffBounds(
            value=float(np.max(np.linalg.norm(self.value(points), axis=-1))),
            jacobian=float(np.max(np.linalg.norm(self.jacobian(points), axis=(-2, -1)))),
            hessian=float(np.max(np.sqrt(np.sum(self.hessian(points) ** 2, axis=(-3, -2, -1))))),
        )


@dataclass(frozen=True, eq=False)
class ExtendedChart:
    """phi^(r) = r theta(phi / r) inside U and 0 outside"""

    base: Chart
    r: float
    profile: CutoffProfile

    @property
    def dim(self) -> int:
        return self.base.dim

    def _coordinates(self, q):
        q = np.asarray(q, dtype=float)
        shape = q.shape[:-1]
        points = q.reshape(-1, self.dim)
        in_u = np.array(self.base.contains(points), dtype=bool).reshape(-1)
        y = np.zeros_like(points)
        if in_u.any():
            y[in_u] = self.base.forward(points[in_u])
        return points, y, in_u, shape

    def value(self, q) -> np.ndarray:
        points, y, in_u, shape = self._coordinates(q)
        out = np.zeros_like(y)
        out[in_u] = self.r * self.profile.value(y[in_u] / self.r)
        return out.reshape(shape + (self.dim,))

    def differential(self, q) -> np.ndarray:
        points, y, in_u, shape = self._coordinates(q)
        out = np.zeros(y.shape + (self.dim,))
        if in_u.any():
            out[in_u] = self.profile.jacobian(y[in_u] / self.r) @ self.base.differential(points[in_u])
        return out.reshape(shape + (self.dim, self.dim))

    def inside(self, q) -> np.ndarray:
        """Mask of points in phi^-1(B(0, r))"""
        _, y, in_u, shape = self._coordinates(q)
        return (in_u & (np.linalg.norm(y, axis=-1) < self.r)).reshape(shape)

    def coordinates(self, q) -> np.ndarray:
        """phi(q) inside U, nan elsewhere"""
        _, y, in_u, shape = self._coordinates(q)
        y[~in_u] = np.nan
        return y.reshape(shape + (self.dim,))


def extend_chart(chart: Chart, profile: CutoffProfile, r: float) -> ExtendedChart:
    if r <= 0:
        raise ChartError(f"extension radius must be positive, got {r}")
    if profile.dim != chart.dim:
        raise ChartError(f"cutoff profile has dimension {profile.dim}, chart has {chart.dim}")
    offset = float(np.linalg.norm(chart.forward(chart.center)))
    if offset > 1e-9:
        raise ChartError(f"chart is not centered: |phi(center)| = {offset:.3g}")
    if 2.0 * r > chart.radius:
        raise ChartError(f"ball B(0, {2.0 * r:g}) is not inside the chart image of radius {chart.radius:g}")
    return ExtendedChart(chart, float(r), profile)


# ---------------------------------------------------------------- measured constants


def connector_constant(chart: Chart, samples, rng: np.random.Generator, trials: int = 16) -> float:
    """max |K_flat(d^2 phi xi)| / (|K(xi)|_h + |w|_h |Y|_h) over random xi at the samples"""
    field = chart.pushforward_metric
    samples = np.asarray(samples, dtype=float).reshape(-1, chart.dim)
    points = np.broadcast_to(samples[:, None, :], (samples.shape[0], trials, chart.dim))
    w, Y, W = rng.standard_normal((3,) + points.shape)
    K = connector(ChristoffelField(field), points, w, Y, W)
    # in chart coordinates d^2 phi is the identity, so the flat connector returns W
    lhs = np.linalg.norm(W, axis=-1)
    rhs = field.norm(points, K) + field.norm(points, w) * field.norm(points, Y)
    return float(np.max(lhs / rhs))


class TransferConstants(NamedTuple):
    distance: float
    normal: float
    epsilon: float


def isometry_transfer_constants(chart: Chart, samples, rng: np.random.Generator, src_dim: int,
                                trials: int = 16, epsilon: Optional[float] = None) -> TransferConstants:
    """Measured constants for moving isometry distances and hyperplane normals through a chart"""
    if epsilon is None:
        epsilon = epsilon_isometric_check(chart, samples).epsilon
    field = chart.pushforward_metric
    samples = np.asarray(samples, dtype=float).reshape(-1, chart.dim)
    points = np.broadcast_to(samples[:, None, :], (samples.shape[0], trials, chart.dim))
    H = field.metric(points)
    root = rng.standard_normal(points.shape[:-1] + (src_dim, src_dim))
    g0 = root @ np.swapaxes(root, -1, -2) + 0.5 * np.eye(src_dim)
    L = rng.standard_normal(points.shape + (src_dim,))
    euclidean = isometry_distance(L, g0, None)
    weighted = isometry_distance(L, g0, H)
    normals = rng.standard_normal(points.shape)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    pushed = np.linalg.solve(H, normals[..., None])[..., 0]
    pushed /= field.norm(points, pushed)[..., None]
    gap = np.linalg.norm(normals - pushed, axis=-1)
    if epsilon <= 0.0:
        return TransferConstants(0.0, 0.0, 0.0)
    excess = (euclidean - np.sqrt(1.0 + epsilon) * weighted) / epsilon
    return TransferConstants(float(max(np.max(excess), 0.0)), float(np.max(gap) / epsilon), float(epsilon))
