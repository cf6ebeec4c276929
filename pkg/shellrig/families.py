"""
ShellRig Families Module

Catalog of immersion generators on a grid domain. Every family has closed-form
first derivatives so tests can compare against the discrete fields.
"""

from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from shellrig.errors import ConfigError
from shellrig.immersions import DiscreteImmersion, GridDomain
from shellrig.target_space import MetricField, constant, flat


class RigidMotion(BaseModel):
    """Rotation by ``angle`` in the coordinate plane ``plane`` followed by ``translation``"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    angle: float = 0.0
    plane: Tuple[int, int] = (0, 1)
    translation: Optional[List[float]] = None

    def matrix(self, n: int) -> np.ndarray:
        i, j = self.plane
        if not (0 <= i < n and 0 <= j < n and i != j):
            raise ConfigError("family.motion.plane", f"invalid rotation plane {self.plane} in dimension {n}")
        out = np.eye(n)
        c, s = np.cos(self.angle), np.sin(self.angle)
        out[i, i], out[i, j], out[j, i], out[j, j] = c, -s, s, c
        return out

    def offset(self, n: int) -> np.ndarray:
        if self.translation is None:
            return np.zeros(n)
        if len(self.translation) != n:
            raise ConfigError("family.motion.translation", f"expected {n} entries, got {len(self.translation)}")
        return np.asarray(self.translation, dtype=float)

    def apply(self, values: np.ndarray) -> np.ndarray:
        n = values.shape[-1]
        return values @ self.matrix(n).T + self.offset(n)

    @property
    def is_identity(self) -> bool:
        return self.angle == 0.0 and not any(self.translation or [])


def _local(domain: GridDomain) -> np.ndarray:
    """Node coordinates relative to the cube origin"""
    return domain.nodes - np.asarray(domain.origin)


def _plane(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)


def _bump_at(x: np.ndarray, side: float, mode: int) -> Tuple[np.ndarray, np.ndarray]:
    """phi = prod sin(pi mode x_a / side) and its gradient, x relative to the cube origin"""
    d = x.shape[-1]
    w = np.pi * mode / side
    sines, cosines = np.sin(w * x), np.cos(w * x)
    phi = np.prod(sines, axis=-1)
    grad = np.empty(x.shape)
    for a in range(d):
        others = np.prod(np.delete(sines, a, axis=-1), axis=-1) if d > 1 else 1.0
        grad[..., a] = w * cosines[..., a] * others
    return phi, grad


def _bump(domain: GridDomain, mode: int) -> Tuple[np.ndarray, np.ndarray]:
    return _bump_at(_local(domain), domain.side, mode)


class _Family(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    motion: RigidMotion = Field(default_factory=RigidMotion)

    def raw_values(self, domain: GridDomain) -> np.ndarray:
        raise NotImplementedError

    def raw_differential(self, domain: GridDomain) -> np.ndarray:
        raise NotImplementedError

    def values(self, domain: GridDomain) -> np.ndarray:
        values = self.raw_values(domain)
        return values if self.motion.is_identity else self.motion.apply(values)

    def differential(self, domain: GridDomain) -> np.ndarray:
        """Closed-form du with shape (..., d+1, d)"""
        du = self.raw_differential(domain)
        return du if self.motion.is_identity else self.motion.matrix(domain.d + 1) @ du

    def limit_shape(self, domain: GridDomain) -> np.ndarray:
        """Shape operator of the family (or of its limit) per node"""
        raise ConfigError("reference.kind", f"family {self.name!r} has no closed-form shape operator")

    def induced_metric(self, d: int, domain: GridDomain) -> MetricField:
        raise ConfigError("domain.source_metric", f"family {self.name!r} has no closed-form induced metric")

    def default_target(self) -> str:
        return "flat"

    def build(self, domain: GridDomain, target: MetricField, label: str = "") -> DiscreteImmersion:
        return DiscreteImmersion(domain, target, self.values(domain), label or self.name, self.model_dump())


class PlaneFamily(_Family):
    """Isometric embedding x -> (x, 0)"""

    name: Literal["plane"] = "plane"

    def raw_values(self, domain):
        return _plane(domain.nodes)

    def raw_differential(self, domain):
        return np.broadcast_to(_plane(np.eye(domain.d)), domain.shape + (domain.d + 1, domain.d)).copy()

    def limit_shape(self, domain):
        return np.zeros(domain.shape + (domain.d, domain.d))

    def induced_metric(self, d, domain):
        return flat(d)


class PerturbedPlaneFamily(_Family):
    """(x, 0) + (a/k) phi(x) (e_1 + e_{d+1}); strain and bending both of order a/k"""

    name: Literal["perturbed-plane"] = "perturbed-plane"
    amplitude: float = 0.25
    k: float = Field(1.0, gt=0)
    mode: int = Field(1, ge=1)

    def _direction(self, d: int) -> np.ndarray:
        out = np.zeros(d + 1)
        out[0] = out[-1] = 1.0
        return out

    def raw_values(self, domain):
        phi, _ = _bump(domain, self.mode)
        scale = self.amplitude / self.k
        return _plane(domain.nodes) + scale * phi[..., None] * self._direction(domain.d)

    def raw_differential(self, domain):
        _, grad = _bump(domain, self.mode)
        scale = self.amplitude / self.k
        base = _plane(np.eye(domain.d))
        return base + scale * np.einsum("i,...a->...ia", self._direction(domain.d), grad)

    def limit_shape(self, domain):
        return np.zeros(domain.shape + (domain.d, domain.d))


class GraphFamily(_Family):
    """Graph of t phi(x)"""

    name: Literal["graph"] = "graph"
    height: float = 0.1
    mode: int = Field(1, ge=1)

    def raw_values(self, domain):
        phi, _ = _bump(domain, self.mode)
        out = _plane(domain.nodes)
        out[..., -1] = self.height * phi
        return out

    def raw_differential(self, domain):
        _, grad = _bump(domain, self.mode)
        du = np.broadcast_to(_plane(np.eye(domain.d)), domain.shape + (domain.d + 1, domain.d)).copy()
        du[..., -1, :] = self.height * grad
        return du

    def induced_metric(self, d, domain):
        family, origin, side = self, np.asarray(domain.origin), domain.side

        def tables(x):
            _, grad = _bump_at(x - origin, side, family.mode)
            return np.eye(d) + family.height**2 * np.einsum("...a,...b->...ab", grad, grad)

        return MetricField(name="graph-induced", dim=d, tables=tables)


class DilationFamily(_Family):
    """(1 + t)(x, 0)"""

    name: Literal["dilation"] = "dilation"
    t: float = 0.1

    def raw_values(self, domain):
        return (1.0 + self.t) * _plane(domain.nodes)

    def raw_differential(self, domain):
        return (1.0 + self.t) * PlaneFamily().raw_differential(domain)

    def limit_shape(self, domain):
        return np.zeros(domain.shape + (domain.d, domain.d))

    def induced_metric(self, d, domain):
        return constant(d, (1.0 + self.t) ** 2 * np.eye(d))


class CylinderFamily(_Family):
    """Wraps x_1 around a circle of radius rho; outward normal, S = diag(1/rho, 0)"""

    name: Literal["cylinder"] = "cylinder"
    radius: float = Field(1.0, gt=0)

    def raw_values(self, domain):
        x = domain.nodes
        rho = self.radius
        first = np.stack([rho * np.cos(x[..., 0] / rho), rho * np.sin(x[..., 0] / rho)], axis=-1)
        return np.concatenate([first, x[..., 1:]], axis=-1)

    def raw_differential(self, domain):
        x = domain.nodes
        d = domain.d
        du = np.zeros(domain.shape + (d + 1, d))
        du[..., 0, 0] = -np.sin(x[..., 0] / self.radius)
        du[..., 1, 0] = np.cos(x[..., 0] / self.radius)
        for a in range(1, d):
            du[..., a + 1, a] = 1.0
        return du

    def normal(self, domain):
        x = domain.nodes
        out = np.zeros(domain.shape + (domain.d + 1,))
        out[..., 0] = np.cos(x[..., 0] / self.radius)
        out[..., 1] = np.sin(x[..., 0] / self.radius)
        return out

    def limit_shape(self, domain):
        out = np.zeros(domain.shape + (domain.d, domain.d))
        out[..., 0, 0] = 1.0 / self.radius
        return out

    def induced_metric(self, d, domain):
        return flat(d)


def _conformal_cap(domain: GridDomain, center):
    """y = (x - c)/2 and its squared norm"""
    c = domain.center if center is None else np.asarray(center, dtype=float)
    y = 0.5 * (domain.nodes - c)
    return y, np.sum(y**2, axis=-1)


def _cap_metric(d: int, domain: GridDomain, center, scale) -> MetricField:
    c = domain.center if center is None else np.asarray(center, dtype=float)

    def tables(x):
        s = np.sum((0.5 * (x - c)) ** 2, axis=-1)
        return scale(s)[..., None, None] * np.eye(d)

    return MetricField(name="cap-induced", dim=d, tables=tables)


class SphereCapFamily(_Family):
    """Round cap of radius rho in flat R^(d+1) around the north pole, outward normal, S = I/rho"""

    name: Literal["sphere-cap"] = "sphere-cap"
    radius: float = Field(1.0, gt=0)
    center: Optional[List[float]] = None

    def raw_values(self, domain):
        rho = self.radius
        y, s = _conformal_cap(domain, self.center)
        denom = (s + rho**2)[..., None]
        return np.concatenate([2.0 * rho**2 * y, (rho * (rho**2 - s))[..., None]], axis=-1) / denom

    def raw_differential(self, domain):
        rho = self.radius
        y, s = _conformal_cap(domain, self.center)
        denom = s + rho**2
        d = domain.d
        du = np.empty(domain.shape + (d + 1, d))
        # dX/dy then the chain factor 1/2
        top = 2.0 * rho**2 * (np.eye(d) / denom[..., None, None]
                               - 2.0 * np.einsum("...i,...j->...ij", y, y) / (denom**2)[..., None, None])
        du[..., :d, :] = 0.5 * top
        du[..., d, :] = 0.5 * (-4.0 * rho**3 * y / (denom**2)[..., None])
        return du

    def normal(self, domain):
        return self.raw_values(domain) / self.radius

    def limit_shape(self, domain):
        return np.broadcast_to(np.eye(domain.d) / self.radius, domain.shape + (domain.d, domain.d)).copy()

    def induced_metric(self, d, domain):
        rho2 = self.radius**2
        return _cap_metric(d, domain, self.center, lambda s: (rho2 / (s + rho2)) ** 2)


class EquatorialCapFamily(_Family):
    """Totally geodesic cap ((x - c)/2, 0) in stereographic coordinates of the round sphere"""

    name: Literal["equatorial-cap"] = "equatorial-cap"
    radius: float = Field(1.0, gt=0)
    center: Optional[List[float]] = None

    def raw_values(self, domain):
        y, _ = _conformal_cap(domain, self.center)
        return _plane(y)

    def raw_differential(self, domain):
        return 0.5 * PlaneFamily().raw_differential(domain)

    def limit_shape(self, domain):
        return np.zeros(domain.shape + (domain.d, domain.d))

    def induced_metric(self, d, domain):
        rho2 = self.radius**2
        return _cap_metric(d, domain, self.center, lambda s: (rho2 / (rho2 + s)) ** 2)

    def default_target(self) -> str:
        return "sphere-stereographic"


def _wrinkle_profile(s: np.ndarray, amplitude: float, k: float, decay: float, quad_order: int = 8):
    """Unit-speed planar curve with turning angle alpha(s) = a k^-decay sin(k s), s sorted ascending"""
    alpha_amp = amplitude * k ** (-decay)
    t, w = np.polynomial.legendre.leggauss(quad_order)
    left, right = s[:-1], s[1:]
    mid, half = 0.5 * (left + right), 0.5 * (right - left)
    points = mid[:, None] + half[:, None] * t
    alpha = alpha_amp * np.sin(k * points)
    steps = np.stack([np.sum(w * np.cos(alpha), axis=-1), np.sum(w * np.sin(alpha), axis=-1)], axis=-1)
    steps *= half[:, None]
    curve = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
    angle = alpha_amp * np.sin(k * s)
    return curve, np.stack([np.cos(angle), np.sin(angle)], axis=-1)


class CurveWrinkleFamily(_Family):
    """(gamma_1(x_1), x_2, ..., gamma_2(x_1)) for a unit-speed wrinkled curve gamma

    Turning angle a k^-decay sin(k s): decay 1 keeps bending bounded, decay 0
    lets it grow like k.
    """

    name: Literal["curve-wrinkle"] = "curve-wrinkle"
    amplitude: float = 0.5
    k: float = Field(1.0, gt=0)
    decay: float = 1.0

    def _profile(self, domain):
        s = domain.axes[0] - domain.origin[0]
        return _wrinkle_profile(s, self.amplitude, self.k, self.decay)

    def raw_values(self, domain):
        curve, _ = self._profile(domain)
        index = np.indices(domain.shape)[0]
        out = np.empty(domain.shape + (domain.d + 1,))
        out[..., 0] = domain.origin[0] + curve[index, 0]
        out[..., 1 : domain.d] = domain.nodes[..., 1:]
        out[..., domain.d] = curve[index, 1]
        return out

    def raw_differential(self, domain):
        _, tangent = self._profile(domain)
        index = np.indices(domain.shape)[0]
        d = domain.d
        du = np.zeros(domain.shape + (d + 1, d))
        du[..., 0, 0] = tangent[index, 0]
        du[..., d, 0] = tangent[index, 1]
        for a in range(1, d):
            du[..., a, a] = 1.0
        return du

    def limit_shape(self, domain):
        return np.zeros(domain.shape + (domain.d, domain.d))

    def induced_metric(self, d, domain):
        return flat(d)


class SplitRotationFamily(_Family):
    """Plane folded along x_1 = mid by ``angle``: two incompatible rotations"""

    name: Literal["split-rotation"] = "split-rotation"
    angle: float = 0.5

    def raw_values(self, domain):
        x = domain.nodes
        mid = domain.center[0]
        out = _plane(x)
        right = x[..., 0] > mid
        offset = x[..., 0] - mid
        out[..., 0] = np.where(right, mid + offset * np.cos(self.angle), x[..., 0])
        out[..., -1] = np.where(right, offset * np.sin(self.angle), 0.0)
        return out

    def raw_differential(self, domain):
        right = domain.nodes[..., 0] > domain.center[0]
        du = PlaneFamily().raw_differential(domain)
        du[..., 0, 0] = np.where(right, np.cos(self.angle), 1.0)
        du[..., -1, 0] = np.where(right, np.sin(self.angle), 0.0)
        return du

    def induced_metric(self, d, domain):
        return flat(d)


Family = Annotated[
    Union[
        PlaneFamily,
        PerturbedPlaneFamily,
        GraphFamily,
        DilationFamily,
        CylinderFamily,
        SphereCapFamily,
        EquatorialCapFamily,
        CurveWrinkleFamily,
        SplitRotationFamily,
    ],
    Field(discriminator="name"),
]

FAMILY_NAMES = (
    "plane",
    "perturbed-plane",
    "graph",
    "dilation",
    "cylinder",
    "sphere-cap",
    "equatorial-cap",
    "curve-wrinkle",
    "split-rotation",
)
