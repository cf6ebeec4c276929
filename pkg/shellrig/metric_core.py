"""
ShellRig Metric Core Module

Constant metrics on coordinate spaces, Frobenius norms of linear maps between
such spaces and nearest isometries (orthogonal Procrustes after whitening).
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from shellrig.errors import MetricError

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e8
UNIQUENESS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ConstMetric:
    """Symmetric positive-definite form on a fixed-dimension coordinate space"""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1] or entries.shape[0] == 0:
            raise MetricError(f"metric table must be square and non-empty, got shape {entries.shape}")
        if not np.array_equal(entries, entries.T):
            raise MetricError("metric table is not symmetric")
        try:
            np.linalg.cholesky(entries)
        except np.linalg.LinAlgError as exc:
            raise MetricError("metric table is not positive definite") from exc
        eigenvalues = np.linalg.eigvalsh(entries)
        if eigenvalues[-1] > MAX_CONDITION * eigenvalues[0]:
            raise MetricError(
                f"metric condition number {eigenvalues[-1] / eigenvalues[0]:.3g} exceeds {MAX_CONDITION:.0e}"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def euclidean(cls, dim: int) -> "ConstMetric":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, values) -> "ConstMetric":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    @property
    def comparability(self) -> float:
        """Smallest lambda with (1/lambda) I <= g <= lambda I"""
        return float(max(self.eigenvalues[-1], 1.0 / self.eigenvalues[0]))

    def inner(self, v, w) -> float:
        return float(np.asarray(v) @ self.entries @ np.asarray(w))

    def norm(self, v) -> float:
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    def same_as(self, other: "ConstMetric") -> bool:
        return self.dim == other.dim and np.array_equal(self.entries, other.entries)


@dataclass(frozen=True, eq=False)
class LinearMapSample:
    """Linear map between two coordinate spaces carrying constant metrics"""

    coefficients: np.ndarray
    src_metric: ConstMetric
    tgt_metric: ConstMetric

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=float)
        if coefficients.ndim == 1:
            coefficients = coefficients[:, None]
        expected = (self.tgt_metric.dim, self.src_metric.dim)
        if coefficients.shape != expected:
            raise MetricError(f"coefficient table has shape {coefficients.shape}, metrics require {expected}")
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def euclidean(cls, coefficients) -> "LinearMapSample":
        coefficients = np.atleast_2d(np.asarray(coefficients, dtype=float))
        tgt_dim, src_dim = coefficients.shape
        return cls(coefficients, ConstMetric.euclidean(src_dim), ConstMetric.euclidean(tgt_dim))

    @property
    def src_dim(self) -> int:
        return self.src_metric.dim

    @property
    def tgt_dim(self) -> int:
        return self.tgt_metric.dim

    def with_coefficients(self, coefficients) -> "LinearMapSample":
        return LinearMapSample(coefficients, self.src_metric, self.tgt_metric)


class IsometryFit(NamedTuple):
    rotation: LinearMapSample
    distance: float


def sym_sqrt(tables, inverse: bool = False) -> np.ndarray:
    """Symmetric square roots (or inverse square roots) of a stack of SPD tables"""
    tables = np.asarray(tables, dtype=float)
    eigenvalues, vectors = np.linalg.eigh(tables)
    if np.any(eigenvalues <= 0.0):
        raise MetricError("square root requested for a table that is not positive definite")
    scale = 1.0 / np.sqrt(eigenvalues) if inverse else np.sqrt(eigenvalues)
    root = np.einsum("...ij,...j,...kj->...ik", vectors, scale, vectors)
    return 0.5 * (root + np.swapaxes(root, -1, -2))


def _whitening(src, tgt, src_dim: int, tgt_dim: int):
    # None stands for the Euclidean table
    src_inv_root = np.eye(src_dim) if src is None else sym_sqrt(src, inverse=True)
    tgt_root = np.eye(tgt_dim) if tgt is None else sym_sqrt(tgt)
    return src_inv_root, tgt_root


def _procrustes(whitened: np.ndarray, oriented: bool):
    """Nearest tables with orthonormal columns; returns (tables, distances, signed singular values)"""
    u, s, vt = np.linalg.svd(whitened, full_matrices=False)
    if oriented:
        sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
        sign = np.where(sign == 0.0, 1.0, sign)
        u = u.copy()
        s = s.copy()
        u[..., :, -1] *= sign[..., None]
        s[..., -1] *= sign
    nearest = u @ vt
    distance = np.sqrt(np.sum((s - 1.0) ** 2, axis=-1))
    return nearest, distance, s


def frobenius_norm(T: LinearMapSample) -> float:
    """|T|_{g0,h0} = trace(G0^-1 T^T H0 T)^(1/2)"""
    A = T.coefficients
    value = np.trace(np.linalg.solve(T.src_metric.entries, A.T @ T.tgt_metric.entries @ A))
    return float(np.sqrt(max(value, 0.0)))


def map_norms(maps, src=None, tgt=None) -> np.ndarray:
    """Batched Frobenius norms of (..., tgt, src) tables; None means Euclidean"""
    maps = np.asarray(maps, dtype=float)
    tgt_dim, src_dim = maps.shape[-2:]
    src_inv_root, tgt_root = _whitening(src, tgt, src_dim, tgt_dim)
    whitened = tgt_root @ maps @ src_inv_root
    return np.sqrt(np.sum(whitened**2, axis=(-2, -1)))


def metric_distance(g0: ConstMetric, g0p: ConstMetric) -> float:
    if g0.dim != g0p.dim:
        raise MetricError(f"cannot compare metrics of dimensions {g0.dim} and {g0p.dim}")
    return float(np.linalg.norm(g0.entries - g0p.entries))


def metric_sqrt(g0: ConstMetric) -> LinearMapSample:
    euclidean = ConstMetric.euclidean(g0.dim)
    return LinearMapSample(sym_sqrt(g0.entries), euclidean, euclidean)


def _check_isometry_shape(src_dim: int, tgt_dim: int, oriented: bool):
    if src_dim > tgt_dim:
        raise MetricError(f"no isometries from dimension {src_dim} into dimension {tgt_dim}")
    if oriented and src_dim != tgt_dim:
        raise MetricError("orientation-preserving isometries are only defined for square maps")


def nearest_isometry(T: LinearMapSample, oriented: bool = False) -> IsometryFit:
    """Closest element of Ort (or SO when oriented) to T in the |.|_{g0,h0} norm"""
    _check_isometry_shape(T.src_dim, T.tgt_dim, oriented)
    G, H = T.src_metric.entries, T.tgt_metric.entries
    whitened = sym_sqrt(H) @ T.coefficients @ sym_sqrt(G, inverse=True)
    nearest, distance, signed = _procrustes(whitened, oriented)
    if not _unique(signed, oriented):
        logger.debug("nearest isometry is not unique; returning the SVD representative")
    rotation = sym_sqrt(H, inverse=True) @ nearest @ sym_sqrt(G)
    return IsometryFit(T.with_coefficients(rotation), float(distance))


def _unique(signed: np.ndarray, oriented: bool) -> bool:
    if oriented:
        if signed.shape[-1] == 1:
            return True
        return bool(signed[..., -2] + signed[..., -1] > UNIQUENESS_TOL)
    return bool(signed[..., -1] > UNIQUENESS_TOL)


def isometry_is_unique(T: LinearMapSample, oriented: bool = False) -> bool:
    _check_isometry_shape(T.src_dim, T.tgt_dim, oriented)
    whitened = sym_sqrt(T.tgt_metric.entries) @ T.coefficients @ sym_sqrt(T.src_metric.entries, inverse=True)
    _, _, signed = _procrustes(whitened, oriented)
    return _unique(signed, oriented)


def isometry_distance(maps, src=None, tgt=None, oriented: bool = False) -> np.ndarray:
    """Batched dist(T, Ort) (or dist(T, SO)) over (..., tgt, src) tables"""
    maps = np.asarray(maps, dtype=float)
    tgt_dim, src_dim = maps.shape[-2:]
    _check_isometry_shape(src_dim, tgt_dim, oriented)
    src_inv_root, tgt_root = _whitening(src, tgt, src_dim, tgt_dim)
    _, distance, _ = _procrustes(tgt_root @ maps @ src_inv_root, oriented)
    return distance


def whitened_singular_values(maps, src=None, tgt=None) -> np.ndarray:
    """Singular values of H^(1/2) T G^(-1/2), descending"""
    maps = np.asarray(maps, dtype=float)
    tgt_dim, src_dim = maps.shape[-2:]
    src_inv_root, tgt_root = _whitening(src, tgt, src_dim, tgt_dim)
    return np.linalg.svd(tgt_root @ maps @ src_inv_root, compute_uv=False)
