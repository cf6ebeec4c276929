"""
ShellRig Family Tests
"""

import numpy as np
import pytest
from pydantic import TypeAdapter, ValidationError

from shellrig.errors import ConfigError
from shellrig.families import (
    FAMILY_NAMES,
    CurveWrinkleFamily,
    CylinderFamily,
    DilationFamily,
    EquatorialCapFamily,
    Family,
    GraphFamily,
    PerturbedPlaneFamily,
    PlaneFamily,
    RigidMotion,
    SphereCapFamily,
    SplitRotationFamily,
)
from shellrig.immersions import GridDomain, bending_energy, grid_gradient, stretching_energy
from shellrig.metric_core import isometry_distance
from shellrig.target_space import flat, sphere_stereographic

SMOOTH_FAMILIES = [
    PlaneFamily(),
    PerturbedPlaneFamily(k=2.0),
    GraphFamily(height=0.2, mode=2),
    DilationFamily(t=0.3),
    CylinderFamily(radius=0.8),
    SphereCapFamily(radius=1.5),
    EquatorialCapFamily(),
    CurveWrinkleFamily(k=3.0),
    PlaneFamily(motion=RigidMotion(angle=0.4, plane=(0, 2), translation=[0.1, 0.0, -0.2])),
]


def test_every_family_is_listed():
    names = {type(family).model_fields["name"].default for family in SMOOTH_FAMILIES}
    assert names | {"split-rotation"} == set(FAMILY_NAMES)


@pytest.mark.parametrize("family", SMOOTH_FAMILIES, ids=lambda f: f.name)
def test_closed_differential_matches_grid_gradient(family):
    domain = GridDomain(2, 1.0, 65)
    numeric = grid_gradient(family.values(domain), domain)
    np.testing.assert_allclose(numeric[2:-2, 2:-2], family.differential(domain)[2:-2, 2:-2], atol=5e-3)


@pytest.mark.parametrize(
    "family",
    [PlaneFamily(), CylinderFamily(radius=0.7), CurveWrinkleFamily(k=5.0), CurveWrinkleFamily(k=5.0, decay=0.0)],
    ids=lambda f: f.name,
)
def test_isometric_families_have_orthonormal_differentials(family):
    domain = GridDomain(2, 1.0, 33)
    distance = isometry_distance(family.differential(domain))
    assert np.max(distance) < 1e-12


@pytest.mark.parametrize(
    "family",
    [GraphFamily(height=0.3), DilationFamily(t=0.5), SphereCapFamily(radius=1.2), EquatorialCapFamily()],
    ids=lambda f: f.name,
)
def test_induced_metric_is_the_pullback(family):
    domain = GridDomain(2, 1.0, 9)
    du = family.differential(domain)
    target = domain_target(family)
    H = target.metric(family.values(domain))
    pullback = np.swapaxes(du, -1, -2) @ H @ du
    np.testing.assert_allclose(family.induced_metric(2, domain).metric(domain.nodes), pullback, atol=1e-12)
    fine = GridDomain(2, 1.0, 33)
    isometric = GridDomain(2, 1.0, 33, metric=family.induced_metric(2, fine))
    assert stretching_energy(family.build(isometric, target), 2.0) < 1e-4


def domain_target(family):
    return sphere_stereographic(3) if family.default_target() == "sphere-stereographic" else flat(3)


def test_discriminated_union_picks_the_family():
    adapter = TypeAdapter(Family)
    family = adapter.validate_python({"name": "cylinder", "radius": 2.0})
    assert isinstance(family, CylinderFamily) and family.radius == 2.0
    with pytest.raises(ValidationError):
        adapter.validate_python({"name": "torus"})
    with pytest.raises(ValidationError):
        adapter.validate_python({"name": "cylinder", "radius": -1.0})
    with pytest.raises(ValidationError):
        adapter.validate_python({"name": "plane", "height": 1.0})


def test_rigid_motion_is_orthogonal_and_validated():
    motion = RigidMotion(angle=0.3, plane=(1, 2), translation=[1.0, 2.0, 3.0])
    R = motion.matrix(3)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-15)
    assert np.linalg.det(R) == pytest.approx(1.0)
    assert not motion.is_identity
    with pytest.raises(ConfigError):
        RigidMotion(plane=(0, 3)).matrix(3)
    with pytest.raises(ConfigError):
        RigidMotion(translation=[1.0]).offset(3)


def test_rigid_motion_preserves_stretching(unit_square, flat3):
    moved = GraphFamily(height=0.2, motion=RigidMotion(angle=1.1, plane=(0, 2), translation=[0.0, 1.0, 0.0]))
    still = GraphFamily(height=0.2)
    assert stretching_energy(moved.build(unit_square, flat3), 2.0) == pytest.approx(
        stretching_energy(still.build(unit_square, flat3), 2.0), rel=1e-10
    )


def test_limit_shapes():
    domain = GridDomain(2, 1.0, 5)
    np.testing.assert_allclose(CylinderFamily(radius=2.0).limit_shape(domain)[0, 0], [[0.5, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(SphereCapFamily(radius=2.0).limit_shape(domain)[0, 0], 0.5 * np.eye(2))
    with pytest.raises(ConfigError):
        GraphFamily().limit_shape(domain)
    with pytest.raises(ConfigError):
        SplitRotationFamily().limit_shape(domain)


def test_wrinkle_bending_grows_without_decay():
    domain = GridDomain(1, 1.0, 257)
    target = flat(2)
    tame = [CurveWrinkleFamily(k=k).build(domain, target) for k in (2.0, 8.0)]
    wild = [CurveWrinkleFamily(k=k, decay=0.0).build(domain, target) for k in (2.0, 8.0)]
    assert bending_energy(tame[1], 2.0) < 2.0 * bending_energy(tame[0], 2.0)
    assert bending_energy(wild[1], 2.0) > 4.0 * bending_energy(wild[0], 2.0)


def test_split_rotation_is_a_fold(unit_square, flat3):
    u = SplitRotationFamily(angle=0.5).build(unit_square, flat3)
    right = unit_square.nodes[..., 0] > 0.5
    np.testing.assert_allclose(u.values[right][:, 2], (unit_square.nodes[right][:, 0] - 0.5) * np.sin(0.5))
    np.testing.assert_allclose(u.values[~right][:, 2], 0.0)
