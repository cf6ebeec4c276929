"""
ShellRig Immersion Tests
"""

import logging

import numpy as np
import pytest

from shellrig.errors import MetricError
from shellrig.families import (
    CylinderFamily,
    DilationFamily,
    EquatorialCapFamily,
    PerturbedPlaneFamily,
    PlaneFamily,
    SphereCapFamily,
)
from shellrig.immersions import (
    DiscreteImmersion,
    GridDomain,
    ShapeField,
    bending_energy,
    grid_gradient,
    induced_shape_operator,
    lp_distance,
    modified_bending,
    poincare_check,
    reference_shape_operator,
    shape_residual_density,
    stretching_density,
    stretching_energy,
    unit_normal,
    volume_comparison,
    w1p_distance,
)
from shellrig.target_space import constant, flat, sphere_stereographic


def test_grid_weights_and_subcubes(unit_square):
    assert unit_square.weights.sum() == pytest.approx(1.0)
    assert unit_square.nodes.shape == (17, 17, 2)
    cube = unit_square.subcube((1, 2), 4)
    assert cube.m_per_side == 5
    np.testing.assert_allclose(cube.origin, [0.25, 0.5])
    assert cube.weights.sum() == pytest.approx(1.0 / 16.0)
    with pytest.raises(ValueError):
        unit_square.subcube_slices((0, 0), 3)
    with pytest.raises(ValueError):
        unit_square.subcube_slices((4, 0), 4)


def test_declared_comparability_must_cover_the_metric():
    metric = constant(2, np.diag([4.0, 1.0]))
    assert GridDomain(2, metric=metric).lam == pytest.approx(4.0)
    with pytest.raises(MetricError):
        GridDomain(2, metric=metric, lam=2.0)


def test_volume_comparison_bounds():
    domain = GridDomain(2, metric=constant(2, np.diag([4.0, 1.0])))
    bounds = volume_comparison(domain, lambda x: 1.0 + x[..., 0] ** 2)
    assert bounds.lower <= bounds.value <= bounds.upper
    assert bounds.value == pytest.approx(2.0 * (1.0 + 1.0 / 3.0), rel=1e-2)


def test_grid_gradient_is_exact_on_quadratics(unit_square):
    x = unit_square.nodes
    values = np.stack([x[..., 0] ** 2, x[..., 0] * x[..., 1]], axis=-1)
    du = grid_gradient(values, unit_square)
    np.testing.assert_allclose(du[..., 0, 0], 2.0 * x[..., 0], atol=1e-12)
    np.testing.assert_allclose(du[..., 1, 1], x[..., 0], atol=1e-12)


def test_immersion_shape_is_validated(unit_square, flat3):
    with pytest.raises(MetricError):
        DiscreteImmersion(unit_square, flat(2), np.zeros((17, 17, 2)))
    with pytest.raises(MetricError):
        DiscreteImmersion(unit_square, flat3, np.zeros((17, 16, 3)))


def test_plane_has_vanishing_energies(plane):
    assert stretching_energy(plane, 2.0) == pytest.approx(0.0, abs=1e-24)
    assert bending_energy(plane, 2.0) == pytest.approx(0.0, abs=1e-24)
    np.testing.assert_allclose(unit_normal(plane), np.broadcast_to([0.0, 0.0, 1.0], (17, 17, 3)), atol=1e-14)
    np.testing.assert_allclose(induced_shape_operator(plane).tables, 0.0, atol=1e-12)


@pytest.mark.parametrize("d, p", [(1, 2.0), (2, 2.0), (2, 3.0), (3, 1.5)])
def test_dilation_stretching_energy(d, p):
    t = 0.2
    domain = GridDomain(d, 1.0, 9)
    u = DilationFamily(t=t).build(domain, flat(d + 1))
    assert stretching_energy(u, p) == pytest.approx((np.sqrt(d) * t) ** p, rel=1e-10)


def test_energies_reject_small_exponents(plane):
    with pytest.raises(ValueError):
        stretching_energy(plane, 1.0)


def test_cylinder_shape_operator_converges(flat3):
    domain = GridDomain(2, 1.0, 33)
    family = CylinderFamily(radius=1.0)
    u = family.build(domain, flat3)
    np.testing.assert_allclose(unit_normal(u), family.normal(domain), atol=1e-3)
    reference = reference_shape_operator(domain, np.diag([1.0, 0.0]))
    residual = shape_residual_density(u, reference)
    # one-sided stencils on the two outer rows
    assert np.nanmax(residual[2:-2, 2:-2]) < 1e-8
    assert np.nanmedian(residual) < 1e-3
    assert modified_bending(u, reference, 2.0) < 1e-4
    assert stretching_energy(u, 2.0) < 1e-6


def interior_shape_error(family, target, m):
    """max |S_u - S| over the nodes of [1/4, 3/4]^2 and the grid spacing"""
    domain = GridDomain(2, 1.0, m)
    u = family.build(domain, target)
    residual = shape_residual_density(u, ShapeField(family.limit_shape(domain), np.ones(domain.shape, dtype=bool)))
    quarter = (m - 1) // 4
    inner = slice(quarter, m - quarter)
    return float(np.max(residual[inner, inner])), domain.spacing


@pytest.mark.parametrize(
    "family, target",
    [(CylinderFamily(radius=1.0), flat(3)), (EquatorialCapFamily(), sphere_stereographic(3))],
    ids=["cylinder", "equatorial-cap"],
)
def test_shape_operator_within_h_squared_under_halving(family, target):
    # both are reproduced exactly by the central stencils away from the boundary
    for m in (17, 33, 65):
        error, h = interior_shape_error(family, target, m)
        assert error <= h**2


def test_sphere_cap_shape_operator_is_second_order():
    family = SphereCapFamily(radius=1.5)
    measured = [interior_shape_error(family, flat(3), m) for m in (17, 33, 65)]
    errors, spacings = np.array(measured).T
    order, _ = np.polyfit(np.log(spacings), np.log(errors), 1)
    assert order >= 1.9
    assert np.all(errors <= 10.0 * spacings**2)


def test_reference_shape_operator_raises_index():
    domain = GridDomain(2, 1.0, 5, metric=constant(2, np.diag([4.0, 1.0])))
    S = reference_shape_operator(domain, np.diag([2.0, 3.0]))
    np.testing.assert_allclose(S.tables, np.broadcast_to(np.diag([0.5, 3.0]), (5, 5, 2, 2)))
    with pytest.raises(MetricError):
        reference_shape_operator(domain, np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_degenerate_nodes_are_excluded_from_bending(unit_square, flat3, caplog):
    x = unit_square.nodes
    values = np.stack([x[..., 0], np.zeros_like(x[..., 0]), np.zeros_like(x[..., 0])], axis=-1)
    u = DiscreteImmersion(unit_square, flat3, values)
    assert not u.regular.any()
    np.testing.assert_allclose(stretching_density(u), np.sqrt(2.0))
    assert stretching_energy(u, 2.0) == pytest.approx(2.0)
    with caplog.at_level(logging.WARNING, logger="shellrig.immersions"):
        assert bending_energy(u, 2.0) == 0.0
    assert "excluded" in caplog.text


def test_perturbed_plane_energies_decay_like_k_to_minus_p(flat3):
    domain = GridDomain(2, 1.0, 17)
    ks = np.array([4.0, 8.0, 16.0, 32.0])
    energies = [stretching_energy(PerturbedPlaneFamily(k=k).build(domain, flat3), 2.0) for k in ks]
    slope, _ = np.polyfit(np.log(ks), np.log(energies), 1)
    assert slope == pytest.approx(-2.0, abs=0.1)


def test_poincare_ratio_for_affine_maps(plane):
    check = poincare_check(plane, 2.0)
    assert check.ratio == pytest.approx(1.0 / 12.0, rel=1e-2)


def test_sampled_poincare_agrees_with_exact(plane):
    exact = poincare_check(plane, 2.0)
    sampled = poincare_check(plane, 2.0, max_pairs=50000, exact_limit=0)
    assert sampled.ratio == pytest.approx(exact.ratio, rel=0.05)


def test_distances_to_a_translated_plane(unit_square, flat3):
    u1 = PlaneFamily().build(unit_square, flat3)
    shifted = u1.values + np.array([0.0, 0.0, 0.3])
    u2 = DiscreteImmersion(unit_square, flat3, shifted)
    assert lp_distance(u1, u2, 2.0) == pytest.approx(0.3)
    assert w1p_distance(u1, u2, 2.0) == pytest.approx(0.3)
    assert w1p_distance(u1, u1, 2.0) == 0.0


def test_distances_need_matching_grids(plane, flat3):
    other = PlaneFamily().build(GridDomain(2, 1.0, 9), flat3)
    with pytest.raises(MetricError):
        lp_distance(plane, other, 2.0)
