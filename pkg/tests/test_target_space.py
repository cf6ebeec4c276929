"""
ShellRig Target Space Tests
"""

import numpy as np
import pytest

from shellrig.errors import ChartError, GeodesicError, MetricError, PatchError
from shellrig.target_space import (
    ChristoffelField,
    CutoffProfile,
    affine_chart,
    catalog_metric,
    christoffel,
    christoffel_fd,
    connector,
    connector_constant,
    conformal_wave,
    constant,
    epsilon_isometric_check,
    extend_chart,
    flat,
    geodesic_steps,
    inverse_stereographic,
    isometry_transfer_constants,
    normal_coordinates,
    shoot_geodesics,
    sphere_polar,
    sphere_stereographic,
    stereographic,
    warped_product,
)


@pytest.mark.parametrize(
    "field, point",
    [
        (sphere_stereographic(3), [0.3, -0.2, 0.5]),
        (sphere_polar(), [1.0, 0.4]),
        (warped_product(3, rate=0.7), [0.2, 0.1, -0.3]),
        (catalog_metric("conformal-wave", 3, amplitude=0.2), [0.4, 1.1, -0.6]),
    ],
)
def test_closed_christoffel_matches_finite_differences(field, point):
    closed = christoffel(field, point)
    np.testing.assert_allclose(closed, christoffel_fd(field, point), atol=1e-6)
    np.testing.assert_allclose(closed, np.swapaxes(closed, -1, -2), atol=1e-14)


def test_flat_symbols_vanish_and_connector_is_plain_derivative(rng):
    field = flat(3)
    y, w, Y, W = rng.standard_normal((4, 3))
    assert np.all(christoffel(field, y) == 0.0)
    np.testing.assert_allclose(connector(ChristoffelField(field), y, w, Y, W), W)


def test_connector_accepts_column_stacks(rng):
    gamma = ChristoffelField(sphere_stereographic(3))
    y, w = 0.3 * rng.standard_normal((2, 3))
    Y, W = rng.standard_normal((2, 3, 2))
    stacked = connector(gamma, y, w, Y, W)
    for a in range(2):
        np.testing.assert_allclose(stacked[:, a], connector(gamma, y, w, Y[:, a], W[:, a]), atol=1e-14)


def test_points_outside_patch_are_rejected():
    field = sphere_stereographic(3, patch_radius=2.0)
    with pytest.raises(PatchError):
        field.metric([3.0, 0.0, 0.0])
    with pytest.raises(MetricError):
        field.metric([0.0, 0.0])


def test_catalog_rejects_unknown_metric():
    with pytest.raises(MetricError):
        catalog_metric("torus", 3)
    with pytest.raises(MetricError):
        constant(3, np.eye(2))


def test_stereographic_round_trip(rng):
    y = rng.standard_normal((5, 3))
    np.testing.assert_allclose(stereographic(inverse_stereographic(y, 2.0), 2.0), y, atol=1e-12)


def test_warped_product_distance_along_the_warp_axis():
    field = warped_product(2, rate=1.0)
    assert field.closed_distance(np.array([0.0, 0.0]), np.array([1.0, 0.0])) == pytest.approx(1.0)


def test_geodesic_from_south_pole_reaches_equator():
    # h = 4 I at the origin, so speed pi/4 covers a quarter great circle in unit time
    gamma = ChristoffelField(sphere_stereographic(3))
    end, _ = shoot_geodesics(gamma, np.zeros(3), np.array([np.pi / 4.0, 0.0, 0.0]), 128)
    np.testing.assert_allclose(end, [1.0, 0.0, 0.0], atol=1e-6)


def test_geodesic_step_control_returns_power_of_two():
    gamma = ChristoffelField(sphere_stereographic(3))
    steps = geodesic_steps(gamma, np.zeros(3), np.array([0.3, 0.0, 0.1]), tol=1e-10)
    assert steps >= 16 and steps & (steps - 1) == 0


def test_affine_chart_is_isometric_at_the_center():
    field = constant(3, [[2.0, 0.3, 0.0], [0.3, 1.0, 0.0], [0.0, 0.0, 0.5]])
    chart = affine_chart(field, [1.0, -1.0, 0.5], radius=4.0)
    np.testing.assert_allclose(chart.forward(chart.center), 0.0, atol=1e-14)
    samples = chart.forward(chart.center + np.array([[0.1, 0.2, 0.0], [0.0, -0.3, 0.2]]))
    assert epsilon_isometric_check(chart, samples).epsilon < 1e-12


def test_epsilon_check_needs_samples():
    chart = affine_chart(flat(2), [0.0, 0.0])
    with pytest.raises(ValueError):
        epsilon_isometric_check(chart, np.zeros((0, 2)))


@pytest.mark.slow
def test_normal_coordinates_on_sphere():
    field = sphere_stereographic(3)
    chart = normal_coordinates(field, [0.1, 0.0, -0.1], radius=0.5)
    y = np.array([[0.1, -0.2, 0.05], [0.0, 0.15, 0.1]])
    np.testing.assert_allclose(chart.forward(chart.inverse(y)), y, atol=1e-9)
    np.testing.assert_allclose(chart.pushforward_metric.metric(np.zeros(3)), np.eye(3), atol=1e-6)
    close = epsilon_isometric_check(chart, 0.02 * np.eye(3)).epsilon
    far = epsilon_isometric_check(chart, 0.2 * np.eye(3)).epsilon
    assert close < far < 0.5


def test_normal_coordinates_name_the_escaping_direction():
    field = sphere_stereographic(3, patch_radius=0.5)
    with pytest.raises(GeodesicError, match=r"e1"):
        normal_coordinates(field, np.zeros(3), radius=2.0)


def test_cutoff_profile_is_identity_inside_and_zero_outside(rng):
    theta = CutoffProfile(3)
    inner = 0.5 * rng.uniform(-1.0, 1.0, (10, 3))
    np.testing.assert_allclose(theta.value(inner), inner)
    outer = 3.0 * np.eye(3)
    np.testing.assert_allclose(theta.value(outer), 0.0)
    psi, _, _ = theta.radial(np.linspace(0.0, 2.5, 101))
    assert np.all((psi >= 0.0) & (psi <= 1.0))
    assert np.all(np.diff(psi) <= 1e-15)


def test_cutoff_derivatives_match_finite_differences(rng):
    theta = CutoffProfile(2)
    step = 1e-6
    for y in rng.uniform(0.6, 1.3, (5, 2)):
        shift = step * np.eye(2)
        fd_jac = np.stack([(theta.value(y + e) - theta.value(y - e)) / (2 * step) for e in shift], axis=-1)
        np.testing.assert_allclose(theta.jacobian(y), fd_jac, atol=1e-6)
        fd_hess = np.stack([(theta.jacobian(y + e) - theta.jacobian(y - e)) / (2 * step) for e in shift], axis=-1)
        np.testing.assert_allclose(theta.hessian(y), fd_hess, atol=1e-5)
    bounds = theta.bounds
    assert bounds.value >= 1.0 and bounds.jacobian >= 1.0 and bounds.hessian > 0.0


def test_extended_chart_agrees_with_chart_on_the_inner_ball():
    chart = affine_chart(flat(3), np.zeros(3), radius=4.0)
    ext = extend_chart(chart, CutoffProfile(3), 1.5)
    q = np.array([[0.5, 0.2, -0.1], [10.0, 0.0, 0.0]])
    np.testing.assert_allclose(ext.value(q)[0], q[0])
    np.testing.assert_allclose(ext.value(q)[1], 0.0)
    assert ext.inside(q).tolist() == [True, False]
    np.testing.assert_allclose(ext.differential(q)[0], np.eye(3), atol=1e-12)


def test_extension_radius_must_fit_the_chart():
    chart = affine_chart(flat(2), np.zeros(2), radius=1.0)
    with pytest.raises(ChartError):
        extend_chart(chart, CutoffProfile(2), 0.6)
    with pytest.raises(ChartError):
        extend_chart(chart, CutoffProfile(3), 0.4)


def test_measured_constants_on_flat_chart(rng):
    chart = affine_chart(flat(3), np.zeros(3), radius=4.0)
    samples = rng.uniform(-1.0, 1.0, (4, 3))
    assert connector_constant(chart, samples, rng) <= 1.0 + 1e-12
    constants = isometry_transfer_constants(chart, samples, rng, src_dim=2, epsilon=0.1)
    assert constants.distance == 0.0
    assert constants.normal == pytest.approx(0.0, abs=1e-12)
    assert constants.epsilon == 0.1


def uniform_points(low, high):
    def draw(rng, count):
        return rng.uniform(low, high, (count, len(low)))

    return draw


COMPATIBILITY_CASES = {
    "sphere-stereographic": (sphere_stereographic(3), uniform_points([-1.0] * 3, [1.0] * 3)),
    "sphere-polar": (sphere_polar(), uniform_points([0.3, -np.pi], [2.8, np.pi])),
    "warped-product": (warped_product(3, rate=0.7), uniform_points([-1.0] * 3, [1.0] * 3)),
    "conformal-wave": (conformal_wave(3, 0.2), uniform_points([-2.0] * 3, [2.0] * 3)),
    "constant": (
        constant(3, [[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 1.5]]),
        uniform_points([-1.0] * 3, [1.0] * 3),
    ),
}


@pytest.mark.parametrize("name", sorted(COMPATIBILITY_CASES))
def test_levi_civita_symbols_are_metric_compatible_and_torsion_free(name, rng):
    field, draw = COMPATIBILITY_CASES[name]
    points = draw(rng, 100)
    gamma = christoffel(field, points)
    h = field.metric(points)
    # d_l h_ij = Gamma^k_li h_kj + Gamma^k_lj h_ik
    expected = np.einsum("...kli,...kj->...lij", gamma, h) + np.einsum("...klj,...ik->...lij", gamma, h)
    np.testing.assert_allclose(field.metric_derivatives(points), expected, atol=1e-6)
    np.testing.assert_allclose(gamma, np.swapaxes(gamma, -1, -2), atol=1e-14)


def test_polar_symbols_and_connector(rng):
    field = sphere_polar()
    phi = rng.uniform(0.3, 2.8, 20)
    points = np.stack([phi, rng.uniform(-np.pi, np.pi, 20)], axis=-1)
    gamma = christoffel(field, points)
    np.testing.assert_allclose(gamma[:, 0, 1, 1], -np.sin(phi) * np.cos(phi), atol=1e-14)
    np.testing.assert_allclose(gamma[:, 1, 0, 1], np.cos(phi) / np.sin(phi), atol=1e-14)
    np.testing.assert_allclose(gamma[:, 0, 0, 0], 0.0, atol=0)

    along = np.array([0.0, 1.0])
    w, Y = rng.standard_normal(20)[:, None] * along, rng.standard_normal(20)[:, None] * along
    W = rng.standard_normal((20, 2))
    K = connector(ChristoffelField(field), points, w, Y, W)
    np.testing.assert_allclose(K[:, 0], W[:, 0] - np.sin(phi) * np.cos(phi) * w[:, 1] * Y[:, 1], atol=1e-12)
    np.testing.assert_allclose(K[:, 1], W[:, 1], atol=1e-12)


@pytest.mark.parametrize("t", [0.01, 0.1, 0.5])
def test_epsilon_of_a_stretched_constant_metric(t):
    chart = affine_chart(constant(2, [[1.0 + t, 0.0], [0.0, 1.0]]), np.zeros(2), orthonormal=False)
    estimate = epsilon_isometric_check(chart, [[0.1, 0.2], [-0.3, 0.0]])
    assert estimate.epsilon == pytest.approx(t, rel=1e-12)
    assert estimate.epsilon >= t - 1e-15
    assert estimate.christoffel_max == 0.0


def test_measured_constants_on_a_curved_chart(rng):
    chart = affine_chart(sphere_stereographic(3), np.zeros(3), radius=1.0)
    samples = 0.05 * rng.uniform(-1.0, 1.0, (8, 3))
    epsilon = epsilon_isometric_check(chart, samples).epsilon
    assert 0.0 < epsilon < 0.05
    assert connector_constant(chart, samples, rng) <= np.sqrt(1.0 + epsilon) + 1e-12

    constants = isometry_transfer_constants(chart, samples, rng, src_dim=2)
    assert constants.epsilon == epsilon
    assert np.isfinite(constants.distance) and constants.distance >= 0.0
    assert 0.0 < constants.normal <= 2.0
