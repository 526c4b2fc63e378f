import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cemreg.se3 import (
    Normalization,
    PointCloud,
    RegistrationState,
    RigidMotion,
    apply_motion,
    compose,
    euler_to_matrix,
    euler_to_matrix_batch,
    inverse,
    matrix_to_euler,
    wrap_angle,
)

angles = st.floats(-np.pi, np.pi, allow_nan=False)
euler = st.tuples(angles, angles, angles).map(np.array)
vec3 = st.tuples(*[st.floats(-5, 5, allow_nan=False)] * 3).map(np.array)
motions = st.builds(RigidMotion, euler, vec3)


def test_zero_angles_give_identity():
    assert np.array_equal(euler_to_matrix([0, 0, 0]), np.eye(3))


def test_yaw_quarter_turn_maps_x_to_y():
    R = euler_to_matrix([0, 0, np.pi / 2])
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_convention_is_z_then_y_then_x_product():
    e = np.array([0.3, -0.7, 1.1])
    cx, sx = np.cos(e[0]), np.sin(e[0])
    cy, sy = np.cos(e[1]), np.sin(e[1])
    cz, sz = np.cos(e[2]), np.sin(e[2])
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    assert np.allclose(euler_to_matrix(e), Rz @ Ry @ Rx, atol=1e-15)


def test_identity_matrix_gives_zero_angles():
    assert np.allclose(matrix_to_euler(np.eye(3)), 0.0, atol=1e-15)


def test_yaw_matrix_recovers_yaw():
    Rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(matrix_to_euler(Rz), [0, 0, np.pi / 2], atol=1e-15)


@pytest.mark.parametrize("e2", [np.pi / 2, -np.pi / 2])
def test_gimbal_lock_sets_first_angle_to_zero(e2):
    R = euler_to_matrix([0.4, e2, -1.2])
    e = matrix_to_euler(R)
    assert e[0] == 0.0
    assert np.max(np.abs(euler_to_matrix(e) - R)) < 1e-6


def test_wrap_angle():
    assert np.isclose(wrap_angle(np.pi - 0.1 + 0.3), -np.pi + 0.2)
    assert np.isclose(wrap_angle(-3 * np.pi / 2), np.pi / 2)
    w = wrap_angle(np.linspace(-20, 20, 1001))
    assert np.all((w >= -np.pi) & (w <= np.pi))


@given(euler)
def test_rotation_is_proper_orthogonal(e):
    R = euler_to_matrix(e)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@given(euler)
def test_round_trip_reproduces_matrix(e):
    R = euler_to_matrix(e)
    assert np.max(np.abs(euler_to_matrix(matrix_to_euler(R)) - R)) < 1e-9


@given(st.lists(euler, min_size=1, max_size=5))
def test_batch_matches_single(es):
    E = np.array(es)
    B = euler_to_matrix_batch(E)
    for i, e in enumerate(E):
        assert np.max(np.abs(B[i] - euler_to_matrix(e))) < 1e-15


@given(motions)
def test_motion_invariants(a):
    assert np.all(np.abs(a.euler) <= np.pi)
    assert np.max(np.abs(a.rotation - euler_to_matrix(a.euler))) <= 1e-12


def test_identity_and_pure_translation(rng):
    P = rng.normal(size=(50, 3))
    s = RegistrationState.from_points(P, P)
    assert np.max(np.abs(apply_motion(s, RigidMotion.identity()).source.points - P)) <= 1e-15
    moved = apply_motion(s, RigidMotion([0, 0, 0], [1, 0, 0])).source.points
    assert np.array_equal(moved, P + [1.0, 0.0, 0.0])


@given(motions, motions)
def test_sequential_application_equals_composition(a1, a2):
    P = np.random.default_rng(0).normal(size=(20, 3))
    s = RegistrationState.from_points(P, P)
    two = apply_motion(apply_motion(s, a1), a2).source.points
    one = apply_motion(s, compose(a2, a1)).source.points
    assert np.max(np.abs(two - one)) < 1e-9


@given(motions)
def test_compose_with_identity_and_inverse(a):
    c = compose(RigidMotion.identity(), a)
    assert np.max(np.abs(c.rotation - a.rotation)) < 1e-12
    assert np.max(np.abs(c.translation - a.translation)) < 1e-12
    ident = compose(a, inverse(a))
    assert np.max(np.abs(ident.rotation - np.eye(3))) < 1e-9
    assert np.max(np.abs(ident.translation)) < 1e-9


def test_two_eighth_turns_make_a_quarter_turn():
    q = RigidMotion([0, 0, np.pi / 4], [0, 0, 0])
    c = compose(q, q)
    assert np.allclose(c.euler, [0, 0, np.pi / 2], atol=1e-12)


@given(motions, motions, motions)
def test_compose_is_associative(a, b, c):
    left = compose(compose(a, b), c)
    right = compose(a, compose(b, c))
    assert np.max(np.abs(left.rotation - right.rotation)) < 1e-9
    assert np.max(np.abs(left.translation - right.translation)) < 1e-9


@given(motions)
def test_motion_preserves_distances(a):
    P = np.random.default_rng(1).normal(size=(30, 3))
    Q = a.transform(P)
    D0 = np.linalg.norm(P[:, None] - P[None], axis=2)
    D1 = np.linalg.norm(Q[:, None] - Q[None], axis=2)
    assert np.max(np.abs(D0 - D1)) < 1e-9


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 2)))


def test_normalization_round_trip(rng):
    c = PointCloud(rng.normal(size=(100, 3)) * 7 + 3)
    n = c.normalized()
    assert np.isclose(n.radius(), 1.0)
    assert np.allclose(n.centroid, 0.0, atol=1e-12)
    again = n.normalization.apply(n.normalization.invert(n.points))
    assert np.max(np.abs(again - n.points)) <= 1e-12
    assert np.max(np.abs(n.denormalized().points - c.points)) <= 1e-12


def test_normalization_rejects_bad_scale():
    with pytest.raises(ValueError):
        Normalization(np.zeros(3), 0.0)
