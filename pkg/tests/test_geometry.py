import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation as ScipyRotation

from handflow import geometry
from handflow.geometry import (
    BehindCamera,
    CameraIntrinsics,
    DegenerateRotation,
    InvalidRotation,
    RigidTransform,
)
from handflow.trajectory import BiHandState, Pose6DoF


def random_rotation(rng):
    return ScipyRotation.random(random_state=rng).as_matrix()


def test_rot6d_identity_basis():
    m = geometry.rot6d_to_matrix([1, 0, 0, 0, 1, 0])
    np.testing.assert_allclose(m, np.eye(3), atol=1e-12)


def test_rot6d_scale_invariance_canonical():
    m = geometry.rot6d_to_matrix([2, 0, 0, 0, 3, 0])
    np.testing.assert_allclose(m, np.eye(3), atol=1e-12)


def test_rot6d_gram_schmidt_by_hand():
    # columns: (0,1,0) normalized; (-1,0,0) is already orthogonal; cross = (0,0,1)
    m = geometry.rot6d_to_matrix([0, 1, 0, -1, 0, 0])
    expected = geometry.rotation_about_axis([0, 0, 1], 90.0)
    np.testing.assert_allclose(m, expected, atol=1e-12)


@pytest.mark.parametrize(
    "bad",
    [
        [0, 0, 0, 0, 1, 0],  # zero first column
        [1, 0, 0, 2, 0, 0],  # parallel columns
        [1, 0, 0, 1e-9, 1e-10, 0],  # near-parallel
    ],
)
def test_rot6d_degenerate_raises(bad):
    with pytest.raises(DegenerateRotation):
        geometry.rot6d_to_matrix(bad)


def test_matrix_to_rot6d_identity():
    np.testing.assert_allclose(
        geometry.matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0], atol=0
    )


def test_matrix_to_rot6d_rejects_invalid():
    with pytest.raises(InvalidRotation):
        geometry.matrix_to_rot6d(np.eye(3) * 1.001)


def test_round_trip_random_rotations():
    rng = np.random.default_rng(0)
    mats = np.stack([random_rotation(rng) for _ in range(200)])
    rec = geometry.rot6d_to_matrix(geometry.matrix_to_rot6d(mats))
    assert np.max(np.abs(rec - mats)) < 1e-9


def test_rot6d_matrix_invariants_on_random_6d():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(500, 6))
    m = geometry.rot6d_to_matrix(a)
    gram = np.swapaxes(m, -1, -2) @ m
    assert np.max(np.abs(gram - np.eye(3))) < 1e-9
    assert np.max(np.abs(np.linalg.det(m) - 1.0)) < 1e-9


@given(
    st.floats(min_value=0.01, max_value=100.0),
    st.floats(min_value=0.01, max_value=100.0),
    st.integers(min_value=0, max_value=2**32 - 1),
)
@settings(max_examples=50, deadline=None)
def test_rot6d_scale_invariance_property(s1, s2, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=6)
    scaled = np.concatenate([s1 * a[:3], s2 * a[3:]])
    np.testing.assert_allclose(
        geometry.rot6d_to_matrix(a), geometry.rot6d_to_matrix(scaled), atol=1e-9
    )


def test_geodesic_zero_at_equality():
    rng = np.random.default_rng(2)
    for _ in range(20):
        r = random_rotation(rng)
        assert geometry.geodesic_degrees(r, r) < 1e-9


def test_geodesic_canonical_angles():
    rz90 = geometry.rotation_about_axis([0, 0, 1], 90.0)
    rx180 = geometry.rotation_about_axis([1, 0, 0], 180.0)
    assert abs(geometry.geodesic_degrees(np.eye(3), rz90) - 90.0) < 1e-9
    assert abs(geometry.geodesic_degrees(np.eye(3), rx180) - 180.0) < 1e-9


def test_geodesic_symmetric_and_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(50):
        r1, r2 = random_rotation(rng), random_rotation(rng)
        ours = geometry.geodesic_degrees(r1, r2)
        assert abs(ours - geometry.geodesic_degrees(r2, r1)) < 1e-9
        ref = np.degrees(
            (ScipyRotation.from_matrix(r1).inv() * ScipyRotation.from_matrix(r2)).magnitude()
        )
        assert abs(ours - ref) < 1e-8


def test_geodesic_triangle_inequality():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a, b, c = (random_rotation(rng) for _ in range(3))
        ab = geometry.geodesic_degrees(a, b)
        bc = geometry.geodesic_degrees(b, c)
        ac = geometry.geodesic_degrees(a, c)
        assert ac <= ab + bc + 1e-6


def _random_state(rng, t=0.0):
    return BiHandState(
        timestamp=t,
        left=Pose6DoF(rng.normal(size=3), geometry.matrix_to_rot6d(random_rotation(rng))),
        right=Pose6DoF(rng.normal(size=3), geometry.matrix_to_rot6d(random_rotation(rng))),
    )


def test_reanchor_identity_noop():
    rng = np.random.default_rng(5)
    states = [_random_state(rng, 0.1 * i) for i in range(4)]
    out = geometry.reanchor(states, RigidTransform.identity())
    for a, b in zip(states, out):
        np.testing.assert_allclose(a.left.position, b.left.position, atol=1e-12)
        np.testing.assert_allclose(a.right.rotation, b.right.rotation, atol=1e-12)


def test_reanchor_pure_translation():
    rng = np.random.default_rng(6)
    states = [_random_state(rng)]
    t = np.array([0.5, -1.0, 2.0])
    out = geometry.reanchor(states, RigidTransform(np.eye(3), t))
    np.testing.assert_allclose(out[0].left.position, states[0].left.position + t, atol=1e-12)
    np.testing.assert_allclose(out[0].left.rotation, states[0].left.rotation, atol=1e-12)


def test_reanchor_inverse_round_trip():
    rng = np.random.default_rng(7)
    states = [_random_state(rng, 0.1 * i) for i in range(5)]
    anchor = RigidTransform(random_rotation(rng), rng.normal(size=3))
    back = geometry.reanchor(geometry.reanchor(states, anchor), anchor.inverse())
    for a, b in zip(states, back):
        np.testing.assert_allclose(a.left.position, b.left.position, atol=1e-9)
        np.testing.assert_allclose(a.right.position, b.right.position, atol=1e-9)
        np.testing.assert_allclose(a.left.rotation, b.left.rotation, atol=1e-9)


def test_reanchor_preserves_inter_hand_distance_and_geodesics():
    rng = np.random.default_rng(8)
    states = [_random_state(rng, 0.1 * i) for i in range(5)]
    anchor = RigidTransform(random_rotation(rng), rng.normal(size=3))
    out = geometry.reanchor(states, anchor)
    for a, b in zip(states, out):
        da = np.linalg.norm(a.left.position - a.right.position)
        db = np.linalg.norm(b.left.position - b.right.position)
        assert abs(da - db) < 1e-9
    for a2, b2 in zip(states[1:], out[1:]):
        ga = geometry.geodesic_degrees(
            geometry.rot6d_to_matrix(states[0].left.rotation),
            geometry.rot6d_to_matrix(a2.left.rotation),
        )
        gb = geometry.geodesic_degrees(
            geometry.rot6d_to_matrix(out[0].left.rotation),
            geometry.rot6d_to_matrix(b2.left.rotation),
        )
        assert abs(ga - gb) < 1e-9


def test_rigid_transform_associativity_and_inverse():
    rng = np.random.default_rng(9)
    a, b, c = (
        RigidTransform(random_rotation(rng), rng.normal(size=3)) for _ in range(3)
    )
    p = rng.normal(size=(10, 3))
    left = a.compose(b).compose(c).apply(p)
    right = a.compose(b.compose(c)).apply(p)
    np.testing.assert_allclose(left, right, atol=1e-9)
    ident = a.compose(a.inverse())
    np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(ident.translation, 0.0, atol=1e-9)


CAM = CameraIntrinsics(fx=100.0, fy=100.0, cx=320.0, cy=240.0, width=640, height=480)


def test_project_principal_point():
    np.testing.assert_allclose(geometry.project([0, 0, 1.0], CAM), [320.0, 240.0])


def test_project_known_offset():
    uv = geometry.project([1.0, 0, 2.0], CAM)
    assert abs(uv[0] - 370.0) < 1e-12  # 100 * (1/2) + 320


def test_project_behind_camera():
    with pytest.raises(BehindCamera):
        geometry.project([0, 0, -1.0], CAM)


def test_camera_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1, fy=1, cx=20, cy=0, width=10, height=10)


def test_slerp_matrices_midpoint():
    r0 = np.eye(3)
    r1 = geometry.rotation_about_axis([0, 0, 1], 90.0)
    mid = geometry.slerp_matrices(r0, r1, 0.5)
    np.testing.assert_allclose(
        mid, geometry.rotation_about_axis([0, 0, 1], 45.0), atol=1e-9
    )


def test_log_exp_round_trip_including_near_pi():
    rng = np.random.default_rng(10)
    mats = [random_rotation(rng) for _ in range(50)]
    mats.append(geometry.rotation_about_axis([1, 0, 0], 180.0))
    mats.append(geometry.rotation_about_axis([0.3, -0.5, 0.8], 179.9999))
    for m in mats:
        rec = geometry.exp_rotation(geometry.log_rotation(m))
        np.testing.assert_allclose(rec, m, atol=1e-6)
