import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from handflow import geometry, metrics
from handflow.metrics import (
    EmptyTrajectory,
    MetricReport,
    NotEnoughSamples,
    ade,
    best_of_k,
    contact_distance,
    dtw,
    dtw_from_cost,
    fde,
    rot_error,
    traj_warp_distance,
    waypoint_loc_time_rot,
)
from handflow.trajectory import (
    BiHandState,
    Pose6DoF,
    Waypoint,
    WaypointKind,
    WaypointSet,
)

IDENT6 = np.array([1.0, 0, 0, 0, 1.0, 0])


def make_traj(positions_left, positions_right=None, rotations=None, valid=None):
    """Build a state list from per-step left/right positions (and options)."""
    n = len(positions_left)
    positions_right = positions_right if positions_right is not None else positions_left
    out = []
    for i in range(n):
        rot = IDENT6 if rotations is None else rotations[i]
        lv, rv = (True, True) if valid is None else valid[i]
        out.append(
            BiHandState(
                timestamp=0.1 * (i + 1),
                left=Pose6DoF(positions_left[i], rot),
                right=Pose6DoF(positions_right[i], rot),
                left_valid=lv,
                right_valid=rv,
            )
        )
    return out


def brute_force_dtw(cost):
    """Exhaustively enumerate all monotone warping paths (oracle for small n, m)."""
    n, m = cost.shape
    best = [np.inf]

    def walk(i, j, acc, length):
        acc = acc + cost[i, j]  # same left-fold order as the DP
        length += 1
        if i == n - 1 and j == m - 1:
            value = acc / length
            if value < best[0]:
                best[0] = value
            return
        if i + 1 < n:
            walk(i + 1, j, acc, length)
        if j + 1 < m:
            walk(i, j + 1, acc, length)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc, length)

    walk(0, 0, 0.0, 0)
    return best[0]


def test_ade_zero_at_equality():
    rng = np.random.default_rng(0)
    t = make_traj(rng.normal(size=(8, 3)))
    assert ade(t, t) == 0.0


def test_ade_hand_average_of_offset():
    gt = make_traj(np.zeros((5, 3)))
    pred = make_traj(np.full((5, 3), [0.05, 0, 0]), positions_right=np.zeros((5, 3)))
    assert abs(ade(pred, gt) - 0.025) < 1e-12


def test_ade_single_step_one_valid_hand():
    gt = make_traj(np.zeros((1, 3)), valid=[(True, False)])
    pred = make_traj(np.array([[0.3, 0.4, 0.0]]), positions_right=np.zeros((1, 3)))
    assert abs(ade(pred, gt) - 0.5) < 1e-12


def test_ade_empty_raises():
    with pytest.raises(EmptyTrajectory):
        ade([], [])


def test_ade_positive_unless_equal():
    rng = np.random.default_rng(1)
    gt = make_traj(rng.normal(size=(6, 3)))
    pred = make_traj(rng.normal(size=(6, 3)))
    assert ade(pred, gt) > 0


def test_fde_final_step_only():
    gt = make_traj(np.zeros((10, 3)))
    ramp = np.zeros((10, 3))
    ramp[:, 0] = np.linspace(0, 0.2, 10)
    pred = make_traj(ramp)
    assert abs(fde(pred, gt) - 0.2) < 1e-12
    assert abs(ade(pred, gt) - np.mean(np.linspace(0, 0.2, 10))) < 1e-12


def test_fde_uniform_final_error():
    gt = make_traj(np.zeros((4, 3)))
    off = np.zeros((4, 3))
    off[-1] = [0.1, 0, 0]
    pred = make_traj(off)
    assert abs(fde(pred, gt) - 0.1) < 1e-12


def test_rot_error_zero_and_constant_offset():
    rng = np.random.default_rng(2)
    t = make_traj(rng.normal(size=(5, 3)))
    assert rot_error(t, t) < 1e-9
    r30 = geometry.matrix_to_rot6d(geometry.rotation_about_axis([0, 0, 1], 30.0))
    pred = make_traj(np.zeros((5, 3)), rotations=[r30] * 5)
    gt = make_traj(np.zeros((5, 3)))
    assert abs(rot_error(pred, gt) - 30.0) < 1e-9


def test_rot_error_half_exact_half_off():
    r90 = geometry.matrix_to_rot6d(geometry.rotation_about_axis([1, 0, 0], 90.0))
    rotations = [IDENT6, IDENT6, r90, r90]
    pred = make_traj(np.zeros((4, 3)), rotations=rotations)
    gt = make_traj(np.zeros((4, 3)))
    assert abs(rot_error(pred, gt) - 45.0) < 1e-9


def test_dtw_zero_and_time_stretch():
    rng = np.random.default_rng(3)
    pos = rng.normal(size=(6, 3))
    t = make_traj(pos)
    assert dtw(t, t) == 0.0
    stretched = make_traj(np.repeat(pos, 2, axis=0))
    assert dtw(stretched, t) == 0.0


def test_dtw_symmetry_equal_lengths():
    rng = np.random.default_rng(4)
    a = make_traj(rng.normal(size=(5, 3)))
    b = make_traj(rng.normal(size=(5, 3)))
    assert abs(dtw(a, b) - dtw(b, a)) < 1e-15


def test_dtw_matches_brute_force_exactly():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n, m = rng.integers(1, 7, size=2)
        cost = rng.uniform(0.0, 2.0, size=(int(n), int(m)))
        assert dtw_from_cost(cost) == brute_force_dtw(cost)


def test_dtw_hand_chosen_3x3():
    cost = np.array([[1.0, 9.0, 9.0], [9.0, 0.5, 9.0], [9.0, 9.0, 0.25]])
    assert dtw_from_cost(cost) == brute_force_dtw(cost)
    assert abs(dtw_from_cost(cost) - (1.0 + 0.5 + 0.25) / 3.0) < 1e-12


def test_best_of_k_deterministic_identical_rows():
    rng = np.random.default_rng(6)
    gt = make_traj(rng.normal(size=(6, 3)))
    pred = make_traj(rng.normal(size=(6, 3)))
    rows = {k: best_of_k([pred] * 10, gt, k) for k in (1, 5, 10)}
    assert rows[1] == rows[5] == rows[10]


def test_best_of_k_monotone():
    rng = np.random.default_rng(7)
    gt = make_traj(rng.normal(size=(6, 3)))
    preds = [make_traj(rng.normal(size=(6, 3))) for _ in range(10)]
    r1, r5, r10 = (best_of_k(preds, gt, k) for k in (1, 5, 10))
    for name in ("ade", "fde", "dtw", "rot"):
        assert r10[name] <= r5[name] <= r1[name]


def test_best_of_k_k1_equals_first():
    rng = np.random.default_rng(8)
    gt = make_traj(rng.normal(size=(6, 3)))
    preds = [make_traj(rng.normal(size=(6, 3))) for _ in range(3)]
    row = best_of_k(preds, gt, 1)
    assert row["ade"] == ade(preds[0], gt)


def test_best_of_k_not_enough_samples():
    rng = np.random.default_rng(9)
    gt = make_traj(rng.normal(size=(4, 3)))
    with pytest.raises(NotEnoughSamples):
        best_of_k([gt], gt, 5)


def test_prediction_truncated_to_gt_horizon():
    rng = np.random.default_rng(10)
    pos = rng.normal(size=(4, 3))
    gt = make_traj(pos)
    pred = make_traj(np.concatenate([pos, rng.normal(size=(3, 3))]))
    assert ade(pred, gt) == 0.0


def _waypoint(kind, t, left_pos, right_pos=None, rot=None, visible=(True, True)):
    rot = IDENT6 if rot is None else rot
    right_pos = left_pos if right_pos is None else right_pos
    return Waypoint(
        kind,
        t,
        Pose6DoF(left_pos, rot),
        Pose6DoF(right_pos, rot),
        left_visible=visible[0],
        right_visible=visible[1],
    )


def _sample_with_contact(contact_wp):
    import dataclasses as dc

    from test_trajectory import make_sample

    rng = np.random.default_rng(11)
    s = make_sample(rng)
    return dc.replace(
        s,
        waypoints=WaypointSet(
            start=s.waypoints.start, contact=contact_wp, end=s.waypoints.end
        ),
    )


def test_contact_distance_zero_and_offset():
    gt_wp = _waypoint(WaypointKind.CONTACT, 0.5, np.array([0.1, 0.2, 0.5]))
    sample = _sample_with_contact(gt_wp)
    assert contact_distance(gt_wp, sample) == 0.0
    pred = _waypoint(WaypointKind.CONTACT, 0.5, np.array([0.1, 0.2, 0.6]))
    assert abs(contact_distance(pred, sample) - 0.1) < 1e-12


def test_contact_distance_masks_invisible_hand():
    gt_wp = _waypoint(
        WaypointKind.CONTACT,
        0.5,
        np.array([0.0, 0.0, 0.5]),
        right_pos=np.array([1.0, 0.0, 0.5]),
        visible=(True, False),
    )
    sample = _sample_with_contact(gt_wp)
    pred = _waypoint(
        WaypointKind.CONTACT,
        0.5,
        np.array([0.0, 0.0, 0.7]),
        right_pos=np.array([9.0, 9.0, 9.0]),
    )
    assert abs(contact_distance(pred, sample) - 0.2) < 1e-12


def test_traj_warp_distance():
    line = np.zeros((6, 3))
    line[:, 0] = np.linspace(0, 1, 6)
    gt = make_traj(line)
    on_gt = [
        _waypoint(WaypointKind.CONTACT, 0.2, line[1]),
        _waypoint(WaypointKind.END, 0.5, line[4]),
    ]
    assert traj_warp_distance(on_gt, gt) == 0.0
    off = [_waypoint(WaypointKind.CONTACT, 0.2, line[2] + [0, 0.2, 0])]
    assert abs(traj_warp_distance(off, gt) - 0.2) < 1e-12
    two = [
        _waypoint(WaypointKind.CONTACT, 0.2, line[2] + [0, 0.1, 0]),
        _waypoint(WaypointKind.END, 0.5, line[4] + [0, 0.3, 0]),
    ]
    assert abs(traj_warp_distance(two, gt) - 0.2) < 1e-12


def test_waypoint_loc_time_rot():
    r10 = geometry.matrix_to_rot6d(geometry.rotation_about_axis([0, 1, 0], 10.0))
    gt = WaypointSet(
        start=_waypoint(WaypointKind.START, 0.0, np.zeros(3)),
        contact=_waypoint(WaypointKind.CONTACT, 1.0, np.array([0.1, 0, 0.5])),
        end=_waypoint(WaypointKind.END, 2.0, np.array([0.2, 0, 0.5])),
    )
    loc, time, rot = waypoint_loc_time_rot(gt, gt)
    assert loc == 0.0 and time == 0.0 and rot < 1e-9

    pred = WaypointSet(
        start=gt.start,
        contact=_waypoint(WaypointKind.CONTACT, 1.4, np.array([0.1, 0, 0.5]), rot=r10),
        end=_waypoint(WaypointKind.END, 2.0, np.array([0.2, 0, 0.5]), rot=r10),
    )
    loc, time, rot = waypoint_loc_time_rot(pred, gt)
    assert abs(time - 0.2) < 1e-12
    assert abs(rot - 10.0) < 1e-9


def test_metric_report_serialization_order():
    report = MetricReport(
        values={m: {1: 0.3, 5: 0.2, 10: 0.1} for m in ("ade", "fde", "dtw", "rot")},
        n_samples=7,
    )
    lines = report.to_csv().strip().splitlines()
    assert lines[0] == "metric,K,value,n_samples"
    assert [l.split(",")[0] for l in lines[1:]] == ["ade"] * 3 + ["fde"] * 3 + ["dtw"] * 3 + ["rot"] * 3
    assert "dtw_normalization" in report.to_json()
